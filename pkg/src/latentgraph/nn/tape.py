"""Reverse-mode differentiation over 2-D arrays with an explicit tape.

Each op computes its forward value immediately and, when any input needs a
gradient, appends a closure that pushes the output gradient back to the
inputs. ``Tape.backward`` replays the closures in reverse order.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from . import losses


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        value = np.asarray(value)
        if value.ndim != 2:
            raise ShapeError(f"tensor {name or '?'}: expected 2-D array, got shape {value.shape}")
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, delta: np.ndarray) -> None:
        # Gradients are never modified in place, so arrays shared between parents are safe to keep.
        delta = np.asarray(delta).astype(self.value.dtype, copy=False)
        self.grad = delta if self.grad is None else self.grad + delta

    def __repr__(self):
        return f"Tensor({self.name or ''}{self.shape}, requires_grad={self.requires_grad})"


def _label(t: Tensor) -> str:
    return f"{t.name or 'tensor'}{t.shape}"


class Tape:
    def __init__(self, check_finite: bool = True):
        self._records: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self.check_finite = check_finite

    def __len__(self):
        return len(self._records)

    def _emit(self, op: str, value: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
        # A finite sum proves every entry finite; the full scan only runs to rule out an overflowing sum.
        if self.check_finite and not np.isfinite(value.sum()) and not np.all(np.isfinite(value)):
            raise FloatingPointError(f"{op}: non-finite output")
        out = Tensor(value, requires_grad=any(p.requires_grad for p in parents), name=op)
        if out.requires_grad:
            self._records.append((out, backward))
        return out

    def backward(self, loss: Tensor, seed: float = 1.0) -> None:
        if loss.shape != (1, 1):
            raise ShapeError(f"backward expects a 1x1 loss, got {_label(loss)}")
        loss.grad = np.full((1, 1), seed, dtype=loss.value.dtype)
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)
        self._records.clear()

    # -- primitives -----------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {_label(a)} @ {_label(b)}")

        def back(g):
            if a.requires_grad:
                a._accumulate(g @ b.value.T)
            if b.requires_grad:
                b._accumulate(a.value.T @ g)

        return self._emit("matmul", a.value @ b.value, (a, b), back)

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        """Elementwise sum; ``b`` may also be a single row broadcast over ``a``."""
        row_bcast = b.shape[0] == 1 and a.shape[0] != 1
        if a.shape != b.shape and not (row_bcast and b.shape[1] == a.shape[1]):
            raise ShapeError(f"add: {_label(a)} + {_label(b)}")

        def back(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0, keepdims=True) if row_bcast else g)

        return self._emit("add", a.value + b.value, (a, b), back)

    def add_n(self, *terms: Tensor) -> Tensor:
        """Sum of same-shape tensors in one record; single-row terms broadcast over the rows."""
        rows = max(t.shape[0] for t in terms)
        for t in terms:
            if t.shape[1] != terms[0].shape[1] or t.shape[0] not in (1, rows):
                raise ShapeError(f"add_n: {', '.join(_label(x) for x in terms)}")
        value = terms[0].value.copy() if terms[0].shape[0] == rows else np.repeat(terms[0].value, rows, axis=0)
        for t in terms[1:]:
            value += t.value

        def back(g):
            for t in terms:
                if t.requires_grad:
                    t._accumulate(g.sum(axis=0, keepdims=True) if t.shape[0] != rows else g)

        return self._emit("add_n", value, terms, back)

    def linear(self, x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
        """``x @ w + b`` as one record; ``b`` is a single row."""
        if b is None:
            return self.matmul(x, w)
        if x.shape[1] != w.shape[0] or b.shape != (1, w.shape[1]):
            raise ShapeError(f"linear: {_label(x)} @ {_label(w)} + {_label(b)}")

        def back(g):
            if x.requires_grad:
                x._accumulate(g @ w.value.T)
            if w.requires_grad:
                w._accumulate(x.value.T @ g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0, keepdims=True))

        value = x.value @ w.value
        value += b.value
        return self._emit("linear", value, (x, w, b), back)

    def relu(self, a: Tensor) -> Tensor:
        mask = a.value > 0

        def back(g):
            a._accumulate(g * mask)

        return self._emit("relu", np.maximum(a.value, 0), (a,), back)

    def dropout(self, a: Tensor, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
        """Inverted dropout; the identity when not training or ``p == 0``."""
        if not training or p == 0.0:
            return a
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {p}")
        mask = (rng.random(a.shape) >= p).astype(a.value.dtype) / a.value.dtype.type(1.0 - p)

        def back(g):
            a._accumulate(g * mask)

        return self._emit("dropout", a.value * mask, (a,), back)

    def concat_cols(self, parts: Sequence[Tensor]) -> Tensor:
        rows = {p.shape[0] for p in parts}
        if len(rows) != 1:
            raise ShapeError("concat_cols: row mismatch " + ", ".join(_label(p) for p in parts))
        bounds = np.cumsum([0] + [p.shape[1] for p in parts])

        def back(g):
            for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
                if p.requires_grad:
                    p._accumulate(g[:, lo:hi])

        return self._emit("concat_cols", np.concatenate([p.value for p in parts], axis=1), parts, back)

    def slice_cols(self, a: Tensor, start: int, stop: int) -> Tensor:
        if not 0 <= start <= stop <= a.shape[1]:
            raise ShapeError(f"slice_cols: [{start}:{stop}] outside {_label(a)}")

        def back(g):
            full = np.zeros_like(a.value)
            full[:, start:stop] = g
            a._accumulate(full)

        return self._emit("slice_cols", a.value[:, start:stop], (a,), back)

    def slice_rows(self, a: Tensor, start: int, stop: int) -> Tensor:
        if not 0 <= start <= stop <= a.shape[0]:
            raise ShapeError(f"slice_rows: [{start}:{stop}] outside {_label(a)}")

        def back(g):
            full = np.zeros_like(a.value)
            full[start:stop] = g
            a._accumulate(full)

        return self._emit("slice_rows", a.value[start:stop], (a,), back)

    def mean_rows(self, a: Tensor) -> Tensor:
        n = a.shape[0]

        def back(g):
            a._accumulate(np.broadcast_to(g / n, a.shape))

        return self._emit("mean_rows", a.value.mean(axis=0, keepdims=True), (a,), back)

    def spmm(self, A: sp.spmatrix, x: Tensor) -> Tensor:
        """Constant sparse matrix times ``x``; covers gather, scatter-mean and pooling."""
        if A.shape[1] != x.shape[0]:
            raise ShapeError(f"spmm: sparse{A.shape} @ {_label(x)}")

        def back(g):
            x._accumulate(np.asarray(A.T @ g))

        return self._emit("spmm", np.asarray(A @ x.value), (x,), back)

    def scale_rows(self, a: Tensor, s: np.ndarray) -> Tensor:
        s = np.asarray(s, dtype=a.value.dtype).reshape(-1, 1)
        if s.shape[0] != a.shape[0]:
            raise ShapeError(f"scale_rows: {s.shape[0]} factors for {_label(a)}")

        def back(g):
            a._accumulate(g * s)

        return self._emit("scale_rows", a.value * s, (a,), back)

    def take_rows(self, a: Tensor, idx) -> Tensor:
        idx = np.asarray(idx, dtype=np.int64)

        def back(g):
            full = np.zeros_like(a.value)
            np.add.at(full, idx, g)
            a._accumulate(full)

        return self._emit("take_rows", a.value[idx], (a,), back)

    # -- losses -----------------------------------------------------------

    def bce_with_logits(self, logits: Tensor, targets: np.ndarray, row_weights: np.ndarray | None = None) -> Tensor:
        loss, grad = losses.bce_with_logits(logits.value, targets, row_weights)

        def back(g):
            logits._accumulate(g[0, 0] * grad)

        return self._emit("bce_with_logits", np.full((1, 1), loss, dtype=logits.value.dtype), (logits,), back)

    def softmax_cross_entropy(self, logits: Tensor, class_ids: np.ndarray,
                              row_weights: np.ndarray | None = None) -> Tensor:
        loss, grad = losses.softmax_cross_entropy(logits.value, class_ids, row_weights)

        def back(g):
            logits._accumulate(g[0, 0] * grad)

        return self._emit("softmax_cross_entropy", np.full((1, 1), loss, dtype=logits.value.dtype), (logits,), back)
