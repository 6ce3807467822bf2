"""Named parameters, Adam, gradient clipping and checkpoint files."""

from __future__ import annotations

import json
import math
from typing import IO

import numpy as np

from .tape import ShapeError, Tensor

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class ParamStore:
    """Ordered named parameters with gradient and Adam moment buffers."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=self.dtype)
        if value.ndim == 1:
            value = value[None, :]
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self):
        return len(self.params)

    @property
    def num_values(self) -> int:
        return sum(t.value.size for t in self.params.values())

    def shapes(self) -> dict[str, tuple[int, int]]:
        return {k: t.shape for k, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grad_norm(self) -> float:
        return math.sqrt(sum(float(np.sum(np.square(t.grad, dtype=np.float64)))
                             for t in self.params.values() if t.grad is not None))

    def clip_grad_norm(self, max_norm: float) -> float:
        norm = self.grad_norm()
        if max_norm and norm > max_norm:
            scale = self.dtype.type(max_norm / (norm + 1e-12))
            for t in self.params.values():
                if t.grad is not None:
                    t.grad = t.grad * scale
        return norm

    def scale_grads(self, factor: float) -> None:
        for t in self.params.values():
            if t.grad is not None:
                t.grad = t.grad * self.dtype.type(factor)

    def copy(self, dtype=None) -> "ParamStore":
        out = ParamStore(self.dtype if dtype is None else dtype)
        for k, t in self.params.items():
            out.add(k, t.value)
            out.m[k] = self.m[k].astype(out.dtype)
            out.v[k] = self.v[k].astype(out.dtype)
        out.step = self.step
        return out

    def values_equal(self, other: "ParamStore") -> bool:
        return self.shapes() == other.shapes() and all(
            np.array_equal(t.value, other.params[k].value) for k, t in self.params.items())

    # -- serialization --------------------------------------------------

    def state_dict(self, include_optimizer: bool = True) -> dict:
        def pack(a):
            return {"shape": list(a.shape), "values": a.astype(np.float64).ravel().tolist()}

        state = {"dtype": self.dtype.name, "tensors": {k: pack(t.value) for k, t in self.params.items()}}
        if include_optimizer:
            state["adam"] = {"step": self.step, "m": {k: pack(a) for k, a in self.m.items()},
                             "v": {k: pack(a) for k, a in self.v.items()}}
        return state

    @classmethod
    def from_state_dict(cls, state: dict, expected_shapes: dict | None = None) -> "ParamStore":
        store = cls(state.get("dtype", "float32"))

        def unpack(rec):
            return np.array(rec["values"], dtype=store.dtype).reshape(rec["shape"])

        for k, rec in state["tensors"].items():
            store.add(k, unpack(rec))
        if expected_shapes is not None:
            got = store.shapes()
            want = {k: tuple(v) for k, v in expected_shapes.items()}
            if got != want:
                missing = sorted(set(want) - set(got))
                extra = sorted(set(got) - set(want))
                wrong = sorted(k for k in set(got) & set(want) if got[k] != want[k])
                raise CheckpointError(f"checkpoint does not match architecture: missing={missing} "
                                      f"unexpected={extra} wrong_shape={wrong}")
        adam = state.get("adam")
        if adam:
            store.step = int(adam["step"])
            for k in store.params:
                store.m[k] = unpack(adam["m"][k])
                store.v[k] = unpack(adam["v"][k])
        return store


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, dtype=np.float32) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              t: int | None = None) -> None:
    """Bias-corrected Adam update of every parameter with a gradient; grads are zeroed after."""
    store.step = store.step + 1 if t is None else t
    step = store.step
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for k, p in store.params.items():
        g = p.grad
        if g is None:
            continue
        m, v = store.m[k], store.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        update = (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(store.dtype)
        p.value = p.value - update
        p.grad = None


def save_checkpoint(sink: IO[str], store: ParamStore, config: dict | None = None, extra: dict | None = None,
                    include_optimizer: bool = True) -> None:
    doc = {"version": CHECKPOINT_VERSION, "config": config or {}, "state": store.state_dict(include_optimizer),
           "extra": extra or {}}
    json.dump(doc, sink, separators=(",", ":"))


def load_checkpoint(stream: IO[str], expected_shapes: dict | None = None) -> tuple[ParamStore, dict, dict]:
    try:
        doc = json.load(stream)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"truncated or malformed checkpoint: {exc.msg}") from exc
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        store = ParamStore.from_state_dict(doc["state"], expected_shapes)
    except (KeyError, ShapeError) as exc:
        raise CheckpointError(f"malformed checkpoint: {exc!r}") from exc
    return store, doc.get("config", {}), doc.get("extra", {})
