import io

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from latentgraph.nn import (
    CheckpointError,
    ParamStore,
    ShapeError,
    Tape,
    Tensor,
    adam_step,
    bce_with_logits,
    glorot,
    gradient_check,
    load_checkpoint,
    relative_error,
    save_checkpoint,
    softmax_cross_entropy,
)


def store_with(rng, **shapes) -> ParamStore:
    s = ParamStore(np.float64)
    for name, shape in shapes.items():
        s.add(name, rng.normal(size=shape))
    return s


def finite_diff(f, x: np.ndarray, step=1e-5) -> np.ndarray:
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        orig = x[i]
        x[i] = orig + step
        up = f()
        x[i] = orig - step
        down = f()
        x[i] = orig
        g[i] = (up - down) / (2 * step)
    return g


class TestPrimitives:
    def test_relu(self):
        tape = Tape()
        x = Tensor(np.array([[-1.0, 2.0]]), requires_grad=True)
        y = tape.relu(x)
        assert y.value.tolist() == [[0.0, 2.0]]
        tape.backward(tape.matmul(y, Tensor(np.ones((2, 1)))))
        assert x.grad.tolist() == [[0.0, 1.0]]

    def test_mean_rows(self):
        assert Tape().mean_rows(Tensor(np.ones((3, 2)))).value.tolist() == [[1.0, 1.0]]

    def test_matmul_gradient(self, rng):
        a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        b = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        c = rng.normal(size=(4, 3))

        def loss_value():
            return float(np.sum((a.value @ b.value) * c))

        tape = Tape()
        out = tape.matmul(a, b)
        loss = _weighted_sum(tape, out, c)
        tape.backward(loss)
        assert relative_error(a.grad, finite_diff(loss_value, a.value)).max() < 1e-6
        assert relative_error(b.grad, finite_diff(loss_value, b.value)).max() < 1e-6

    def test_shape_errors_name_tensors(self):
        tape = Tape()
        with pytest.raises(ShapeError, match="lhs"):
            tape.matmul(Tensor(np.ones((2, 3)), name="lhs"), Tensor(np.ones((2, 3)), name="rhs"))
        with pytest.raises(ShapeError):
            tape.add(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2))))
        with pytest.raises(ShapeError):
            tape.concat_cols([Tensor(np.ones((2, 1))), Tensor(np.ones((3, 1)))])
        with pytest.raises(ShapeError):
            Tensor(np.ones(3))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_guard(self):
        tape = Tape()
        with pytest.raises(FloatingPointError, match="matmul"):
            tape.matmul(Tensor(np.array([[np.inf]])), Tensor(np.array([[0.0]])))

    def test_dropout(self, rng):
        tape = Tape()
        x = Tensor(np.ones((200, 50)), requires_grad=True)
        assert tape.dropout(x, 0.25, rng, training=False) is x
        y = tape.dropout(x, 0.25, rng, training=True)
        kept = y.value != 0
        assert abs(kept.mean() - 0.75) < 0.02
        np.testing.assert_allclose(y.value[kept], 1 / 0.75)

    def test_dropout_deterministic(self):
        a = Tape().dropout(Tensor(np.ones((5, 5))), 0.5, np.random.default_rng(3))
        b = Tape().dropout(Tensor(np.ones((5, 5))), 0.5, np.random.default_rng(3))
        assert np.array_equal(a.value, b.value)

    def test_gradient_accumulates_over_reuse(self, rng):
        tape = Tape()
        x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        y = tape.add(x, x)
        tape.backward(_weighted_sum(tape, y, np.ones((2, 2))))
        np.testing.assert_array_equal(x.grad, np.full((2, 2), 2.0))


def _weighted_sum(tape: Tape, x: Tensor, c: np.ndarray) -> Tensor:
    """sum(x * c) as a 1x1 tensor, built from tape primitives."""
    n, k = x.shape
    rows = tape.scale_rows(tape.matmul(x, Tensor(np.eye(k))), np.ones(n))
    prod = tape.concat_cols([tape.scale_rows(tape.slice_cols(rows, j, j + 1), c[:, j]) for j in range(k)])
    return tape.matmul(tape.matmul(Tensor(np.ones((1, n))), prod), Tensor(np.ones((k, 1))))


OPS = {
    "linear": lambda t, s, x: t.linear(x, s["W"], s["b"]),
    "add": lambda t, s, x: t.add(t.matmul(x, s["W"]), s["b"]),
    "add_n": lambda t, s, x: t.add_n(t.matmul(x, s["W"]), s["b"], t.relu(t.matmul(x, s["W"]))),
    "relu": lambda t, s, x: t.relu(t.linear(x, s["W"], s["b"])),
    "concat": lambda t, s, x: t.concat_cols([x, t.matmul(x, s["W"])]),
    "slice": lambda t, s, x: t.slice_cols(t.matmul(x, s["W"]), 1, 3),
    "slice_rows": lambda t, s, x: t.matmul(x, t.slice_rows(s["W"], 0, 4)),
    "mean_rows": lambda t, s, x: t.mean_rows(t.matmul(x, s["W"])),
    "spmm": lambda t, s, x: t.spmm(sp.csr_matrix(np.array([[1, 0, 2, 0, 0], [0, .5, 0, 0, 1.]])),
                                   t.matmul(x, s["W"])),
    "scale_rows": lambda t, s, x: t.scale_rows(t.matmul(x, s["W"]), np.arange(5.0)),
    "take_rows": lambda t, s, x: t.take_rows(t.matmul(x, s["W"]), [0, 0, 3]),
    "dropout": lambda t, s, x: t.dropout(t.matmul(x, s["W"]), 0.3, np.random.default_rng(5)),
}


class TestOpGradients:
    @pytest.mark.parametrize("op", sorted(OPS))
    def test_each_op(self, op, rng):
        x = Tensor(rng.normal(size=(5, 4)))
        store = store_with(rng, W=(4, 4), b=(1, 4))
        targets = (rng.random((5, 8)) < 0.5).astype(float)

        def model(tape):
            out = OPS[op](tape, store, x)
            return tape.bce_with_logits(out, targets[: out.shape[0], : out.shape[1]])

        report = gradient_check(model, store)
        assert report.passed, report.per_param

    @settings(max_examples=20, deadline=None)
    @given(n=st.integers(1, 6), d=st.integers(1, 5), k=st.integers(1, 4), seed=st.integers(0, 10 ** 6))
    def test_random_shapes(self, n, d, k, seed):
        r = np.random.default_rng(seed)
        store = store_with(r, W1=(d, 6), b1=(1, 6), W2=(6, k))
        x = Tensor(r.normal(size=(n, d)))
        cls = r.integers(0, k, size=n)

        def model(tape):
            h = tape.relu(tape.linear(x, store["W1"], store["b1"]))
            return tape.softmax_cross_entropy(tape.matmul(h, store["W2"]), cls)

        assert gradient_check(model, store).passed

    def test_sign_flip_is_detected(self, rng):
        store = store_with(rng, W=(3, 2), b=(1, 2))
        x = Tensor(rng.normal(size=(4, 3)))
        y = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])

        class FlippedTape(Tape):
            def matmul(self, a, b):
                out = super().matmul(a, b)
                fn = self._records[-1][1]
                self._records[-1] = (out, lambda g: fn(-g))
                return out

        def model(tape):
            return tape.bce_with_logits(tape.add(tape.matmul(x, store["W"]), store["b"]), y)

        assert gradient_check(model, store).passed
        bad = gradient_check(model, store, tape_factory=FlippedTape)
        assert bad.max_rel_error > 0.1 and not bad.passed


class TestLosses:
    def test_bce_symmetry_point(self):
        loss, _ = bce_with_logits(np.zeros((1, 1)), np.ones((1, 1)))
        assert loss == pytest.approx(np.log(2))

    def test_bce_large_logit(self):
        loss, grad = bce_with_logits(np.array([[20.0]]), np.array([[1.0]]))
        assert loss == pytest.approx(2.06e-9, rel=1e-2)
        assert np.isfinite(grad).all()

    def test_bce_finite_on_extreme_logits(self):
        x = np.linspace(-50, 50, 21).reshape(-1, 1)
        for y in (0.0, 1.0):
            loss, grad = bce_with_logits(x, np.full_like(x, y))
            assert np.isfinite(loss) and np.isfinite(grad).all()

    def test_bce_rejects_soft_targets(self):
        with pytest.raises(ValueError):
            bce_with_logits(np.zeros((1, 1)), np.full((1, 1), 0.5))

    def test_bce_gradient(self, rng):
        x = rng.normal(size=(4, 3))
        y = (rng.random((4, 3)) < 0.5).astype(float)
        _, grad = bce_with_logits(x, y)
        num = finite_diff(lambda: bce_with_logits(x, y)[0], x)
        assert relative_error(grad, num).max() < 1e-6

    def test_ce_uniform(self):
        loss, _ = softmax_cross_entropy(np.zeros((1, 7)), [3])
        assert loss == pytest.approx(np.log(7))

    def test_ce_dominant(self):
        x = np.zeros((1, 4))
        x[0, 2] = 20.0
        assert softmax_cross_entropy(x, [2])[0] < 1e-8

    def test_ce_gradient_is_softmax_minus_onehot(self, rng):
        x = rng.normal(size=(3, 5))
        c = np.array([0, 4, 2])
        _, grad = softmax_cross_entropy(x, c)
        p = np.exp(x) / np.exp(x).sum(axis=1, keepdims=True)
        p[np.arange(3), c] -= 1
        np.testing.assert_allclose(grad, p / 3, atol=1e-12)
        num = finite_diff(lambda: softmax_cross_entropy(x, c)[0], x)
        assert relative_error(grad, num).max() < 1e-6

    def test_ce_out_of_range(self):
        with pytest.raises(IndexError):
            softmax_cross_entropy(np.zeros((1, 3)), [3])

    def test_row_weights(self):
        x = np.array([[0.0], [5.0]])
        y = np.array([[1.0], [1.0]])
        full, _ = bce_with_logits(x, y, row_weights=[1.0, 0.0])
        assert full == pytest.approx(np.log(2))


class TestAdam:
    def test_first_step(self):
        store = ParamStore(np.float64)
        p = store.add("p", [[0.0]])
        p.grad = np.array([[1.0]])
        adam_step(store, lr=0.1)
        assert p.value[0, 0] == pytest.approx(-0.1, abs=1e-6)
        assert p.grad is None

    def test_zero_gradient(self):
        store = ParamStore(np.float64)
        p = store.add("p", [[0.5, -1.0]])
        p.grad = np.zeros((1, 2))
        adam_step(store, lr=0.1)
        assert p.value.tolist() == [[0.5, -1.0]]

    def test_deterministic(self, rng):
        def run():
            r = np.random.default_rng(0)
            store = ParamStore()
            store.add("w", glorot(r, 3, 2))
            for _ in range(5):
                store["w"].grad = r.normal(size=(3, 2)).astype(np.float32)
                adam_step(store, 1e-2)
            return store
        assert run().values_equal(run())

    def test_clip(self):
        store = ParamStore(np.float64)
        p = store.add("p", [[0.0, 0.0]])
        p.grad = np.array([[30.0, 40.0]])
        assert store.clip_grad_norm(5.0) == pytest.approx(50.0)
        assert store.grad_norm() == pytest.approx(5.0)

    def test_glorot_bounds(self, rng):
        w = glorot(rng, 10, 6)
        assert np.abs(w).max() <= np.sqrt(6 / 16)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, rng):
        store = ParamStore()
        store.add("a", glorot(rng, 4, 3))
        store.add("b", np.zeros((1, 3)))
        store["a"].grad = np.ones((4, 3), np.float32)
        adam_step(store, 1e-3)
        buf = io.StringIO()
        save_checkpoint(buf, store, {"x": 1}, {"note": "n"})
        buf.seek(0)
        loaded, config, extra = load_checkpoint(buf, store.shapes())
        assert loaded.values_equal(store) and loaded.step == store.step
        assert all(np.array_equal(loaded.m[k], store.m[k]) for k in store)
        assert config == {"x": 1} and extra == {"note": "n"}

    def test_shape_mismatch(self, rng):
        store = ParamStore()
        store.add("a", np.zeros((2, 2)))
        buf = io.StringIO()
        save_checkpoint(buf, store)
        buf.seek(0)
        with pytest.raises(CheckpointError, match="wrong_shape=\\['a'\\]"):
            load_checkpoint(buf, {"a": (3, 2)})

    def test_version(self):
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(io.StringIO('{"version": 7}'))

    def test_truncated(self, rng):
        store = ParamStore()
        store.add("a", np.zeros((2, 2)))
        buf = io.StringIO()
        save_checkpoint(buf, store)
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(io.StringIO(buf.getvalue()[:20]))
