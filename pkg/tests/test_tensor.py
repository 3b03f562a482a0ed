import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dconad import tensor as tn
from dconad.errors import ContractError, DimensionError, DomainError, NumericError
from dconad.fdcheck import numerical_grad, rel_error
from dconad.optim import AdamState, adam_apply
from dconad.tensor import Tape, Tensor

SEEDS = range(20)
TOL = 1e-4


def check_grads(build, shapes, seed, positive=False, tol=TOL):
    """Compare tape gradients of ``sum(build(*inputs) * probe)`` with central differences."""
    rng = np.random.default_rng(seed)
    raw = [rng.uniform(0.1, 1.0, s) if positive else rng.normal(size=s) for s in shapes]
    inputs = [Tensor(a, requires_grad=True) for a in raw]
    with Tape():
        out = build(*inputs)
        probe = rng.normal(size=out.shape)
        loss = tn.sum(tn.mul(out, probe))
        tn.backward(loss)

    def f():
        with tn.no_grad():
            return float(np.sum(build(*[Tensor(a) for a in raw]).data * probe))

    for t, a in zip(inputs, raw):
        err = rel_error(t.grad, numerical_grad(f, a))
        assert err < tol, err


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2], [3, 4]])
        assert np.array_equal(tn.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)

    def test_projector(self):
        out = tn.matmul(Tensor([[1.0, 0], [0, 0]]), Tensor([[5.0], [7]]))
        assert np.array_equal(out.data, [[5.0], [0.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        check_grads(tn.matmul, [(3, 4), (4, 2)], seed)

    def test_batched_weight_broadcast(self):
        check_grads(tn.matmul, [(2, 3, 4), (4, 2)], 0)


class TestSoftmax:
    def test_uniform_row(self):
        assert np.allclose(tn.softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_large_input_is_stable(self):
        out = tn.softmax_rows(Tensor([[1000.0, 0.0]])).data
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0) and out[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_nan_rejected(self):
        with pytest.raises(NumericError):
            tn.softmax_rows(Tensor([[np.nan, 0.0]]))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        check_grads(tn.softmax_rows, [(2, 3)], seed)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)), st.floats(-100, 100))
    def test_rows_sum_to_one_and_shift_invariant(self, a, c):
        s = tn.softmax_rows(Tensor(a)).data
        assert np.all(np.abs(s.sum(axis=1) - 1) < 1e-9)
        assert np.max(np.abs(tn.softmax_rows(Tensor(a + c)).data - s)) < 1e-9


class TestLayerNorm:
    def test_row_statistics(self):
        out = tn.layer_norm(Tensor([[1.0, 2, 3]]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        assert abs(out.mean()) < 1e-12
        assert out.var() == pytest.approx(1.0, abs=1e-4)

    def test_constant_row(self):
        out = tn.layer_norm(Tensor([[5.0, 5, 5]]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        assert np.array_equal(out, np.zeros((1, 3)))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        check_grads(tn.layer_norm, [(4, 8), (8,), (8,)], seed)


class TestFeedForward:
    def test_identity_weights(self):
        x = np.abs(np.random.default_rng(0).normal(size=(5, 4)))
        eye, zero = Tensor(np.eye(4)), Tensor(np.zeros(4))
        assert np.allclose(tn.conv1d_pointwise_ff(Tensor(x), eye, zero, eye, zero).data, x)

    def test_relu_kills_negative_input(self):
        x = -np.abs(np.random.default_rng(1).normal(size=(5, 4))) - 0.1
        eye, zero = Tensor(np.eye(4)), Tensor(np.zeros(4))
        hidden = tn.relu(tn.linear(Tensor(x), eye, zero))
        assert np.array_equal(hidden.data, np.zeros((5, 4)))
        assert np.array_equal(tn.conv1d_pointwise_ff(Tensor(x), eye, zero, eye, zero).data, np.zeros((5, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            tn.conv1d_pointwise_ff(Tensor(np.ones((5, 3))), Tensor(np.ones((4, 4))), Tensor(np.zeros(4)),
                                   Tensor(np.ones((4, 4))), Tensor(np.zeros(4)))

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        check_grads(tn.conv1d_pointwise_ff, [(5, 4), (4, 6), (6,), (6, 4), (4,)], seed)


class TestBilinear:
    def test_quadratic_form(self):
        W = Tensor(np.eye(2)[None])
        out = tn.bilinear(Tensor([[1.0, 2]]), Tensor([[1.0, 2]]), W, Tensor(np.zeros(1)))
        assert out.data.tolist() == [[5.0]]

    def test_zero_input_gives_bias(self):
        rng = np.random.default_rng(0)
        b = rng.normal(size=2)
        out = tn.bilinear(Tensor(np.zeros((3, 4))), Tensor(rng.normal(size=(3, 4))),
                          Tensor(rng.normal(size=(2, 4, 4))), Tensor(b))
        assert np.array_equal(out.data, np.broadcast_to(b, (3, 2)))

    def test_row_mismatch(self):
        with pytest.raises(DimensionError):
            tn.bilinear(Tensor(np.ones((3, 4))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4, 4))), Tensor(np.ones(2)))

    def test_matches_explicit_loop(self):
        rng = np.random.default_rng(3)
        x, y, W, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 5)), rng.normal(size=(2, 4, 5)), rng.normal(size=2)
        expected = np.array([[x[i] @ W[j] @ y[i] + b[j] for j in range(2)] for i in range(3)])
        assert np.allclose(tn.bilinear(Tensor(x), Tensor(y), Tensor(W), Tensor(b)).data, expected)

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        check_grads(tn.bilinear, [(3, 4), (3, 4), (2, 4, 4), (2,)], seed)

    def test_batched_gradient(self):
        check_grads(tn.bilinear, [(2, 3, 4), (2, 3, 5), (2, 4, 5), (2,)], 11)


def _probs(rng, shape):
    a = rng.uniform(0.05, 1.0, shape)
    return a / a.sum(axis=-1, keepdims=True)


class TestKL:
    def test_identical_is_zero(self):
        p = _probs(np.random.default_rng(0), (4, 6))
        assert abs(tn.kl_rows(Tensor(p), Tensor(p)).item()) <= 1e-12

    def test_worked_value(self):
        # 0.5 ln(0.5/0.25) + 0.5 ln(0.5/0.75)
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        got = tn.kl_rows(Tensor([[0.5, 0.5]]), Tensor([[0.25, 0.75]])).item()
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.14384, abs=1e-5)

    def test_negative_entries_rejected(self):
        with pytest.raises(DomainError):
            tn.kl_rows(Tensor([[-0.1, 1.1]]), Tensor([[0.5, 0.5]]))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_gibbs_inequality(self, seed):
        rng = np.random.default_rng(seed)
        p, q = _probs(rng, (3, 5)), _probs(rng, (3, 5))
        assert tn.kl_rows(Tensor(p), Tensor(q)).item() >= -1e-12
        assert tn.kl_rows(Tensor(p), Tensor(p)).item() <= 1e-12

    @pytest.mark.parametrize("seed", SEEDS)
    def test_gradient(self, seed):
        rng = np.random.default_rng(seed)
        p, q = _probs(rng, (3, 4)), _probs(rng, (3, 4))
        pt, qt = Tensor(p, requires_grad=True), Tensor(q, requires_grad=True)
        with Tape():
            tn.backward(tn.kl_rows(pt, qt))

        def f():
            return tn.kl_rows(Tensor(p), Tensor(q)).item()

        assert rel_error(pt.grad, numerical_grad(f, p)) < TOL
        assert rel_error(qt.grad, numerical_grad(f, q)) < TOL

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_js_bounded_by_ln2(self, seed):
        rng = np.random.default_rng(seed)
        p = rng.dirichlet(np.full(4, 0.1), size=3)
        q = rng.dirichlet(np.full(4, 0.1), size=3)
        js = tn.js_per_row(Tensor(p), Tensor(q)).data
        assert np.all(js <= math.log(2) + 1e-12) and np.all(js >= -1e-12)

    def test_js_disjoint_supports_hits_ln2(self):
        js = tn.js_per_row(Tensor([[1.0, 0.0]]), Tensor([[0.0, 1.0]])).item()
        assert js == pytest.approx(math.log(2), abs=1e-7)


class TestStopGradient:
    def test_detached_factor(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape():
            loss = x * tn.stop_gradient(x)
            tn.backward(loss)
        assert loss.item() == 9.0
        assert x.grad == 3.0

    def test_fully_detached_is_exact_zero(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        y = Tensor(1.0, requires_grad=True)
        with Tape():
            loss = tn.sum(tn.stop_gradient(x)) * y
            tn.backward(loss)
        assert x.grad is None or np.array_equal(x.grad, np.zeros(4))

    def test_detached_copy_never_gets_grad(self):
        x = Tensor(np.ones(3), requires_grad=True)
        d = tn.stop_gradient(x)
        with Tape():
            tn.backward(tn.sum(tn.mul(x, d)))
        assert d.grad is None and not d.tracked


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        with Tape():
            tn.backward(x * x)
        assert x.grad == 6.0

    @pytest.mark.parametrize("seed", range(5))
    def test_sum_of_product(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        with Tape():
            tn.backward(tn.sum(tn.matmul(ta, tb)))

        def f():
            return float(np.sum(a @ b))

        assert rel_error(ta.grad, numerical_grad(f, a)) < TOL
        assert rel_error(tb.grad, numerical_grad(f, b)) < TOL

    def test_disconnected_leaf(self):
        x = Tensor(2.0, requires_grad=True)
        y = Tensor(5.0, requires_grad=True)
        with Tape():
            tn.backward(tn.add(tn.mul(x, x), tn.mul(tn.stop_gradient(y), 0.0)))
        assert y.grad is None or y.grad == 0.0

    def test_non_scalar_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape(), pytest.raises(ContractError):
            tn.backward(tn.mul(x, 2.0))

    def test_twice_accumulates_exactly(self):
        rng = np.random.default_rng(5)
        w = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        g = Tensor(np.ones(3), requires_grad=True)
        x = Tensor(rng.normal(size=(2, 4)))
        with Tape():
            loss = tn.sum(tn.softmax_rows(tn.layer_norm(tn.matmul(x, w), g, Tensor(np.zeros(3)))) * rng.normal(size=(2, 3)))
            tn.backward(loss)
            once_w, once_g = w.grad.copy(), g.grad.copy()
            tn.backward(loss)
        assert np.array_equal(w.grad, 2 * once_w)
        assert np.array_equal(g.grad, 2 * once_g)

    def test_tape_is_topologically_ordered(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with Tape() as tape:
            y = tn.relu(tn.matmul(x, x))
            tn.sum(tn.add(y, x))
        for node in tape.nodes:
            for inp in node.inputs:
                if inp.tape_node is not None:
                    assert inp.tape_node.index < node.index

    def test_no_grad_records_nothing(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape, tn.no_grad():
            tn.mul(x, 2.0)
        assert len(tape) == 0

    @pytest.mark.parametrize(
        "op",
        [tn.relu, lambda a: tn.leaky_relu(a, 0.01), tn.sigmoid, tn.transpose,
         lambda a: tn.getitem(a, (slice(None), slice(0, 2))),
         lambda a: tn.concat([a, tn.mul(a, 2.0)], axis=-1),
         lambda a: tn.div(a, tn.clamp_min(tn.sum(a, axis=-1, keepdims=True), 1e-8)),
         lambda a: tn.mean(a, axis=0)],
    )
    def test_elementwise_and_shape_ops(self, op):
        for seed in range(3):
            check_grads(op, [(3, 4)], seed, positive=True)


class TestAdam:
    def test_first_step(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        state = AdamState.for_params([p], lr=1e-4)
        adam_apply([p], [np.ones(3)], state)
        # bias-corrected moments are both exactly 1 on the first step
        assert np.allclose(p.data, -1e-4 / (1 + 1e-8), rtol=0, atol=1e-16)
        assert state.step_count == 1

    def test_zero_gradient_is_fixed_point(self):
        p = Tensor(np.arange(3.0), requires_grad=True)
        state = AdamState.for_params([p])
        for _ in range(5):
            adam_apply([p], [np.zeros(3)], state)
        assert np.array_equal(p.data, np.arange(3.0))
        assert state.step_count == 5

    def test_converges_on_quadratic(self):
        theta = Tensor(1.0, requires_grad=True)
        state = AdamState.for_params([theta], lr=1e-2)
        for _ in range(2000):
            theta.grad = None
            with Tape():
                tn.backward(theta * theta)
            adam_apply([theta], [theta.grad], state)
        assert abs(theta.item()) < 1e-3

    def test_shape_mismatch(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        state = AdamState.for_params([p])
        with pytest.raises(DimensionError):
            adam_apply([p], [np.zeros(4)], state)
