import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coopsurv import autodiff as ad
from coopsurv.autodiff import Adam, Tensor
from coopsurv.exceptions import ContractError, DimensionError

from .helpers import check_gradients, grads_close, numeric_gradient


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        m = Tensor([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(ad.matmul(eye, m).data, m.data)

    def test_small_product(self):
        a = Tensor([[1.0, 2.0]])
        b = Tensor([[3.0], [4.0]])
        assert ad.matmul(a, b).data.tolist() == [[11.0]]

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_gradient_matches_finite_differences(self):
        a = Tensor(np.ones((2, 2)), requires_grad=True)
        b = Tensor([[2.0, 0.0], [0.0, 2.0]])
        loss = ad.tsum(ad.matmul(a, b))
        loss.backward()
        assert np.allclose(a.grad, [[2.0, 2.0], [2.0, 2.0]])
        want = numeric_gradient(lambda: ad.tsum(ad.matmul(a, b)).item(), a, step=1e-6)
        assert grads_close(a.grad, want)

    @pytest.mark.parametrize("sa,sb", [((3, 4), (4, 2)), ((3, 4), (4,)), ((4,), (4, 2)), ((4,), (4,))])
    def test_gradcheck_all_rank_cases(self, sa, sb):
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=sa), requires_grad=True)
        b = Tensor(rng.normal(size=sb), requires_grad=True)
        check_gradients(lambda: ad.tsum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))), [a, b])


class TestSoftmaxRows:
    def test_uniform(self):
        out = ad.softmax_rows(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3] * 3, atol=1e-15)

    def test_no_overflow_on_large_logits(self):
        out = ad.softmax_rows(Tensor([1000.0, 0.0, 0.0]))
        assert np.all(np.isfinite(out.data))
        assert out.data[0] > 1.0 - 1e-12

    def test_closed_form(self):
        out = ad.softmax_rows(Tensor([math.log(2.0), 0.0]))
        assert np.allclose(out.data, [2 / 3, 1 / 3], atol=1e-15)

    @given(st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_rows_sum_to_one_and_positive(self, seed):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(scale=rng.uniform(0.1, 50.0), size=(3, 5)))
        y = ad.softmax_rows(x).data
        assert np.all(np.abs(y.sum(axis=1) - 1.0) <= 1e-12)
        assert np.all(y > 0.0)


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        gain = Tensor(np.ones(4))
        bias = Tensor(np.zeros(4))
        out = ad.layer_norm(Tensor([1.0, 1.0, 1.0, 1.0]), gain, bias, eps=1e-5)
        assert np.allclose(out.data, 0.0, atol=1e-10)

    def test_already_normalized_row(self):
        gain = Tensor(np.ones(2))
        bias = Tensor(np.zeros(2))
        out = ad.layer_norm(Tensor([-1.0, 1.0]), gain, bias, eps=0.0)
        assert np.allclose(out.data, [-1.0, 1.0], atol=1e-15)

    def test_width_one_zero_eps_guard(self):
        g = Tensor(np.ones(1))
        b = Tensor(np.zeros(1))
        with pytest.raises(ContractError):
            ad.layer_norm(Tensor([[3.0]]), g, b, eps=0.0)

    def test_gradient_random_3x5(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        gain = Tensor(rng.normal(size=5), requires_grad=True)
        bias = Tensor(rng.normal(size=5), requires_grad=True)
        weight = Tensor(rng.normal(size=(3, 5)))
        check_gradients(
            lambda: ad.tsum(ad.mul(ad.layer_norm(x, gain, bias, eps=1e-5), weight)),
            [x, gain, bias])


class TestSelu:
    def test_fixed_points(self):
        assert ad.selu(Tensor([0.0])).data[0] == 0.0
        assert ad.selu(Tensor([1.0])).data[0] == pytest.approx(1.0507009873554805, abs=1e-15)
        assert ad.selu(Tensor([-30.0])).data[0] == pytest.approx(-1.7581, abs=1e-4)

    def test_continuous_and_monotone_on_grid(self):
        grid = np.linspace(-6.0, 6.0, 4001)
        y = ad.selu(Tensor(grid)).data
        assert np.all(np.diff(y) > 0.0)
        below = ad.selu(Tensor([-1e-9])).data[0]
        above = ad.selu(Tensor([1e-9])).data[0]
        assert abs(above - below) < 1e-8


class TestBackward:
    def test_square(self):
        x = Tensor([3.0], requires_grad=True)
        ad.tsum(ad.mul(x, x)).backward()
        assert np.allclose(x.grad, [6.0])

    def test_softmax_sum_has_zero_gradient(self):
        x = Tensor([0.3, -1.2, 2.0], requires_grad=True)
        ad.tsum(ad.softmax_rows(x)).backward()
        assert np.allclose(x.grad, 0.0, atol=1e-12)

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            ad.mul(x, 2.0).backward()

    def test_fanout_sums_contributions(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)

        def build():
            y = ad.selu(x)
            return ad.add(ad.tsum(ad.mul(y, y)), ad.tsum(ad.matmul(y, ad.transpose(y))))

        check_gradients(build, [x])

    def test_repeated_backward_accumulates(self):
        x = Tensor([2.0], requires_grad=True)
        loss = ad.tsum(ad.mul(x, x))
        loss.backward()
        loss.backward()
        assert np.allclose(x.grad, [8.0])

    def test_composite_graph_matches_finite_differences(self):
        # miniature encoder -> expert -> scalar pipeline over several seeds
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x = Tensor(rng.normal(size=(3, 4)))
            w1 = Tensor(rng.normal(size=(4, 6)) * 0.5, requires_grad=True)
            b1 = Tensor(rng.normal(size=6) * 0.1, requires_grad=True)
            w2 = Tensor(rng.normal(size=(6, 2)) * 0.5, requires_grad=True)
            gain = Tensor(np.ones(6), requires_grad=True)
            bias = Tensor(np.zeros(6), requires_grad=True)

            def build():
                h = ad.selu(ad.add(ad.matmul(x, w1), b1))
                h = ad.layer_norm(h, gain, bias, eps=1e-5)
                att = ad.softmax_rows(ad.matmul(h, ad.matmul(w2, Tensor([1.0, -1.0]))))
                pooled = ad.matmul(att, h)
                return ad.tsum(ad.mul(ad.sigmoid(ad.matmul(pooled, w2)), Tensor([1.0, 2.0])))

            check_gradients(build, [w1, b1, w2, gain, bias])


OP_CASES = {
    "add": lambda t: ad.add(t[0], t[1]),
    "add_bias": lambda t: ad.add(t[0], t[2]),
    "sub": lambda t: ad.sub(t[0], t[1]),
    "mul": lambda t: ad.mul(t[0], t[1]),
    "mul_scalar_tensor": lambda t: ad.mul(t[0], ad.tmean(t[1])),
    "matmul": lambda t: ad.matmul(t[0], ad.transpose(t[1])),
    "exp": lambda t: ad.texp(t[0]),
    "log": lambda t: ad.tlog(ad.add(ad.mul(t[0], t[0]), 0.5)),
    "sqrt": lambda t: ad.tsqrt(ad.add(ad.mul(t[0], t[0]), 0.5)),
    "tanh": lambda t: ad.ttanh(t[0]),
    "sigmoid": lambda t: ad.sigmoid(t[0]),
    "selu": lambda t: ad.selu(t[0]),
    "gelu": lambda t: ad.gelu(t[0]),
    "clamp": lambda t: ad.clamp(t[0], -0.5, 0.5),
    "softmax_rows": lambda t: ad.softmax_rows(t[0]),
    "sum_axis0": lambda t: ad.stack_rows([ad.tsum(t[0], 0), ad.tsum(t[1], 0)]),
    "sum_axis1": lambda t: ad.tsum(ad.mul(ad.tsum(t[0], 1), ad.tsum(t[1], 1))),
    "mean": lambda t: ad.tmean(t[0], 0),
    "take_rows": lambda t: ad.take_rows(t[0], [2, 0, 2]),
    "row": lambda t: ad.row(t[0], 1),
    "vitem": lambda t: ad.vitem(t[2], 2),
    "slice_vec": lambda t: ad.slice_vec(t[2], 1, 3),
    "slice_cols": lambda t: ad.slice_cols(t[0], 1, 3),
    "stack_rows": lambda t: ad.stack_rows([t[2], ad.mul(t[2], 2.0)]),
    "concat_rows": lambda t: ad.concat_rows([t[0], t[1]]),
    "concat_cols": lambda t: ad.concat_cols([t[0], t[1]]),
    "concat_vec": lambda t: ad.concat_vec([t[2], t[2]]),
    "scale_rows": lambda t: ad.scale_rows(t[0], ad.tsum(t[1], 1)),
    "layer_norm": lambda t: ad.layer_norm(t[0], t[3], t[2], eps=1e-5),
    "transpose": lambda t: ad.transpose(t[0]),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_every_op_gradient_matches_finite_differences(name):
    # >= 20 randomized checks per differentiable op, avoiding kink points
    build_out = OP_CASES[name]
    for seed in range(20):
        rng = np.random.default_rng(seed * 1000 + 17)
        mats = [Tensor(rng.normal(size=(3, 4)), requires_grad=True) for _ in range(2)]
        vec = Tensor(rng.normal(size=4), requires_grad=True)
        gain = Tensor(rng.normal(size=4), requires_grad=True)
        for t in mats + [vec]:
            t.data[np.abs(t.data) < 1e-3] = 1e-3  # keep clear of selu/clamp kinks
        params = mats + [vec, gain]
        weight = Tensor(rng.normal(size=build_out(params).shape))
        check_gradients(lambda: ad.tsum(ad.mul(build_out(params), weight)), params)


class TestAdam:
    def test_first_step_moves_by_learning_rate(self):
        p = Tensor([0.0], requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.array([1.0])
        opt.step()
        assert p.data[0] == pytest.approx(-0.1, abs=1e-8)
        assert opt.t == 1

    def test_zero_gradient_leaves_parameter_unchanged(self):
        p = Tensor([1.5], requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.array([0.0])
        opt.step()
        assert p.data[0] == 1.5

    def test_missing_gradient_is_contract_error(self):
        p = Tensor([0.0], requires_grad=True)
        opt = Adam([p])
        with pytest.raises(ContractError):
            opt.step()

    def test_converges_on_quadratic(self):
        p = Tensor([0.0], requires_grad=True)
        opt = Adam([p], lr=0.1)
        for _ in range(200):
            opt.zero_grad()
            diff = ad.sub(p, 3.0)
            ad.tsum(ad.mul(diff, diff)).backward()
            opt.step()
        assert abs(p.data[0] - 3.0) < 0.1


class TestNoGrad:
    def test_disables_taping(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with ad.no_grad():
            y = ad.mul(x, x)
        assert not y.requires_grad
        assert y._parents == ()
