import numpy as np
import pytest

from voxkit import gradcheck as gc
from voxkit import layers as L
from voxkit.errors import ContractError, StateError, TrainingError


def make_params():
    return L.ParameterSet()


class TestParameterSet:
    def test_duplicate_name_rejected(self):
        ps = make_params()
        ps.add("w", np.zeros(3))
        with pytest.raises(ContractError):
            ps.add("w", np.zeros(3))

    def test_grad_shape_matches_value(self):
        ps = make_params()
        p = ps.add("w", np.zeros((2, 3)))
        assert p.grad.shape == p.value.shape

    def test_order_preserved(self):
        ps = make_params()
        for name in ("a", "b", "c"):
            ps.add(name, np.zeros(1))
        assert ps.names() == ["a", "b", "c"]


class TestBatchNorm:
    def test_train_normalizes(self):
        rng = np.random.default_rng(0)
        ps = make_params()
        bn = L.BatchNorm2D(ps, "bn", 3)
        x = rng.standard_normal((4, 3, 5, 5)) * 3.0 + 1.0
        y = bn.forward(x, "train")
        mean = y.mean(axis=(0, 2, 3))
        var = y.var(axis=(0, 2, 3))
        assert np.max(np.abs(mean)) < 1e-12
        assert np.max(np.abs(var - 1.0)) < 1e-4  # eps effect

    def test_eval_identity_with_unit_running_stats(self):
        rng = np.random.default_rng(1)
        ps = make_params()
        bn = L.BatchNorm2D(ps, "bn", 2)
        x = rng.standard_normal((2, 2, 3, 3))
        y = bn.forward(x, "eval")
        assert np.max(np.abs(y - x)) < 1e-4

    def test_eval_never_mutates_running_stats(self):
        rng = np.random.default_rng(2)
        ps = make_params()
        bn = L.BatchNorm2D(ps, "bn", 2)
        rm = bn.running_mean.value.copy()
        rv = bn.running_var.value.copy()
        bn.forward(rng.standard_normal((3, 2, 4, 4)), "eval")
        assert np.array_equal(bn.running_mean.value, rm)
        assert np.array_equal(bn.running_var.value, rv)

    def test_running_stat_update_rule(self):
        rng = np.random.default_rng(3)
        ps = make_params()
        bn = L.BatchNorm2D(ps, "bn", 2)
        x = rng.standard_normal((4, 2, 3, 3)) + 5.0
        bn.forward(x, "train")
        expect_mean = 0.9 * 0.0 + 0.1 * x.mean(axis=(0, 2, 3))
        expect_var = 0.9 * 1.0 + 0.1 * x.var(axis=(0, 2, 3))
        assert np.allclose(bn.running_mean.value, expect_mean, atol=1e-12)
        assert np.allclose(bn.running_var.value, expect_var, atol=1e-12)

    def test_degenerate_statistics_error(self):
        ps = make_params()
        bn = L.BatchNorm2D(ps, "bn", 2)
        with pytest.raises(ContractError):
            bn.forward(np.zeros((1, 2, 1, 1)), "train")

    def test_eval_pure_function_of_inputs(self):
        rng = np.random.default_rng(4)
        ps = make_params()
        bn = L.BatchNorm2D(ps, "bn", 3)
        bn.running_mean.value[...] = rng.standard_normal(3)
        bn.running_var.value[...] = rng.uniform(0.5, 2.0, 3)
        x = rng.standard_normal((2, 3, 4, 4))
        assert np.array_equal(bn.forward(x, "eval"), bn.forward(x, "eval"))


class TestFullyConnected:
    def test_identity(self):
        rng = np.random.default_rng(5)
        ps = make_params()
        fc = L.FullyConnected(ps, "fc", 4, 4, rng=rng)
        fc.weight.value[...] = np.eye(4)
        fc.bias.value[...] = 0.0
        x = rng.standard_normal((3, 4))
        assert np.array_equal(fc.forward(x), x)

    def test_grad_weight_outer_product(self):
        rng = np.random.default_rng(6)
        ps = make_params()
        fc = L.FullyConnected(ps, "fc", 3, 2, rng=rng)
        x = rng.standard_normal((1, 3))
        g = rng.standard_normal((1, 2))
        fc.forward(x)
        fc.backward(g)
        assert np.allclose(fc.weight.grad, np.outer(g[0], x[0]), atol=1e-15)

    def test_leading_axes_preserved(self):
        rng = np.random.default_rng(7)
        ps = make_params()
        fc = L.FullyConnected(ps, "fc", 4, 6, rng=rng)
        y = fc.forward(rng.standard_normal((2, 5, 4)))
        assert y.shape == (2, 5, 6)


class TestBackwardContracts:
    def test_zero_grad_out_gives_zero_grads(self):
        rng = np.random.default_rng(8)
        ps = make_params()
        conv = L.Conv2DLayer(ps, "c", 2, 3, rng=rng)
        y = conv.forward(rng.standard_normal((1, 2, 4, 4)))
        conv.backward(np.zeros_like(y))
        assert not conv.weight.grad.any() and not conv.bias.grad.any()

    def test_backward_without_forward_raises(self):
        ps = make_params()
        conv = L.Conv2DLayer(ps, "c", 1, 1)
        with pytest.raises(StateError):
            conv.backward(np.zeros((1, 1, 3, 3)))
        bn = L.BatchNorm2D(ps, "bn", 1)
        with pytest.raises(StateError):
            bn.backward(np.zeros((1, 1, 3, 3)))
        fc = L.FullyConnected(ps, "fc", 2, 2)
        with pytest.raises(StateError):
            fc.backward(np.zeros((1, 2)))


@pytest.mark.parametrize("seed", range(8))
class TestFiniteDifferences:
    def test_conv2d_layer(self, seed):
        assert gc._check_conv2d(seed) < 1e-5

    def test_fully_connected(self, seed):
        assert gc._check_fully_connected(seed) < 1e-5

    def test_batchnorm_train(self, seed):
        assert gc._check_batchnorm(seed, "train") < 1e-5

    def test_batchnorm_eval(self, seed):
        assert gc._check_batchnorm(seed, "eval") < 1e-5


class TestOptimizers:
    def _scalar_params(self, p0, g0):
        ps = make_params()
        p = ps.add("p", np.array([p0]))
        p.grad[...] = g0
        return ps, p

    def test_lr_zero_keeps_parameters(self):
        ps, p = self._scalar_params(1.0, 2.0)
        L.sgd_step(ps, lr=0.0)
        assert p.value[0] == 1.0

    def test_scalar_update(self):
        ps, p = self._scalar_params(1.0, 2.0)
        L.sgd_step(ps, lr=0.1)
        assert abs(p.value[0] - 0.8) < 1e-15

    def test_clip_caps_effective_gradient(self):
        ps, p = self._scalar_params(0.0, 5.0)
        L.sgd_step(ps, lr=1.0, grad_clip=1.0)
        assert abs(p.value[0] + 1.0) < 1e-15

    def test_grads_zeroed_after_step(self):
        ps, p = self._scalar_params(1.0, 2.0)
        L.sgd_step(ps, lr=0.1)
        assert p.grad[0] == 0.0

    def test_nonfinite_gradient_names_parameter(self):
        ps, p = self._scalar_params(1.0, np.nan)
        with pytest.raises(TrainingError, match="'p'"):
            L.sgd_step(ps, lr=0.1)

    def test_adam_deterministic(self):
        def run():
            rng = np.random.default_rng(9)
            ps = make_params()
            w = ps.add("w", rng.standard_normal(10))
            opt = L.Adam(ps, lr=1e-2)
            for _ in range(5):
                w.grad[...] = w.value * 2.0
                opt.step()
            return w.value.copy()

        assert np.array_equal(run(), run())

    def test_adam_descends_quadratic(self):
        ps = make_params()
        w = ps.add("w", np.array([3.0, -2.0]))
        opt = L.Adam(ps, lr=0.1)
        for _ in range(200):
            w.grad[...] = 2.0 * w.value
            opt.step()
        assert np.max(np.abs(w.value)) < 1e-2
