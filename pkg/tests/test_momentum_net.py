from dataclasses import replace

import numpy as np
import pytest

from momrev.autodiff import finite_diff_loss_grad
from momrev.datasets import make_lista_problem
from momrev.errors import BufferCorruptionError, InvertibilityError, ShapeError, ValidationError
from momrev.models import lista_network, mlp_network
from momrev.momentum_net import (
    BlockParams,
    ListaParams,
    MomentumState,
    Network,
    RevNetwork,
    encode_state,
    forward,
    forward_recorded,
    momentum_inverse_step,
    momentum_step,
    resnet_step,
    residual_mlp,
    revnet_forward,
    revnet_inverse,
    revnet_inverse_step,
    revnet_step,
    soft_threshold,
)
from momrev.revarith import Ratio, encode_array, zeros_buffer
from momrev.trainer import ista_iterate, lasso_loss

G = Ratio(9, 10)


def _invert(net, state, context=None):
    for block in reversed(net.blocks):
        state = momentum_inverse_step(state, block, context)
    return state


class TestSoftThreshold:
    def test_values(self):
        np.testing.assert_array_equal(soft_threshold([2.0, -2.0, 0.3, -0.3], 0.5), [1.5, -1.5, 0.0, 0.0])

    def test_idempotent_on_image(self, rng):
        u = rng.standard_normal(100)
        s = soft_threshold(u, 0.4)
        np.testing.assert_array_equal(soft_threshold(s, 0.0), s)

    def test_negative_threshold(self):
        with pytest.raises(ValidationError):
            soft_threshold([1.0], -0.1)


class TestExactInvertibility:
    @pytest.mark.parametrize("gamma", [Ratio(1, 2), Ratio(9, 10), Ratio(99, 100), Ratio(1, 1)], ids=str)
    def test_depth_50_round_trip(self, gamma, rng):
        net = mlp_network(8, 16, 50, gamma, rng, frac_bits=32)
        x0 = rng.standard_normal(8)
        _, final = forward(net, x0)
        assert _invert(net, final).same_as(encode_state(net, x0))

    def test_batched_round_trip(self, rng):
        net = mlp_network(3, 8, 20, G, rng, frac_bits=24)
        x0 = rng.standard_normal((16, 3))
        _, final = forward(net, x0)
        restored = _invert(net, final)
        assert restored.same_as(encode_state(net, x0))
        assert all(b == 0 for b in restored.buffers.ravel())

    def test_single_step_inverse(self, rng):
        block = BlockParams.random(4, 8, rng, gamma=Ratio(3, 4))
        net = Network((block,), frac_bits=32)
        s0 = encode_state(net, rng.standard_normal(4))
        s1 = momentum_step(s0, block)
        assert not s1.same_as(s0)
        assert momentum_inverse_step(s1, block).same_as(s0)

    def test_residual_of_input_velocity(self, rng):
        net = mlp_network(4, 8, 10, G, rng, v0_mode="residual_of_input", frac_bits=32)
        x0 = rng.standard_normal(4)
        s0 = encode_state(net, x0)
        np.testing.assert_allclose(s0.decoded()[1], net.blocks[0](s0.decoded()[0]), atol=2.0**-31)
        _, final = forward(net, x0)
        assert _invert(net, final).same_as(s0)

    def test_tied_weights(self, rng):
        net = mlp_network(2, 4, 30, G, rng, tied=True, frac_bits=32)
        assert net.tied and all(b is net.blocks[0] for b in net.blocks)
        x0 = rng.standard_normal(2)
        _, final = forward(net, x0)
        assert _invert(net, final).same_as(encode_state(net, x0))

    @pytest.mark.slow
    def test_depth_1000_dim_64(self):
        rng = np.random.default_rng(0)
        net = mlp_network(64, 64, 1000, G, rng, frac_bits=32)
        x0 = rng.standard_normal(64)
        _, final = forward(net, x0)
        assert _invert(net, final).same_as(encode_state(net, x0))

    def test_negative_buffer_detected(self, rng):
        block = BlockParams.random(2, 4, rng, gamma=G)
        net = Network((block,), frac_bits=32)
        s = encode_state(net, rng.standard_normal(2))
        bad = zeros_buffer(2)
        bad[0] = -1
        with pytest.raises(BufferCorruptionError):
            momentum_step(MomentumState(s.x, s.v, bad, 32), block)
        with pytest.raises(BufferCorruptionError):
            momentum_inverse_step(MomentumState(s.x, s.v, bad, 32), block)


class TestMomentumStep:
    HALF = Ratio(1, 2)

    def test_float_example(self):
        block = BlockParams.zeros(1, 2, self.HALF)
        s = momentum_step(MomentumState(np.array([1.0]), np.array([2.0]), None, None), block)
        np.testing.assert_array_equal(s.v, [1.0])
        np.testing.assert_array_equal(s.x, [2.0])
        back = momentum_inverse_step(s, block)
        np.testing.assert_array_equal(back.x, [1.0])
        np.testing.assert_array_equal(back.v, [2.0])

    def test_exact_example(self):
        block = BlockParams.zeros(1, 2, self.HALF)
        start = MomentumState(encode_array([1.0], 32), encode_array([2.0], 32), zeros_buffer((1,)), 32)
        s = momentum_step(start, block)
        assert s.x[0] == 2 ** 33 and s.v[0] == 2 ** 32
        assert s.buffers[0] == 0
        assert momentum_inverse_step(s, block).same_as(start)

    def test_residual_jacobian_matches_finite_differences(self, rng):
        block = BlockParams.random(3, 5, rng)
        x = rng.standard_normal(3)
        h = np.tanh(block.W1 @ x + block.b)
        jac = block.W2.T @ np.diag(1.0 - h ** 2) @ block.W1
        for i in range(3):
            row = finite_diff_loss_grad(lambda q: float(residual_mlp(q["x"], block)[i]), {"x": x})["x"]
            np.testing.assert_allclose(row, jac[i], atol=1e-6)

    def test_residual_vanishes_without_weights(self, rng):
        x = rng.standard_normal((4, 3))
        block = BlockParams.random(3, 5, rng)
        np.testing.assert_array_equal(residual_mlp(x, replace(block, W2=np.zeros_like(block.W2))), 0.0)
        np.testing.assert_array_equal(residual_mlp(x, BlockParams.zeros(3, 5)), 0.0)


class TestFloatMode:
    def test_exact_tracks_float(self, rng):
        exact = mlp_network(4, 8, 10, G, np.random.default_rng(1), frac_bits=32)
        flt = replace(exact, frac_bits=None)
        x0 = rng.standard_normal(4)
        x_exact, _ = forward(exact, x0)
        x_float, _ = forward(flt, x0)
        np.testing.assert_allclose(x_exact, x_float, atol=1e-6)

    def test_float_inverse(self, rng):
        net = mlp_network(4, 8, 10, G, rng)
        x0 = rng.standard_normal(4)
        _, final = forward(net, x0)
        restored = _invert(net, final)
        np.testing.assert_allclose(restored.x, x0, atol=1e-10)
        np.testing.assert_allclose(restored.v, 0.0, atol=1e-10)

    def test_gamma_zero_is_resnet(self, rng):
        net = mlp_network(3, 6, 8, Ratio(0, 1), rng)
        x0 = rng.standard_normal(3)
        x = x0
        for block in net.blocks:
            x = resnet_step(x, block)
        np.testing.assert_allclose(forward(net, x0)[0], x, atol=1e-12)

    def test_gamma_zero_exact_mode_runs_forward(self, rng):
        net = mlp_network(3, 6, 4, Ratio(0, 1), rng, frac_bits=32)
        x, state = forward(net, rng.standard_normal(3))
        assert all(b == 0 for b in state.buffers.ravel())
        with pytest.raises(InvertibilityError):
            momentum_inverse_step(state, net.blocks[-1])

    def test_recorded_trace(self, rng):
        net = mlp_network(2, 4, 6, G, rng, frac_bits=32)
        x0 = rng.standard_normal(2)
        x, trace = forward_recorded(net, x0)
        assert len(trace) == 7
        assert trace[-1].same_as(forward(net, x0)[1])
        np.testing.assert_array_equal(trace[-1].decoded()[0], x)


class TestListaLayers:
    def test_resnet_lista_is_ista(self):
        problem = make_lista_problem(n_train=10, n_test=20, seed=3)
        net = lista_network(problem, 7)
        y = problem.y_test
        x, _ = forward(net, np.zeros((len(y), problem.p)), y)
        np.testing.assert_allclose(x, ista_iterate(problem, y, 7), atol=1e-12)

    def test_context_required(self):
        problem = make_lista_problem(n_train=4, n_test=4, seed=0)
        layer = ListaParams.ista(problem.D, problem.eta, problem.lasso_lambda)
        with pytest.raises(ValidationError):
            layer(np.zeros(problem.p))

    def test_momentum_lista_is_heavy_ball_ista(self):
        problem = make_lista_problem(n_train=10, n_test=20, seed=3)
        gamma = Ratio(1, 2)
        y, D, eta = problem.y_test, problem.D, problem.eta
        x_prev = x = np.zeros((len(y), problem.p))
        for _ in range(7):
            step = soft_threshold(x - eta * (x @ D.T - y) @ D, problem.threshold)
            x_prev, x = x, step + 0.5 * (x - x_prev)
        out, _ = forward(lista_network(problem, 7, gamma), np.zeros((len(y), problem.p)), y)
        np.testing.assert_allclose(out, x, atol=1e-12)

    @pytest.mark.parametrize("depth", [20, 30])
    def test_untrained_momentum_lista_not_worse_than_ista(self, depth):
        problem = make_lista_problem(seed=0)
        y = problem.y_test
        out, _ = forward(lista_network(problem, depth, Ratio(1, 2)), np.zeros((len(y), problem.p)), y)
        assert lasso_loss(problem, out, y) <= lasso_loss(problem, ista_iterate(problem, y, depth), y)

    def test_ista_scale_undoes_damping(self):
        problem = make_lista_problem(n_train=4, n_test=4, seed=0)
        args = (problem.D, problem.eta, problem.lasso_lambda)
        assert ListaParams.ista(*args, Ratio(1, 2)).scale == 2.0
        assert ListaParams.ista(*args, Ratio(0, 1)).scale == 1.0
        assert ListaParams.ista(*args, Ratio(1, 1)).scale == 1.0

    def test_scale_multiplies_residual_and_vjp(self, rng):
        problem = make_lista_problem(d=4, p=6, n_train=3, n_test=3, seed=1)
        plain = ListaParams.ista(problem.D, problem.eta, problem.lasso_lambda, Ratio(0, 1))
        scaled = replace(plain, scale=4.0)
        x, y, g = rng.standard_normal(6), problem.y_test[0], rng.standard_normal(6)
        np.testing.assert_allclose(scaled(x, y), 4.0 * plain(x, y))
        gx_plain, gp_plain = plain.vjp(x, g, y)
        gx, gp = scaled.vjp(x, g, y)
        np.testing.assert_allclose(gx, 4.0 * gx_plain)
        np.testing.assert_allclose(gp["W1"], 4.0 * gp_plain["W1"])

    def test_scale_must_be_positive(self):
        problem = make_lista_problem(n_train=4, n_test=4, seed=0)
        layer = ListaParams.ista(problem.D, problem.eta, problem.lasso_lambda)
        for bad in (0.0, -1.0, float("nan")):
            with pytest.raises(ValidationError):
                replace(layer, scale=bad)


class TestNetworkValidation:
    def test_gamma_mismatch(self, rng):
        a = BlockParams.random(2, 4, rng, gamma=Ratio(1, 2))
        b = BlockParams.random(2, 4, rng, gamma=Ratio(3, 4))
        with pytest.raises(ValidationError):
            Network((a, b))

    def test_dim_mismatch(self, rng):
        with pytest.raises(ShapeError):
            Network((BlockParams.random(2, 4, rng), BlockParams.random(3, 4, rng)))

    def test_tied_requires_one_parameter_set(self, rng):
        with pytest.raises(ValidationError):
            Network((BlockParams.random(2, 4, rng), BlockParams.random(2, 4, rng)), tied=True)

    def test_unknown_v0_mode(self, rng):
        with pytest.raises(ValidationError):
            Network((BlockParams.random(2, 4, rng),), v0_mode="random")

    def test_bad_block_shapes(self):
        with pytest.raises(ShapeError):
            BlockParams(np.zeros((4, 2)), np.zeros((4, 3)), np.zeros(4))


class TestRevNet:
    def test_step_inverse(self, rng):
        phi = BlockParams.random(3, 6, rng)
        psi = BlockParams.random(3, 6, rng)
        x, v = rng.standard_normal(3), rng.standard_normal(3)
        v1, x1 = revnet_step(x, v, phi, psi)
        xb, vb = revnet_inverse_step(x1, v1, phi, psi)
        np.testing.assert_allclose(xb, x, atol=1e-12)
        np.testing.assert_allclose(vb, v, atol=1e-12)

    def test_network_inverse(self, rng):
        net = RevNetwork(tuple((BlockParams.random(3, 6, rng), BlockParams.random(3, 6, rng)) for _ in range(5)))
        x0 = rng.standard_normal(3)
        x, (xf, vf) = revnet_forward(net, x0)
        xb, vb = revnet_inverse(net, xf, vf)
        np.testing.assert_allclose(xb, x0, atol=1e-10)
        np.testing.assert_allclose(vb, x0, atol=1e-10)

    def test_linear_layers(self, rng):
        A, B = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        x, v = rng.standard_normal(3), rng.standard_normal(3)
        v1, x1 = revnet_step(x, v, lambda z, context=None: A @ z, lambda z, context=None: B @ z)
        np.testing.assert_allclose(v1, v + A @ x, rtol=1e-14)
        np.testing.assert_allclose(x1, x + B @ (v + A @ x), rtol=1e-14)

    def test_zero_layers_are_identity(self, rng):
        zero = BlockParams.zeros(3, 4)
        x, v = rng.standard_normal(3), rng.standard_normal(3)
        v1, x1 = revnet_step(x, v, zero, zero)
        np.testing.assert_array_equal(x1, x)
        np.testing.assert_array_equal(v1, v)
