"""Integrators against closed forms and against the discrete networks."""

import math

import numpy as np
import pytest

from momrev.errors import DivergenceError, ValidationError
from momrev.momentum_net import BlockParams, Network, forward, resnet_step
from momrev.numerics import matrix_exp
from momrev.odesim import (
    convergence_eps_to_infty,
    convergence_eps_to_zero,
    crossing_witness,
    damped_oscillator_check,
    first_order_embedding,
    free_velocity_flow,
    integrate_first_order,
    integrate_second_order,
    integrate_undamped,
)
from momrev.revarith import Ratio


def _neg(x):
    return -x


class TestFirstOrder:
    def test_zero_field_is_constant(self):
        traj = integrate_first_order(lambda x: np.zeros_like(x), [1.0, -2.0], 1.0, 0.1)
        np.testing.assert_array_equal(traj.xs, np.tile([1.0, -2.0], (11, 1)))

    def test_unit_step_is_resnet_step(self, rng):
        block = BlockParams.random(3, 5, rng)
        x0 = rng.standard_normal(3)
        traj = integrate_first_order(lambda x: block(x), x0, 1.0, 1.0)
        np.testing.assert_allclose(traj.final, resnet_step(x0, block), rtol=1e-15)

    def test_exponential_decay_error_is_first_order(self):
        errors = [abs(integrate_first_order(_neg, [1.0], 1.0, h).final[0] - math.exp(-1)) for h in (1e-3, 1e-4)]
        assert errors[0] < 1e-3
        assert errors[1] < errors[0] / 5

    def test_step_must_divide_horizon(self):
        with pytest.raises(ValidationError):
            integrate_first_order(_neg, [1.0], 1.0, 0.3)

    def test_blow_up(self):
        with pytest.raises(DivergenceError):
            integrate_first_order(lambda x: 1e200 * x, [1.0], 1.0, 0.1)


class TestSecondOrder:
    @pytest.mark.parametrize("gamma", [Ratio(1, 2), Ratio(9, 10)])
    def test_unit_step_matches_momentum_network(self, gamma, rng):
        block = BlockParams.random(2, 4, rng, gamma=gamma)
        net = Network.tied_weights(block, 6, frac_bits=None)
        x0 = rng.standard_normal(2)
        traj = integrate_second_order(lambda x: block(x), x0, 0.0, 1.0 / gamma.complement, 6.0, 1.0,
                                      damping=gamma.complement)
        _, state = forward(net, x0)
        np.testing.assert_array_equal(traj.final, state.x)
        np.testing.assert_array_equal(traj.vs[-1], state.v)

    def test_damping_out_of_range(self):
        with pytest.raises(ValidationError):
            integrate_second_order(_neg, [1.0], [0.0], 1.0, 1.0, 0.5, damping=1.5)

    @pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
    def test_damped_oscillator_closed_form(self, eps):
        got, exact, rel = damped_oscillator_check(eps, x0=1.5, h=1e-5)
        assert exact == pytest.approx(-1.5 * math.exp(-1.0 / (2 * eps)))
        assert rel <= 1e-3
        assert got < 0

    def test_damped_oscillator_error_shrinks_with_h(self):
        assert damped_oscillator_check(1.0, h=1e-5)[2] < damped_oscillator_check(1.0, h=1e-4)[2]

    def test_free_velocity_flow_hits_target(self):
        x0, target = np.array([0.5, -1.0]), np.array([2.0, 3.0])
        v0 = free_velocity_flow(target, x0, eps=1.0)
        np.testing.assert_allclose(x0 + v0 * (1 - math.exp(-1.0)), target, rtol=1e-14)
        traj = integrate_second_order(lambda x: np.zeros_like(x), x0, v0, 1.0, 1.0, 1e-4)
        np.testing.assert_allclose(traj.final, target, atol=1e-3)

    def test_first_order_embedding(self, rng):
        theta = rng.standard_normal((2, 2)) / 2
        x0 = rng.standard_normal(2)
        traj = integrate_second_order(first_order_embedding(theta, 0.5), x0, theta @ x0, 0.5, 1.0, 1e-4)
        np.testing.assert_allclose(traj.final, matrix_exp(theta) @ x0, atol=1e-3)

    def test_undamped_harmonic(self):
        traj = integrate_undamped(_neg, [1.0], [0.0], 1.0, 1e-4)
        assert traj.final[0] == pytest.approx(math.cos(1.0), abs=1e-3)

    def test_eps_must_be_positive(self):
        with pytest.raises(ValidationError):
            integrate_second_order(_neg, [1.0], [0.0], 0.0, 1.0, 0.1)


class TestLimits:
    def test_eps_to_zero_errors_decrease(self):
        errs = [e for _, e in convergence_eps_to_zero(_neg, [1.0], [0.0], [0.1, 0.05, 0.01], h=1e-4)]
        assert all(b < a for a, b in zip(errs, errs[1:]))

    def test_eps_to_infty_errors_decrease(self):
        errs = [e for _, e in convergence_eps_to_infty(_neg, [1.0], [0.0], [1.0, 10.0, 100.0], h=1e-3)]
        assert all(b < a for a, b in zip(errs, errs[1:]))

    def test_zero_field_has_zero_error(self):
        zero = lambda x: np.zeros_like(x)
        assert all(e == 0.0 for _, e in convergence_eps_to_zero(zero, [1.0], [0.0], [0.1, 0.01], h=1e-2))
        assert all(e == 0.0 for _, e in convergence_eps_to_infty(zero, [1.0], [0.0], [1.0, 10.0], h=1e-2))

    def test_eps_list_must_decrease(self):
        with pytest.raises(ValidationError):
            convergence_eps_to_zero(_neg, [1.0], [0.0], [0.01, 0.1], h=1e-2)


class TestCrossing:
    def test_all_trajectories_vanish_at_pi(self):
        bundle = crossing_witness()
        for traj in bundle.closed_form:
            assert abs(traj.final[0]) <= 1e-6
            assert traj.times[-1] == pytest.approx(bundle.T)

    def test_integrated_matches_closed_form(self):
        bundle = crossing_witness(x0s=(1.0,))
        diff = np.max(np.abs(bundle.integrated[0].xs - bundle.closed_form[0].xs))
        assert diff <= 1e-4

    def test_other_eps_rejected(self):
        with pytest.raises(ValidationError):
            crossing_witness(eps=2.0)

    def test_csv_rows(self):
        bundle = crossing_witness(x0s=(2.0,), steps=100)
        header, rows = bundle.closed_form[0].csv_rows()
        rows = list(rows)
        assert header == ["t", "x0", "v0"]
        assert len(rows) == 101
        assert rows[0] == [0.0, 2.0, -1.0]
