import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit, logit

from oracles import direct_soft_gate

from gumbel_prune import GateParams, GateSample, Rng, gumbel_noise, hard_gate_st, sample_gates, soft_gate
from gumbel_prune.gates import hard_gate_st_backward, soft_gate_grad


class FixedUniform:
    """Stand-in generator that always returns the same u."""

    def __init__(self, u):
        self.u = u

    def uniform(self, size=None):
        return self.u if size is None else np.full(size, self.u)


class TestGumbelNoise:
    def test_u_inverse_e_gives_zero(self):
        assert gumbel_noise(FixedUniform(math.exp(-1))) == pytest.approx(0.0, abs=1e-15)

    def test_u_exp_minus_e_gives_minus_one(self):
        assert gumbel_noise(FixedUniform(math.exp(-math.e))) == pytest.approx(-1.0, abs=1e-12)

    def test_mean_is_euler_gamma(self):
        xi = gumbel_noise(Rng(11).stream("noise"), 10**6)
        assert abs(xi.mean() - np.euler_gamma) < 0.01

    def test_finite(self):
        assert np.isfinite(gumbel_noise(Rng(0), 10**5)).all()


class TestSoftGate:
    def test_symmetric_case(self):
        assert soft_gate(0.0, 0.7, 1.3, 1.3) == 0.5

    def test_direct_form_value(self):
        direct = direct_soft_gate(0.5, 1.0, 2.0, 0.0)
        assert soft_gate(0.0, 1.0, 2.0, 0.0) == pytest.approx(direct, abs=1e-12)
        assert soft_gate(0.0, 1.0, 2.0, 0.0) == pytest.approx(0.8807970779778823, abs=1e-15)

    def test_high_temperature_limit(self):
        assert soft_gate(3.0, 1e12, 2.0, -1.0) == pytest.approx(0.5, abs=1e-10)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_rejects_nonpositive_tau(self, tau):
        with pytest.raises(ValueError):
            soft_gate(0.0, tau, 0.0, 0.0)
        with pytest.raises(ValueError):
            GateParams(np.zeros(3), tau)

    def test_extreme_arguments_stay_finite(self):
        s = soft_gate(np.array([-800.0, 800.0]), 0.01, 0.0, 0.0)
        assert np.array_equal(s, [0.0, 1.0])

    @settings(max_examples=300, deadline=None)
    @given(
        theta=st.floats(0.01, 0.99),
        tau=st.floats(0.2, 5.0),
        xi=st.floats(-3, 8),
        xi_p=st.floats(-3, 8),
    )
    def test_matches_two_term_softmax(self, theta, tau, xi, xi_p):
        assert abs(soft_gate(logit(theta), tau, xi, xi_p) - direct_soft_gate(theta, tau, xi, xi_p)) <= 1e-12


class TestHardGate:
    def test_values(self):
        assert hard_gate_st(0.7) == 1.0
        assert hard_gate_st(0.2) == 0.0

    def test_tie_goes_to_zero(self):
        assert hard_gate_st(0.5) == 0.0
        assert hard_gate_st(np.nextafter(0.5, 1)) == 1.0

    def test_backward_is_identity(self):
        g = np.array([0.3, -2.0, 5.0])
        assert np.array_equal(hard_gate_st_backward(g), g)

    @pytest.mark.parametrize("phi,tau,xi,xi_p", [(0.3, 0.5, 0.1, -0.4), (-1.2, 1.0, 0.7, 0.2), (2.0, 2.0, -1.0, 0.5)])
    def test_chain_derivative_matches_finite_difference(self, phi, tau, xi, xi_p):
        # straight-through: the derivative of the gate output is that of soft
        h = 1e-6
        fd = (soft_gate(phi + h, tau, xi, xi_p) - soft_gate(phi - h, tau, xi, xi_p)) / (2 * h)
        s = soft_gate(phi, tau, xi, xi_p)
        analytic = hard_gate_st_backward(1.0) * soft_gate_grad(s, tau)
        assert abs(analytic - fd) / abs(fd) < 1e-8


class TestSampleGates:
    def test_strong_logits_always_keep(self):
        params = GateParams(np.full(3, 20.0), 1.0)
        r = Rng(0)
        for _ in range(1000):
            assert np.array_equal(sample_gates(params, r).hard, np.ones(3))

    @pytest.mark.parametrize("p", [0.5, 0.9])
    def test_rate_at_low_temperature(self, p):
        s = sample_gates(GateParams(np.full(10**5, logit(p)), 0.1), Rng(4).stream(str(p)))
        assert abs(s.hard.mean() - p) <= 0.01

    @pytest.mark.parametrize("tau", [0.5, 0.2, 0.1])
    def test_rate_matches_probability_at_each_temperature(self, tau):
        # xi - xi' is standard logistic, so P(hard = 1) = sigmoid(phi) for every tau
        phi = logit(0.3)
        s = sample_gates(GateParams(np.full(10**5, phi), tau), Rng(8).stream(f"t{tau}"))
        assert abs(s.hard.mean() - 0.3) <= 0.01

    def test_noise_recorded_and_replayable(self):
        params = GateParams(Rng(1).normal(50), 0.7)
        s = sample_gates(params, Rng(2))
        again = s.replay(params.logits)
        assert np.array_equal(again.soft, s.soft)
        assert np.array_equal(again.hard, s.hard)
        assert np.array_equal(s.soft, expit((params.logits + s.xi - s.xi_prime) / 0.7))

    def test_hard_is_threshold_of_soft(self):
        s = sample_gates(GateParams(Rng(3).normal(1000), 0.4), Rng(5))
        assert set(np.unique(s.hard)) <= {0.0, 1.0}
        assert np.array_equal(s.hard, (s.soft > 0.5).astype(float))

    def test_determinism(self):
        params = GateParams(np.linspace(-2, 2, 40), 0.5)
        a, b = Rng(77), Rng(77)
        for _ in range(5):
            sa, sb = sample_gates(params, a), sample_gates(params, b)
            assert np.array_equal(sa.hard, sb.hard) and np.array_equal(sa.xi, sb.xi)


def test_constant_sample_pins_values():
    mask = np.array([1.0, 0.0, 1.0])
    s = GateSample.constant(mask)
    assert np.array_equal(s.hard, mask)
    assert np.array_equal(hard_gate_st(s.soft), mask)
    assert len(s) == 3


def test_gate_params_probs():
    p = GateParams(np.array([0.0, logit(0.9)]), 1.0)
    assert np.allclose(p.probs, [0.5, 0.9])
    assert len(p) == 2
