import math

import numpy as np
import pytest

from consensuslab.analysis import (GainMatrix, analyze, as_decision_homogeneous_symmetric,
                                   as_rate_matrices, certificate_matrices,
                                   heterogeneous_gain_bands, lambda_K_bound, ms_coefficient,
                                   ms_decision_homogeneous, ms_rate_bounds, mu_estimate,
                                   optimal_gain, psi_f_matrix, small_gain_interval,
                                   steady_state_error_bounds, symmetric_rate_envelope,
                                   two_agent_closed_form)
from consensuslab.graph import build_graph, complete_graph, random_connected_graph, spectrum
from consensuslab.linalg import kron, lambda_min
from consensuslab.noise import NoiseModel

K2 = complete_graph(2)
K3 = complete_graph(3)
K4 = complete_graph(4)
DISCONNECTED = build_graph(4, [(0, 1), (2, 3)])


def homogeneous_setup(g, k, sigma, n=1, symmetric=False):
    return spectrum(g), NoiseModel.homogeneous(sigma, symmetric), GainMatrix.scalar(k, n)


class TestPsiF:
    def test_k2(self):
        s, _, gain = homogeneous_setup(K2, 1.0, 1.0)
        np.testing.assert_allclose(psi_f_matrix(s, gain, 1.0), [[1.0]], atol=1e-14)

    def test_zero_gain(self):
        s, _, gain = homogeneous_setup(K4, 0.0, 1.0, n=2)
        np.testing.assert_array_equal(psi_f_matrix(s, gain, 1.0), 0.0)

    def test_k4_closed_form(self):
        k, sb = 0.7, 0.9
        s, _, gain = homogeneous_setup(K4, k, sb, n=2)
        expected = (k - 0.75 * k**2 * sb**2) * kron(s.lambda0, np.eye(2))
        np.testing.assert_allclose(psi_f_matrix(s, gain, sb), expected, atol=1e-12)

    def test_uses_spectral_norm_of_gain(self):
        s = spectrum(K2)
        K = np.array([[1.0, 2.0], [0.0, 1.0]])
        M = psi_f_matrix(s, GainMatrix.matrix(K), 1.0)
        nrm2 = np.linalg.norm(K, 2) ** 2
        expected = kron(s.lambda0, 0.5 * (K + K.T)) - 0.5 * nrm2 * kron(s.lambda0, np.eye(2))
        np.testing.assert_allclose(M, expected, atol=1e-12)


class TestGainInterval:
    def test_examples(self):
        assert small_gain_interval(2, 1.0).upper == 2.0
        assert small_gain_interval(4, 1.0).upper == pytest.approx(4 / 3)
        assert small_gain_interval(10**6, 1.0).upper == pytest.approx(1.0, rel=1e-5)

    def test_noise_free_convention(self):
        iv = small_gain_interval(3, 0.0)
        assert (iv.lower, iv.upper) == (0.0, math.inf)
        assert 1e9 in iv and 0.0 not in iv

    def test_optimal_gain(self):
        assert optimal_gain(2, 1.0) == 1.0
        assert optimal_gain(4, 1.0) == pytest.approx(2 / 3)
        for N in range(2, 9):
            for sigma in (0.3, 1.0, 2.5):
                assert optimal_gain(N, sigma) == pytest.approx(0.5 * small_gain_interval(N, sigma).upper)

    def test_optimal_gain_maximises_coefficient(self):
        for N in range(2, 9):
            for sigma in (0.5, 1.0, 2.0):
                k = optimal_gain(N, sigma)
                c = ms_coefficient(N, k, sigma)
                assert c > ms_coefficient(N, 0.5 * k, sigma)
                assert c > ms_coefficient(N, 1.5 * k, sigma)


class TestCertificateMatrices:
    def test_k2(self):
        s, noise, gain = homogeneous_setup(K2, 1.0, 1.0)
        Phi, Psi = certificate_matrices(K2, s, noise, gain)
        np.testing.assert_allclose(Phi, [[2.0]], atol=1e-14)
        np.testing.assert_allclose(Psi, [[2.0]], atol=1e-14)
        assert ms_rate_bounds(Psi) == pytest.approx((2.0, 2.0))

    def test_zero_gain(self):
        s, noise, gain = homogeneous_setup(K3, 0.0, 1.0)
        Phi, Psi = certificate_matrices(K3, s, noise, gain)
        np.testing.assert_array_equal(Phi, 0.0)
        np.testing.assert_array_equal(Psi, 0.0)

    def test_k4_rate_bounds(self):
        k = 0.5
        s, noise, gain = homogeneous_setup(K4, k, 1.0)
        lo, hi = ms_rate_bounds(certificate_matrices(K4, s, noise, gain)[1])
        c = 2 * k - 1.5 * k**2
        assert lo == pytest.approx(4 * c) and hi == pytest.approx(4 * c)

    def test_outside_interval_gives_negative_exponent(self):
        s, noise, gain = homogeneous_setup(K2, 2.2, 1.0)
        assert ms_rate_bounds(certificate_matrices(K2, s, noise, gain)[1])[0] < 0

    def test_rejects_nonlinear(self):
        s = spectrum(K2)
        with pytest.raises(ValueError, match="linear"):
            certificate_matrices(K2, s, NoiseModel.general(np.tanh, 1.0), GainMatrix.scalar(1.0))

    def test_reduced_channel_sum_identity(self, graphs50):
        for g in graphs50:
            s = spectrum(g)
            N = g.n_agents
            phi = s.phi
            from consensuslab.graph import channel_matrix
            total = sum(phi.T @ channel_matrix(g, i, j).T @ phi @ phi.T @ channel_matrix(g, i, j) @ phi
                        for i in range(N) for j in range(N) if i != j)
            assert np.abs(total - 2 * (N - 1) / N * s.lambda0).max() <= 1e-10

    def test_generic_matrix_noise_is_symmetric(self):
        rng = np.random.default_rng(3)
        g = random_connected_graph(5, rng)
        noise = NoiseModel.linear_matrix({c: rng.standard_normal((2, 2)) for c in g.ordered_edges})
        gain = GainMatrix.matrix(rng.standard_normal((2, 2)))
        Phi, Psi = certificate_matrices(g, spectrum(g), noise, gain)
        np.testing.assert_array_equal(Phi, Phi.T)
        np.testing.assert_array_equal(Psi, Psi.T)
        assert lambda_min(Phi) >= -1e-12


class TestSteadyStateBounds:
    def test_k2_linear_bound_is_tight(self):
        s, noise, gain = homogeneous_setup(K2, 1.0, 1.0)
        b = steady_state_error_bounds(K2, s, noise, gain, [1.0, -1.0])
        assert b.linear_bound == pytest.approx(1.0, rel=1e-12)
        assert b.linear_bound == pytest.approx(two_agent_closed_form(1.0, 1.0, 1.0, 1.0, -1.0).ms_error,
                                               rel=1e-12)

    def test_general_bound_dominates_exact_two_agent_error(self):
        s, noise, gain = homogeneous_setup(K2, 1.0, 1.0)
        b = steady_state_error_bounds(K2, s, noise, gain, [1.0, -1.0])
        assert b.general_bound >= 1.0 - 1e-12

    def test_zero_initial_error(self):
        s, noise, gain = homogeneous_setup(K4, 0.5, 1.0)
        b = steady_state_error_bounds(K4, s, noise, gain, [3.0] * 4)
        assert (b.general_bound, b.linear_bound, b.asymptotic_bound) == (0.0, 0.0, 0.0)

    def test_degree_expression(self):
        s, noise, gain = homogeneous_setup(K4, 0.5, 1.0)
        x0 = np.array([1.0, 0.0, 0.0, 0.0])
        x0 = x0 / np.linalg.norm(x0 - x0.mean())          # |delta0|^2 = 1
        b = steady_state_error_bounds(K4, s, noise, gain, x0)
        assert b.asymptotic_bound == pytest.approx(0.225)

    def test_failed_certificate_is_unbounded(self):
        s, noise, gain = homogeneous_setup(DISCONNECTED, 0.5, 1.0)
        b = steady_state_error_bounds(DISCONNECTED, s, noise, gain, [1.0, -1.0, 2.0, 0.0])
        assert b.general_bound == math.inf and b.linear_bound == math.inf


class TestTwoAgent:
    def test_unit_case(self):
        r = two_agent_closed_form(1.0, 1.0, 1.0, 1.0, -1.0)
        assert r.ms_error == 1.0 and r.as_iff and r.ms_iff

    def test_large_gain(self):
        r = two_agent_closed_form(2.2, 1.0, 1.0, 1.0, -1.0)
        assert not r.ms_iff and r.ms_error == math.inf

    def test_negative_gain(self):
        r = two_agent_closed_form(-3.0, 1.0, 1.0, 1.0, -1.0)
        assert r.as_iff and not r.ms_iff

    def test_rejects_nonpositive_intensity(self):
        with pytest.raises(ValueError):
            two_agent_closed_form(1.0, 0.0, 1.0, 1.0, -1.0)


class TestDecisions:
    def test_ms_homogeneous(self):
        assert ms_decision_homogeneous(K2, 1.0, 1.0)
        assert not ms_decision_homogeneous(K2, 2.2, 1.0)
        for k in (-1.0, 0.1, 0.5, 1.0, 10.0):
            assert not ms_decision_homogeneous(DISCONNECTED, k, 1.0)

    def test_as_homogeneous_symmetric(self):
        assert as_decision_homogeneous_symmetric(-3.0, 1.0, True)
        assert not as_decision_homogeneous_symmetric(-1.0, 1.0, True)
        assert as_decision_homogeneous_symmetric(0.1, 1.0, True)
        assert not as_decision_homogeneous_symmetric(0.1, 1.0, False)

    @pytest.mark.parametrize("k, suff, nec", [(0.8, True, True), (4.0, False, True), (9.0, False, False)])
    def test_bands(self, k, suff, nec):
        noise = NoiseModel.linear_scalar({(0, 1): 0.5, (1, 0): 1.5})
        b = heterogeneous_gain_bands(K2, noise, k)
        assert (b.sufficient, b.necessary) == (suff, nec)

    def test_band_nesting(self, graphs50):
        rng = np.random.default_rng(8)
        for g in graphs50[:20]:
            sig = float(rng.uniform(0.2, 2.0))
            for k in np.linspace(-1, 6, 15):
                equal = heterogeneous_gain_bands(g, NoiseModel.linear_scalar(
                    {c: sig for c in g.ordered_edges}), k)
                if ms_decision_homogeneous(g, k, sig):
                    assert equal.sufficient
                mixed = NoiseModel.linear_scalar({c: float(rng.uniform(0.2, 2.0)) for c in g.ordered_edges})
                b = heterogeneous_gain_bands(g, mixed, k)
                assert (not b.sufficient) or b.necessary


class TestAlmostSure:
    def test_lambda_K_k2(self):
        s, noise, gain = homogeneous_setup(K2, 1.0, 1.0)
        assert lambda_K_bound(K2, s, noise, gain) == pytest.approx(6.0)

    def test_zero_gain(self):
        s, noise, gain = homogeneous_setup(K3, 0.0, 1.0)
        assert lambda_K_bound(K3, s, noise, gain) == 0.0
        assert mu_estimate(K3, s, noise, gain, restarts=4).value == pytest.approx(0.0, abs=1e-12)

    def test_mu_k2(self):
        s, noise, gain = homogeneous_setup(K2, 1.0, 1.0)
        assert mu_estimate(K2, s, noise, gain).value == pytest.approx(6.0, abs=1e-10)

    def test_lambda_K_dominates_psi_min(self, graphs50):
        rng = np.random.default_rng(21)
        for g in graphs50[:15]:
            s = spectrum(g)
            noise = NoiseModel.linear_scalar({c: float(rng.uniform(0.1, 2)) for c in g.ordered_edges})
            gain = GainMatrix.scalar(float(rng.uniform(-2, 2)))
            _, Psi = certificate_matrices(g, s, noise, gain)
            assert lambda_K_bound(g, s, noise, gain) >= lambda_min(Psi) - 1e-12

    def test_mu_not_below_certified_floor_on_random_k3(self):
        rng = np.random.default_rng(31)
        s = spectrum(K3)
        for _ in range(25):
            noise = NoiseModel.linear_scalar({c: float(rng.uniform(0.2, 2.0)) for c in K3.ordered_edges})
            gain = GainMatrix.scalar(float(rng.uniform(-2.0, 2.0)))
            est = mu_estimate(K3, s, noise, gain, restarts=16, seed=int(rng.integers(1 << 31)))
            assert est.value >= est.floor - 1e-8

    def test_mu_is_seed_deterministic(self):
        s, noise, gain = homogeneous_setup(K4, 0.4, 1.0, n=2)
        a = mu_estimate(K4, s, noise, gain, restarts=8, seed=3)
        b = mu_estimate(K4, s, noise, gain, restarts=8, seed=3)
        assert a.value == b.value


class TestRateMatrices:
    def test_k2(self):
        s, noise, gain = homogeneous_setup(K2, 1.0, 1.0, symmetric=True)
        A, B = as_rate_matrices(K2, s, noise, gain)
        np.testing.assert_allclose(A, [[3.0]], atol=1e-14)
        np.testing.assert_allclose(B, [[-2.0]], atol=1e-14)

    def test_zero_gain(self):
        s, noise, gain = homogeneous_setup(K3, 0.0, 1.0, symmetric=True)
        A, B = as_rate_matrices(K3, s, noise, gain)
        np.testing.assert_array_equal(A, 0.0)
        np.testing.assert_array_equal(B, 0.0)

    def test_rejections(self):
        s = spectrum(K2)
        with pytest.raises(ValueError, match="symmetric"):
            as_rate_matrices(K2, s, NoiseModel.homogeneous(1.0), GainMatrix.scalar(1.0))
        with pytest.raises(ValueError, match="symmetric gain"):
            as_rate_matrices(K2, s, NoiseModel.homogeneous(1.0, True),
                             GainMatrix.matrix([[1.0, 1.0], [0.0, 1.0]]))

    def test_envelope_constants(self):
        s, noise, gain = homogeneous_setup(K3, -3.0, 1.0, symmetric=True)
        env = symmetric_rate_envelope(*as_rate_matrices(K3, s, noise, gain))
        assert env["rate_slow"] == pytest.approx(4.5)
        assert env["fluctuation"] == pytest.approx(9.0)


class TestAnalyze:
    def test_k2_report(self):
        rep = analyze(K2, NoiseModel.homogeneous(1.0), GainMatrix.scalar(1.0), [1.0, -1.0])
        assert rep.ms_iff and rep.ms_sufficient and rep.as_sufficient
        assert (rep.gain_interval.lower, rep.gain_interval.upper) == (0.0, 2.0)
        assert rep.ss_error_bounds.linear_bound == pytest.approx(1.0, rel=1e-12)
        assert rep.two_agent.ms_error == 1.0
        assert rep.optimal_k == 1.0

    def test_disconnected(self):
        rep = analyze(DISCONNECTED, NoiseModel.homogeneous(1.0), GainMatrix.scalar(0.5),
                      [1.0, -1.0, 2.0, 0.0], mu_restarts=4)
        assert not rep.connected and not rep.ms_iff and not rep.ms_sufficient
        assert rep.ss_error_bounds.general_bound == math.inf
        assert rep.ss_error_bounds.linear_bound == math.inf

    def test_negative_gain_symmetric(self):
        rep = analyze(K3, NoiseModel.homogeneous(1.0, True), GainMatrix.scalar(-3.0), [1.0, 0.0, -1.0],
                      mu_restarts=4)
        assert rep.as_sufficient and not rep.ms_iff and not rep.ms_sufficient

    def test_verdicts_reproducible_from_matrices(self):
        rep = analyze(K4, NoiseModel.homogeneous(0.8), GainMatrix.scalar(0.6, 2), np.arange(8.0),
                      mu_restarts=4)
        for M in (rep.psi_f, rep.phi_K, rep.psi_K):
            np.testing.assert_array_equal(M, M.T)
        assert rep.ms_sufficient == (lambda_min(rep.psi_f) > 0 or lambda_min(rep.psi_K) > 0)

    def test_dimension_mismatch(self):
        noise = NoiseModel.linear_matrix({c: np.eye(2) for c in K2.ordered_edges})
        with pytest.raises(ValueError, match="gain is 1x1"):
            analyze(K2, noise, GainMatrix.scalar(1.0), [1.0, -1.0])
