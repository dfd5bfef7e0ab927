import math

import numpy as np
import pytest

from consensuslab.analysis import analyze
from consensuslab.config import parse_config
from consensuslab.simulation import Ensemble, run_ensemble
from consensuslab.verify import (FAIL, PASS, SKIPPED, CheckResult, check_as_gap, check_lil_envelope,
                                 check_ms_sandwich, check_ms_threshold, check_steady_state,
                                 check_two_agent, check_unbiased, delta0_sq, lil_exceedance,
                                 ms_log_slope, needs_trajectories, run_checks)


def k2_text(k=1.0, symmetric=False, sigma=1.0, horizon=4.0, trials=200, extra=""):
    return (f"[graph]\nn_agents = 2\nedges = 1-2\n[noise]\nkind = homogeneous\nsigma = {sigma}\n"
            f"symmetric = {str(symmetric).lower()}\n[gain]\nk = {k}\n[initial]\nx0 = 1; -1\n"
            f"[sim]\ndt = 0.001\nhorizon = {horizon}\ntrials = {trials}\nseed = 12345\n"
            f"[analysis]\nmu_restarts = 4\n{extra}")


def setup(text, keep=False):
    cfg = parse_config(text)
    rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=cfg.analysis.mu_restarts)
    ens = run_ensemble(cfg.sim_config(), keep_delta_norms=keep)
    return cfg, rep, ens


def fake_ensemble(times, ms, trials=10, consensus=None, slopes=None):
    times = np.asarray(times, dtype=float)
    ms = np.asarray(ms, dtype=float)
    cons = np.zeros((trials, 1)) if consensus is None else np.asarray(consensus, dtype=float)
    return Ensemble(times=times, ms_curve=ms, ms_se=0.01 * ms, ms_count=np.full(times.size, trials),
                    consensus_mean=np.zeros((times.size, 1)), consensus_se=np.zeros((times.size, 1)),
                    terminal_consensus=cons, terminal_delta_norm=np.zeros(trials),
                    as_slopes=np.full(trials, -1.0) if slopes is None else np.asarray(slopes, float),
                    diverged=np.zeros(trials, bool), x0_mean=np.zeros(1), seed=0, trials=trials)


class TestLine:
    def test_format(self):
        line = CheckResult("x", PASS, 1.0, 2.0, 0.5, "why").line()
        assert line.startswith("PASS    x: measured=1 predicted=2 tolerance=0.5")
        assert CheckResult("y", SKIPPED, detail="n/a").line() == "SKIPPED y: n/a"


class TestHelpers:
    def test_delta0(self):
        cfg = parse_config(k2_text())
        assert delta0_sq(cfg) == 2.0

    def test_ms_log_slope(self):
        t = np.linspace(0, 4, 41)
        assert ms_log_slope(fake_ensemble(t, np.exp(0.7 * t)), 0.5) == pytest.approx(0.7)

    def test_lil_exceedance(self):
        t = np.linspace(0, 20, 201)
        D = (-3 * t)[None, :]
        frac, n = lil_exceedance(D, t, 1.0, 1.0, 2.0, 10.0, 20.0, 0.0)
        assert n == 101 and frac == 0.0
        frac, _ = lil_exceedance(D, t, 1.0, 1.0, 2.0, 10.0, 20.0, -1e9)
        assert frac == 1.0

    def test_needs_trajectories(self):
        assert needs_trajectories(parse_config(k2_text(symmetric=True)))
        assert not needs_trajectories(parse_config(k2_text(symmetric=False)))


class TestSyntheticChecks:
    def test_sandwich_pass_and_fail(self):
        cfg = parse_config(k2_text())
        rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=2)
        t = np.linspace(0, 3, 31)
        assert check_ms_sandwich(cfg, rep, fake_ensemble(t, 2 * np.exp(-2 * t)), cfg.verify).status == PASS
        assert check_ms_sandwich(cfg, rep, fake_ensemble(t, 2 * np.exp(-1 * t)), cfg.verify).status == FAIL

    def test_threshold_inside(self):
        cfg = parse_config(k2_text())
        rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=2)
        t = np.linspace(0, 5, 51)
        assert check_ms_threshold(cfg, rep, fake_ensemble(t, np.exp(-2 * t)), cfg.verify).status == PASS
        assert check_ms_threshold(cfg, rep, fake_ensemble(t, np.exp(-0.5 * t)), cfg.verify).status == FAIL

    def test_threshold_outside(self):
        cfg = parse_config(k2_text(k=2.2))
        rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=2)
        t = np.linspace(0, 5, 51)
        assert check_ms_threshold(cfg, rep, fake_ensemble(t, np.exp(0.4 * t)), cfg.verify).status == PASS
        assert check_ms_threshold(cfg, rep, fake_ensemble(t, np.exp(-0.4 * t)), cfg.verify).status == FAIL

    def test_unbiased_detects_bias(self):
        cfg = parse_config(k2_text())
        rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=2)
        rng = np.random.default_rng(0)
        good = fake_ensemble([0, 1], [1, 1], trials=400, consensus=rng.standard_normal((400, 1)))
        bad = fake_ensemble([0, 1], [1, 1], trials=400, consensus=1 + rng.standard_normal((400, 1)))
        assert check_unbiased(cfg, rep, good, cfg.verify).status == PASS
        assert check_unbiased(cfg, rep, bad, cfg.verify).status == FAIL

    def test_as_gap_requires_all_three(self):
        text = (k2_text(k=-3.0, symmetric=True).replace("n_agents = 2\nedges = 1-2",
                                                          "n_agents = 3\nedges = 1-2, 1-3, 2-3")
                .replace("x0 = 1; -1", "x0 = 1; 0; -1"))
        cfg = parse_config(text)
        rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=2)
        t = np.linspace(0, 4, 41)
        rising = fake_ensemble(t, np.exp(t), slopes=np.full(10, -6.0))
        flat = fake_ensemble(t, np.exp(-t), slopes=np.full(10, -6.0))
        slow = fake_ensemble(t, np.exp(t), slopes=np.full(10, -1.0))
        assert check_as_gap(cfg, rep, rising, cfg.verify).status == PASS
        assert check_as_gap(cfg, rep, flat, cfg.verify).status == FAIL
        assert check_as_gap(cfg, rep, slow, cfg.verify).status == FAIL


class TestSkips:
    def test_symmetric_wiring_skips_independent_checks(self):
        cfg = parse_config(k2_text(symmetric=True))
        rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=2)
        ens = fake_ensemble([0, 1], [2, 1])
        for check in (check_ms_sandwich, check_two_agent, check_ms_threshold):
            assert check(cfg, rep, ens, cfg.verify).status == SKIPPED

    def test_lil_without_trajectories(self):
        cfg = parse_config(k2_text(symmetric=True))
        rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=2)
        assert check_lil_envelope(cfg, rep, fake_ensemble([0, 20], [1, 1]), cfg.verify).status == SKIPPED

    def test_as_gap_off_regime(self):
        cfg = parse_config(k2_text(symmetric=True))
        rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=2)
        assert check_as_gap(cfg, rep, fake_ensemble([0, 1], [1, 1]), cfg.verify).status == SKIPPED

    def test_steady_state_without_certificate(self):
        cfg = parse_config(k2_text(k=2.2))
        rep = analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=2)
        assert check_steady_state(cfg, rep, fake_ensemble([0, 1], [1, 1]), cfg.verify).status == SKIPPED


class TestEndToEnd:
    def test_k2_inside_interval(self):
        cfg, rep, ens = setup(k2_text(horizon=6.0, trials=400,
                                      extra="[verify]\nchecks = steady_state, unbiased, ms_threshold, as_rate\n"))
        results = {r.name: r for r in run_checks(cfg, rep, ens)}
        assert list(results) == ["steady_state", "unbiased", "ms_threshold", "as_rate"]
        assert all(r.status == PASS for r in results.values()), [r.line() for r in results.values()]

    def test_lil_envelope(self):
        cfg, rep, ens = setup(k2_text(symmetric=True, horizon=12.0, trials=20,
                                      extra="[verify]\nchecks = lil_envelope\nlil_t_max = 12\n"), keep=True)
        (r,) = run_checks(cfg, rep, ens)
        assert r.status == PASS and r.measured < 0.05
