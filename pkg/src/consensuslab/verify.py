"""Compare Monte Carlo statistics against the analytical predictions.

Each check yields a :class:`CheckResult` with status ``PASS``, ``FAIL`` or
``SKIPPED`` (the check's assumptions do not hold for the configuration).
Monte Carlo tolerances are expressed in standard errors (``n_se``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import AnalysisReport, as_decision_homogeneous_symmetric
from .config import ExperimentConfig, VerifySettings
from .simulation import Ensemble, fitted_ms_rate

PASS, FAIL, SKIPPED = "PASS", "FAIL", "SKIPPED"


@dataclass(frozen=True)
class CheckResult:
    name: str
    status: str
    measured: float = math.nan
    predicted: float = math.nan
    tolerance: float = math.nan
    detail: str = ""

    def line(self) -> str:
        if self.status == SKIPPED:
            return f"{self.status:7s} {self.name}: {self.detail}"
        return (f"{self.status:7s} {self.name}: measured={self.measured:.6g} "
                f"predicted={self.predicted:.6g} tolerance={self.tolerance:.6g}  {self.detail}")


def _skip(name: str, why: str) -> CheckResult:
    return CheckResult(name, SKIPPED, detail=why)


def _verdict(ok: bool) -> str:
    return PASS if ok else FAIL


def delta0_sq(cfg: ExperimentConfig) -> float:
    X = cfg.x0.reshape(cfg.graph.n_agents, cfg.gain.n)
    d = X - X.mean(axis=0)
    return float(np.sum(d * d))


def ms_log_slope(ens: Ensemble, window: float) -> float:
    """Trailing-window least-squares slope of ``log E|delta|^2``."""
    t = ens.times
    return -fitted_ms_rate(t, ens.ms_curve, t_min=t[-1] - window * (t[-1] - t[0]))


def check_ms_sandwich(cfg, rep: AnalysisReport, ens: Ensemble, vs: VerifySettings) -> CheckResult:
    name = "ms_sandwich"
    if rep.ms_rate_interval is None:
        return _skip(name, "needs linear noise and N >= 2")
    if cfg.noise.symmetric_channels:
        return _skip(name, "rate interval assumes independent channels")
    d0 = delta0_sq(cfg)
    if d0 == 0:
        return _skip(name, "delta(0) = 0")
    lo, hi = rep.ms_rate_interval
    sel = (ens.times <= vs.sandwich_t_max) & (ens.ms_count > 1)
    t, ms, rse = ens.times[sel], ens.ms_curve[sel], ens.relative_se[sel]
    rse = np.nan_to_num(rse, nan=0.0)
    lower = d0 * np.exp(-hi * t) * (1 - vs.n_se * rse)
    upper = d0 * np.exp(-lo * t) * (1 + vs.n_se * rse)
    below = ms < lower
    above = ms > upper
    bad = below | above
    # report the worst relative excursion
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(below, ms / (d0 * np.exp(-hi * t)), ms / (d0 * np.exp(-lo * t)))
    worst = int(np.argmax(np.abs(np.log(np.where(ratio > 0, ratio, 1e-300)))))
    detail = (f"{int(bad.sum())}/{t.size} samples outside [lower(1-{vs.n_se:g}rse), "
              f"upper(1+{vs.n_se:g}rse)] for t <= {vs.sandwich_t_max:g}; worst at t={t[worst]:.4g}")
    return CheckResult(name, _verdict(not bad.any()), float(ratio[worst]), 1.0,
                       float(vs.n_se * rse[worst]), detail)


def check_steady_state(cfg, rep: AnalysisReport, ens: Ensemble, vs: VerifySettings) -> CheckResult:
    name = "steady_state"
    b = rep.ss_error_bounds
    bound = b.linear_bound if b.linear_bound is not None else b.general_bound
    if not math.isfinite(bound):
        return _skip(name, "no finite steady-state bound (certificate fails)")
    mean, se = ens.terminal_error()
    se = 0.0 if math.isnan(se) else se
    ok = mean - vs.n_se * se <= bound
    return CheckResult(name, _verdict(ok), mean, bound, vs.n_se * se,
                       "E|x(T)_avg - mean(x0)|^2 must not exceed the bound")


def check_unbiased(cfg, rep: AnalysisReport, ens: Ensemble, vs: VerifySettings) -> CheckResult:
    name = "unbiased"
    if not rep.ms_sufficient:
        return _skip(name, "mean-square certificate does not hold")
    c = ens.terminal_consensus[np.all(np.isfinite(ens.terminal_consensus), axis=1)]
    if len(c) < 2:
        return _skip(name, "fewer than two finite trials")
    mean = c.mean(axis=0)
    se = c.std(axis=0, ddof=1) / math.sqrt(len(c))
    err = np.abs(mean - ens.x0_mean)
    z = np.where(se > 0, err / np.where(se > 0, se, 1), np.where(err > 0, np.inf, 0))
    worst = int(np.argmax(z))
    return CheckResult(name, _verdict(bool(np.all(z <= vs.n_se))), float(mean[worst]),
                       float(ens.x0_mean[worst]), float(vs.n_se * se[worst]),
                       f"component {worst + 1}, {z[worst]:.3g} standard errors")


def check_two_agent(cfg, rep: AnalysisReport, ens: Ensemble, vs: VerifySettings) -> CheckResult:
    name = "two_agent"
    two = rep.two_agent
    if two is None:
        return _skip(name, "needs two agents with scalar linear noise and a scalar gain")
    if cfg.noise.symmetric_channels:
        return _skip(name, "closed form assumes independent channels")
    if not two.ms_iff:
        return _skip(name, "two-agent mean-square condition fails; error is unbounded")
    mean, _ = ens.terminal_error()
    tol = vs.two_agent_rel_tol * two.ms_error
    return CheckResult(name, _verdict(abs(mean - two.ms_error) <= tol), mean, two.ms_error, tol,
                       "terminal mean-square error vs closed form")


def check_ms_threshold(cfg, rep: AnalysisReport, ens: Ensemble, vs: VerifySettings) -> CheckResult:
    name = "ms_threshold"
    if rep.ms_iff is None:
        return _skip(name, "exact threshold needs homogeneous noise and a scalar gain")
    if not rep.connected or cfg.graph.n_agents < 2:
        return _skip(name, "needs a connected graph with N >= 2")
    if cfg.noise.symmetric_channels:
        return _skip(name, "threshold assumes independent channels")
    if delta0_sq(cfg) == 0:
        return _skip(name, "delta(0) = 0")
    if rep.ms_iff:
        peak = float(np.nanmax(ens.ms_curve))
        final = float(ens.ms_curve[-1])
        ok = math.isfinite(final) and final * 100.0 <= peak
        return CheckResult(name, _verdict(ok), peak / final if final > 0 else math.inf, 100.0, 0.0,
                           "inside the gain interval: decay factor from peak must be >= 100")
    slope = ms_log_slope(ens, cfg.sim.window)
    return CheckResult(name, _verdict(slope > vs.divergence_slope), slope, vs.divergence_slope, 0.0,
                       "outside the gain interval: trailing log-slope of E|delta|^2 must exceed this")


def check_as_rate(cfg, rep: AnalysisReport, ens: Ensemble, vs: VerifySettings) -> CheckResult:
    name = "as_rate"
    if rep.mu_estimate is None or cfg.noise.symmetric_channels:
        return _skip(name, "needs linear noise with independent channels")
    if not rep.mu_estimate > 0:
        return _skip(name, f"mu = {rep.mu_estimate:.4g} is not positive")
    slopes = ens.as_slopes[np.isfinite(ens.as_slopes)]
    if slopes.size == 0:
        return _skip(name, "no finite per-trial slopes")
    med = float(np.median(slopes))
    pred = -rep.mu_estimate / 2
    return CheckResult(name, _verdict(med <= pred + vs.as_margin), med, pred, vs.as_margin,
                       "median trailing slope of log|delta| must not exceed -mu/2 + margin")


def _homogeneous_symmetric(cfg) -> bool:
    return (cfg.noise.kind == "homogeneous" and cfg.noise.symmetric_channels
            and cfg.gain.scalar_k is not None)


def check_as_gap(cfg, rep: AnalysisReport, ens: Ensemble, vs: VerifySettings) -> CheckResult:
    name = "as_gap"
    if not _homogeneous_symmetric(cfg):
        return _skip(name, "needs homogeneous symmetric noise and a scalar gain")
    k, s = cfg.gain.scalar_k, cfg.noise.sigma
    if not as_decision_homogeneous_symmetric(k, s, rep.connected) or rep.ms_iff:
        return _skip(name, "applies only where a.s. consensus holds and mean-square consensus fails")
    slopes = ens.as_slopes[np.isfinite(ens.as_slopes)]
    frac = float(np.mean(slopes < 0)) if slopes.size else 0.0
    med = float(np.median(slopes)) if slopes.size else math.nan
    lam2 = float(np.sort(rep.eigenvalues)[1])
    pred = -(k + 0.5 * k**2 * s**2) * lam2
    ms_slope = ms_log_slope(ens, cfg.sim.window)
    ok = frac >= vs.as_fraction and med <= pred + vs.as_margin and ms_slope > 0
    detail = (f"negative-slope fraction {frac:.3f} (need >= {vs.as_fraction:g}); "
              f"E|delta|^2 trailing log-slope {ms_slope:.4g} (need > 0)")
    return CheckResult(name, _verdict(ok), med, pred, vs.as_margin, detail)


def lil_exceedance(log_delta_norms: np.ndarray, times: np.ndarray, k: float, sigma: float, lam2: float,
                   t_min: float, t_max: float, threshold: float) -> tuple[float, int]:
    """Fraction of finite samples with ``t`` in ``[t_min, t_max]`` whose normalized value exceeds ``threshold``.

    Takes ``log |delta|`` per trial and sample, as kept by the ensemble.
    """
    sel = (times >= t_min) & (times <= t_max) & (times > math.e)
    t = times[sel]
    LD = np.atleast_2d(log_delta_norms)[:, sel]
    with np.errstate(invalid="ignore"):
        val = (LD + (k + 0.5 * k**2 * sigma**2) * lam2 * t) / np.sqrt(2 * t * np.log(np.log(t)))
    ok = np.isfinite(val)
    n = int(ok.sum())
    return (float(np.sum(val[ok] > threshold)) / n if n else math.nan), n


def check_lil_envelope(cfg, rep: AnalysisReport, ens: Ensemble, vs: VerifySettings) -> CheckResult:
    name = "lil_envelope"
    if not _homogeneous_symmetric(cfg):
        return _skip(name, "needs homogeneous symmetric noise and a scalar gain")
    k, s = cfg.gain.scalar_k, cfg.noise.sigma
    if not as_decision_homogeneous_symmetric(k, s, rep.connected):
        return _skip(name, "a.s. consensus condition fails")
    if ens.log_delta_norms is None:
        return _skip(name, "per-trial trajectories were not kept")
    if ens.times[-1] < vs.lil_t_min:
        return _skip(name, f"horizon {ens.times[-1]:g} is shorter than lil_t_min={vs.lil_t_min:g}")
    ev = np.sort(rep.eigenvalues)
    thr = abs(k) * s * ev[-1] + vs.lil_margin
    frac, n = lil_exceedance(ens.log_delta_norms, ens.times, k, s, ev[1], vs.lil_t_min, vs.lil_t_max, thr)
    return CheckResult(name, _verdict(frac < vs.lil_max_fraction), frac, vs.lil_max_fraction, 0.0,
                       f"fraction of {n} samples above |k| sigma lambda_N + {vs.lil_margin:g} = {thr:.4g}")


_CHECKS = {
    "ms_sandwich": check_ms_sandwich,
    "steady_state": check_steady_state,
    "unbiased": check_unbiased,
    "two_agent": check_two_agent,
    "ms_threshold": check_ms_threshold,
    "as_rate": check_as_rate,
    "as_gap": check_as_gap,
    "lil_envelope": check_lil_envelope,
}


def run_checks(cfg: ExperimentConfig, rep: AnalysisReport, ens: Ensemble) -> list[CheckResult]:
    vs = cfg.verify
    return [_CHECKS[name](cfg, rep, ens, vs) for name in vs.checks]


def needs_trajectories(cfg: ExperimentConfig) -> bool:
    return "lil_envelope" in cfg.verify.checks and _homogeneous_symmetric(cfg)
