"""Report and CSV writers.

Floats in CSV files use 17 significant digits. Unbounded quantities are
written as the string ``inf`` in both the text and the JSON report.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .analysis import AnalysisReport
from .simulation import Ensemble

REPORT_FIELDS = (
    "n_agents", "state_dim", "connected", "lambda2", "lambda_N", "eigenvalues", "max_degree",
    "diameter", "synchronizability", "sigma_bar", "psi_f_min_eig", "ms_sufficient", "ms_iff",
    "as_sufficient", "gain_interval", "optimal_k", "scalar_k", "psi_K_min_eig", "psi_K_max_eig",
    "lambda_K", "mu", "ss_bound", "ss_bound_general", "ss_bound_linear", "ss_bound_degree",
    "two_agent_ms_error", "as_rate_slow", "as_rate_fast", "as_fluctuation",
)


def _num(v):
    """JSON-safe scalar: ``inf`` becomes the string ``"inf"``, NaN becomes ``None``."""
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    v = float(v)
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    if math.isnan(v):
        return None
    return v


def report_dict(rep: AnalysisReport) -> dict:
    """Flat mapping with the keys in :data:`REPORT_FIELDS`."""
    ev = np.asarray(rep.eigenvalues)
    b = rep.ss_error_bounds
    ss = b.linear_bound if b.linear_bound is not None else b.general_bound
    d = {
        "n_agents": rep.n_agents,
        "state_dim": rep.state_dim,
        "connected": rep.connected,
        "lambda2": ev[1] if ev.size > 1 else None,
        "lambda_N": ev[-1],
        "eigenvalues": [_num(x) for x in ev],
        "max_degree": rep.max_degree,
        "diameter": rep.diameter,
        "synchronizability": rep.synchronizability,
        "sigma_bar": rep.sigma_bar,
        "psi_f_min_eig": rep.psi_f_min_eig,
        "ms_sufficient": rep.ms_sufficient,
        "ms_iff": rep.ms_iff,
        "as_sufficient": rep.as_sufficient,
        "gain_interval": (None if rep.gain_interval is None
                          else [_num(rep.gain_interval.lower), _num(rep.gain_interval.upper)]),
        "optimal_k": rep.optimal_k,
        "scalar_k": rep.scalar_k,
        "psi_K_min_eig": rep.ms_rate_interval[0] if rep.ms_rate_interval else None,
        "psi_K_max_eig": rep.ms_rate_interval[1] if rep.ms_rate_interval else None,
        "lambda_K": rep.lambda_K,
        "mu": rep.mu_estimate,
        "ss_bound": ss,
        "ss_bound_general": b.general_bound,
        "ss_bound_linear": b.linear_bound,
        "ss_bound_degree": b.asymptotic_bound,
        "two_agent_ms_error": rep.two_agent.ms_error if rep.two_agent else None,
        "as_rate_slow": None, "as_rate_fast": None, "as_fluctuation": None,
    }
    if rep.as_rate_matrices is not None:
        A, B = rep.as_rate_matrices
        wa = np.linalg.eigvalsh(A)
        d["as_rate_slow"], d["as_rate_fast"] = wa[0], wa[-1]
        d["as_fluctuation"] = float(np.max(np.abs(np.linalg.eigvalsh(B)))) if B.size else 0.0
    return {k: (v if isinstance(v, list) else _num(v)) for k, v in d.items()}


def _text_value(v) -> str:
    if v is None:
        return "n/a"
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, list):
        return "[" + ", ".join(_text_value(x) for x in v) + "]"
    return str(v)


def report_text(rep: AnalysisReport, header: dict | None = None) -> str:
    d = report_dict(rep)
    lines = [f"# {k}: {v}" for k, v in (header or {}).items()]
    for key in REPORT_FIELDS:
        v = d[key]
        if key == "gain_interval" and v is not None:
            lines.append(f"{key}: ({_text_value(v[0])}, {_text_value(v[1])})")
        else:
            lines.append(f"{key}: {_text_value(v)}")
    return "\n".join(lines) + "\n"


def write_report(rep: AnalysisReport, out_dir: Path, header: dict | None = None) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(report_text(rep, header))
    payload = {"header": header or {}, "report": report_dict(rep)}
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2, allow_nan=False) + "\n")


def _g(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return format(v, ".17g")


def write_ms_curve(ens: Ensemble, path: Path) -> None:
    n = ens.consensus_mean.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "ms_delta_sq", "se"] + [f"consensus_mean_{c + 1}" for c in range(n)]
                   + ["count"])
        for k, t in enumerate(ens.times):
            w.writerow([_g(t), _g(ens.ms_curve[k]), _g(ens.ms_se[k])]
                       + [_g(v) for v in ens.consensus_mean[k]] + [int(ens.ms_count[k])])


def write_slopes(ens: Ensemble, path: Path) -> None:
    n = ens.terminal_consensus.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "as_slope", "diverged", "terminal_delta_norm"]
                   + [f"terminal_consensus_{c + 1}" for c in range(n)])
        for r in range(ens.trials):
            w.writerow([r, _g(ens.as_slopes[r]), int(ens.diverged[r]), _g(ens.terminal_delta_norm[r])]
                       + [_g(v) for v in ens.terminal_consensus[r]])


def write_per_trial(ens: Ensemble, path: Path) -> None:
    """``log |delta(t)|`` for every trial, one column per trial.

    Logarithms rather than norms, since fast-decaying errors underflow.
    """
    if ens.log_delta_norms is None:
        raise ValueError("ensemble was run without keep_delta_norms")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"log_delta_norm_{r + 1}" for r in range(ens.trials)])
        for k, t in enumerate(ens.times):
            w.writerow([_g(t)] + [_g(v) for v in ens.log_delta_norms[:, k]])


def ensemble_summary(ens: Ensemble) -> dict:
    err, se = ens.terminal_error()
    cmean, cvar = ens.consensus_stats()
    slopes = ens.as_slopes[np.isfinite(ens.as_slopes)]
    return {
        "seed": ens.seed,
        "trials": ens.trials,
        "diverged": int(ens.diverged.sum()),
        "terminal_time": _num(ens.times[-1]),
        "terminal_ms_delta_sq": _num(ens.ms_curve[-1]),
        "terminal_error": _num(err),
        "terminal_error_se": _num(se),
        "consensus_mean": [_num(v) for v in cmean],
        "consensus_var": [_num(v) for v in cvar],
        "x0_mean": [_num(v) for v in ens.x0_mean],
        "median_as_slope": _num(np.median(slopes)) if slopes.size else None,
        "fraction_negative_slope": _num(np.mean(slopes < 0)) if slopes.size else None,
    }


def write_summary(ens: Ensemble, path: Path, header: dict | None = None) -> None:
    lines = [f"# {k}: {v}" for k, v in (header or {}).items()]
    lines += [f"{k}: {_text_value(v)}" for k, v in ensemble_summary(ens).items()]
    path.write_text("\n".join(lines) + "\n")


def write_ensemble(ens: Ensemble, out_dir: Path, header: dict | None = None,
                   per_trial: bool = False) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_ms_curve(ens, out_dir / "ms_curve.csv")
    write_slopes(ens, out_dir / "slopes.csv")
    write_summary(ens, out_dir / "summary.txt", header)
    if per_trial:
        write_per_trial(ens, out_dir / "trajectories.csv")
