"""Time the compiled and numpy Euler-Maruyama kernels on the same ensembles.

Usage: python3 benchmarks/bench_kernels.py [--trials 200] [--horizon 5] [--repeat 3]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from consensuslab import backend
from consensuslab.analysis import GainMatrix
from consensuslab.graph import complete_graph, path_graph
from consensuslab.noise import NoiseModel
from consensuslab.simulation import SimConfig, run_ensemble

CASES = {
    "K2 scalar, independent": lambda: (complete_graph(2), NoiseModel.homogeneous(1.0), GainMatrix.scalar(1.0)),
    "K3 scalar, shared": lambda: (complete_graph(3), NoiseModel.homogeneous(1.0, True), GainMatrix.scalar(-3.0)),
    "P6 n=2, independent": lambda: (path_graph(6), NoiseModel.homogeneous(0.5), GainMatrix.scalar(0.4, 2)),
}


def best_time(cfg: SimConfig, name: str, repeat: int):
    best, ens = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        ens = run_ensemble(cfg, backend=name, threads=1)
        best = min(best, time.perf_counter() - t0)
    return best, ens


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--horizon", type=float, default=5.0)
    ap.add_argument("--dt", type=float, default=1e-3)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if "cython" not in backend.AVAILABLE:
        raise SystemExit("compiled kernel not built; run `pip install -e . --no-build-isolation`")

    print(f"{'case':26s} {'cython [s]':>11s} {'python [s]':>11s} {'speedup':>8s} {'max rel diff':>13s}")
    for label, make in CASES.items():
        g, noise, gain = make()
        x0 = np.linspace(-1.0, 1.0, g.n_agents * gain.n)
        cfg = SimConfig(g, noise, gain, x0=x0, dt=args.dt, horizon=args.horizon,
                        trials=args.trials, seed=1)
        tc, ec = best_time(cfg, "cython", args.repeat)
        tp, ep = best_time(cfg, "python", args.repeat)
        diff = float(np.max(np.abs(ec.ms_curve - ep.ms_curve) / np.maximum(np.abs(ep.ms_curve), 1e-300)))
        print(f"{label:26s} {tc:11.3f} {tp:11.3f} {tp / tc:7.1f}x {diff:13.2e}")


if __name__ == "__main__":
    main()
