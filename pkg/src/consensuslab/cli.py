"""Command-line entry point: ``consensuslab analyze|simulate|verify``.

Exit codes: 0 success, 1 a verification check failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import backend
from .analysis import analyze
from .config import ConfigError, ExperimentConfig, load_config, with_overrides
from .output import write_ensemble, write_report
from .simulation import run_ensemble
from .verify import FAIL, run_checks, needs_trajectories

log = logging.getLogger("consensuslab")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="consensuslab",
        description="Consensus certificates and Monte Carlo checks for networks with "
                    "relative-state-dependent measurement noise.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("analyze", "compute certificates, verdicts and bounds"),
                            ("simulate", "run the Monte Carlo ensemble and write CSV files"),
                            ("verify", "simulate and compare against the analysis")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="experiment config file")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides [output] dir)")
        p.add_argument("--seed", type=_u64, default=None, help="override [sim] seed")
        p.add_argument("--trials", type=_positive, default=None, help="override [sim] trials")
        p.add_argument("--threads", type=_positive, default=None,
                       help="worker threads (default: CONSENSUSLAB_THREADS or 1)")
        p.add_argument("--backend", choices=("cython", "python"), default=None,
                       help=f"simulation kernel (default: {backend.BACKEND})")
    return parser


def _header(cfg: ExperimentConfig, args, command: str) -> dict:
    return {"command": command, "config": cfg.source, "seed": cfg.sim.seed, "trials": cfg.sim.trials,
            "dt": cfg.sim.dt, "horizon": cfg.sim.horizon,
            "backend": args.backend or backend.BACKEND}


def _analysis(cfg: ExperimentConfig):
    return analyze(cfg.graph, cfg.noise, cfg.gain, cfg.x0, mu_restarts=cfg.analysis.mu_restarts,
                   mu_seed=cfg.analysis.mu_seed)


def _ensemble(cfg: ExperimentConfig, args, keep: bool):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ens = run_ensemble(cfg.sim_config(), batch_size=cfg.sim.batch_size, threads=args.threads,
                           backend=args.backend, keep_delta_norms=keep)
    for w in caught:
        log.warning("%s", w.message)
    return ens


def cmd_analyze(cfg: ExperimentConfig, args, out: Path) -> int:
    rep = _analysis(cfg)
    write_report(rep, out, _header(cfg, args, "analyze"))
    sys.stdout.write((out / "report.txt").read_text())
    return EXIT_OK


def cmd_simulate(cfg: ExperimentConfig, args, out: Path) -> int:
    ens = _ensemble(cfg, args, keep=cfg.sim.per_trial)
    write_ensemble(ens, out, _header(cfg, args, "simulate"), per_trial=cfg.sim.per_trial)
    sys.stdout.write((out / "summary.txt").read_text())
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, args, out: Path) -> int:
    header = _header(cfg, args, "verify")
    rep = _analysis(cfg)
    ens = _ensemble(cfg, args, keep=cfg.sim.per_trial or needs_trajectories(cfg))
    write_report(rep, out, header)
    write_ensemble(ens, out, header, per_trial=cfg.sim.per_trial)
    results = run_checks(cfg, rep, ens)
    lines = [f"# {k}: {v}" for k, v in header.items()] + [r.line() for r in results]
    text = "\n".join(lines) + "\n"
    (out / "verify.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_FAIL if any(r.status == FAIL for r in results) else EXIT_OK


COMMANDS = {"analyze": cmd_analyze, "simulate": cmd_simulate, "verify": cmd_verify}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:          # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, seed=args.seed, trials=args.trials)
        if args.backend == "cython" and "cython" not in backend.AVAILABLE:
            raise ConfigError("--backend cython requested but the compiled kernel is not built")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    base = args.config.parent
    out = args.out if args.out is not None else (base / cfg.output_dir)
    log.info("running %s with seed %d, %d trials", args.command, cfg.sim.seed, cfg.sim.trials)
    return COMMANDS[args.command](cfg, args, out)


if __name__ == "__main__":
    sys.exit(main())
