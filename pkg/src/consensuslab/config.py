"""Experiment configuration files.

A config is flat sectioned ``key = value`` text; ``#`` starts a comment line.
Agent and channel indices are 1-based.  Example::

    [graph]
    n_agents = 2
    edges = 1-2            # or: file = ring.txt (relative to this file)

    [noise]
    kind = homogeneous     # homogeneous | linear_scalar | linear_matrix
    sigma = 1.0
    symmetric = false
    # linear_scalar:  default = 1.0  and/or  sigma.1.2 = 0.5   (receiver 1 measures 2)
    # linear_matrix:  default = 1 0; 0 2  and/or  sigma.1.2 = 0.5 0; 0 0.5

    [gain]
    k = 1.0                # with optional n = <state dim>, or K = 1 0; 0 1

    [initial]
    x0 = 1; -1             # one group per agent, components separated by spaces

    [sim]
    dt = 0.001
    horizon = 50
    trials = 5000
    seed = 12345

    [output]
    dir = out

Unknown sections or keys are errors; every error names the file and line.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .analysis import GainMatrix
from .graph import Graph, build_graph, read_graph_file
from .noise import NoiseModel

_SECTION = re.compile(r"^\[([A-Za-z_]+)\]$")
_CHANNEL_KEY = re.compile(r"^sigma\.(\d+)\.(\d+)$")

CHECKS = ("ms_sandwich", "steady_state", "unbiased", "two_agent", "ms_threshold",
          "as_rate", "as_gap", "lil_envelope")


class ConfigError(ValueError):
    """Invalid configuration; the message starts with ``source:line``."""


@dataclass(frozen=True)
class SimSettings:
    dt: float = 1e-3
    horizon: float = 10.0
    trials: int = 1000
    seed: int = 0
    stride: int | None = None
    window: float = 0.5
    batch_size: int = 256
    per_trial: bool = False


@dataclass(frozen=True)
class AnalysisSettings:
    mu_restarts: int = 64
    mu_seed: int = 0


@dataclass(frozen=True)
class VerifySettings:
    """Tolerances of the ``verify`` checks.

    ``checks`` lists the enabled checks (default: all); inapplicable ones are
    reported as skipped.
    """

    checks: tuple[str, ...] = CHECKS
    n_se: float = 3.0
    sandwich_t_max: float = 3.0
    two_agent_rel_tol: float = 0.10
    divergence_slope: float = 0.1
    as_fraction: float = 0.95
    as_margin: float = 0.5
    lil_t_min: float = 10.0
    lil_t_max: float = 100.0
    lil_margin: float = 1.0
    lil_max_fraction: float = 0.05


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    graph: Graph
    noise: NoiseModel
    gain: GainMatrix
    x0: np.ndarray
    sim: SimSettings = field(default_factory=SimSettings)
    analysis: AnalysisSettings = field(default_factory=AnalysisSettings)
    verify: VerifySettings = field(default_factory=VerifySettings)
    output_dir: str = "out"
    source: str = "<config>"

    def sim_config(self, seed: int | None = None, trials: int | None = None):
        from .simulation import SimConfig
        s = self.sim
        return SimConfig(self.graph, self.noise, self.gain, self.x0, dt=s.dt, horizon=s.horizon,
                         sample_stride=s.stride, seed=s.seed if seed is None else seed,
                         trials=s.trials if trials is None else trials, window=s.window)


# low-level reader ---------------------------------------------------------------------


@dataclass
class _Entry:
    value: str
    line: int


def _read_sections(text: str, source: str) -> dict[str, dict[str, _Entry]]:
    sections: dict[str, dict[str, _Entry]] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _SECTION.match(line)
        if m:
            current = m.group(1).lower()
            if current in sections:
                raise ConfigError(f"{source}:{lineno}: duplicate section [{current}]")
            sections[current] = {}
            continue
        if current is None:
            raise ConfigError(f"{source}:{lineno}: key outside of any section")
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in sections[current]:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = _Entry(value, lineno)
    return sections


class _Section:
    """Typed access to one section that tracks which keys were consumed."""

    def __init__(self, name: str, entries: dict[str, _Entry], source: str):
        self.name = name
        self.entries = entries
        self.source = source
        self.used: set[str] = set()

    def error(self, key: str | None, msg: str) -> ConfigError:
        line = self.entries[key].line if key in self.entries else 0
        return ConfigError(f"{self.source}:{line}: [{self.name}] {msg}")

    def has(self, key: str) -> bool:
        return key in self.entries

    def raw(self, key: str) -> str:
        self.used.add(key)
        return self.entries[key].value

    def get(self, key: str, conv, default=None, required: bool = False):
        if key not in self.entries:
            if required:
                raise ConfigError(f"{self.source}:0: [{self.name}] missing required key {key!r}")
            return default
        value = self.raw(key)
        try:
            return conv(value)
        except (ValueError, TypeError) as exc:
            raise self.error(key, f"bad value for {key!r}: {exc}") from None

    def finish(self) -> None:
        for key in self.entries:
            if key not in self.used:
                raise self.error(key, f"unknown key {key!r}")


def _to_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _to_int(s: str) -> int:
    return int(s.strip().replace("_", ""))


def _to_float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


def _to_matrix(s: str) -> np.ndarray:
    rows = [r.split() for r in s.split(";")]
    if not rows or any(len(r) != len(rows[0]) for r in rows) or not rows[0]:
        raise ValueError(f"matrix rows must be non-empty and equally long: {s!r}")
    return np.array([[_to_float(v) for v in r] for r in rows])


def _to_edges(s: str) -> list[tuple[int, int]]:
    edges = []
    for tok in s.replace(";", ",").split(","):
        tok = tok.strip()
        if not tok:
            continue
        parts = re.split(r"\s*-\s*|\s+", tok)
        if len(parts) != 2:
            raise ValueError(f"edge must look like 'i-j', got {tok!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return edges


def _to_state(s: str) -> list[list[float]]:
    groups = [g.split() for g in s.replace(",", ";").split(";")]
    if any(not g for g in groups):
        raise ValueError(f"empty agent entry in {s!r}")
    return [[_to_float(v) for v in g] for g in groups]


# parse ---------------------------------------------------------------------------------


def _parse_graph(sec: _Section, base: Path | None) -> Graph:
    if sec.has("file") and sec.has("edges"):
        raise sec.error("file", "give either 'edges' or 'file', not both")
    if sec.has("file"):
        path = Path(sec.raw("file"))
        if base is not None and not path.is_absolute():
            path = base / path
        try:
            g = read_graph_file(path)
        except (OSError, ValueError) as exc:
            raise sec.error("file", str(exc)) from None
        if sec.has("n_agents") and sec.get("n_agents", _to_int) != g.n_agents:
            raise sec.error("n_agents", f"n_agents disagrees with {path} ({g.n_agents})")
    else:
        N = sec.get("n_agents", _to_int, required=True)
        edges = sec.get("edges", _to_edges, default=[])
        try:
            g = build_graph(N, [(i - 1, j - 1) for i, j in edges])
        except ValueError as exc:
            raise sec.error("edges" if sec.has("edges") else "n_agents", str(exc)) from None
    sec.finish()
    return g


def _parse_noise(sec: _Section, g: Graph) -> NoiseModel:
    kind = sec.get("kind", str, required=True).strip()
    symmetric = sec.get("symmetric", _to_bool, default=False)
    per_channel: dict[tuple[int, int], tuple[str, str]] = {}
    for key in sec.entries:
        m = _CHANNEL_KEY.match(key)
        if m:
            i, j = int(m.group(1)) - 1, int(m.group(2)) - 1
            in_range = 0 <= i < g.n_agents and 0 <= j < g.n_agents and i != j
            if not (in_range and g.has_edge(i, j)):
                raise sec.error(key, f"channel {key!r} is not an edge of the graph")
            per_channel[(i, j)] = (key, sec.raw(key))
    try:
        if kind == "homogeneous":
            noise = NoiseModel.homogeneous(sec.get("sigma", _to_float, required=True), symmetric)
            if per_channel or sec.has("default"):
                raise sec.error(next(iter(per_channel.values()))[0] if per_channel else "default",
                                "homogeneous noise takes only 'sigma'")
        elif kind in ("linear_scalar", "linear_matrix"):
            conv = _to_float if kind == "linear_scalar" else _to_matrix
            default = sec.get("default", conv)
            values = {}
            for i, j in g.ordered_edges:
                if (i, j) in per_channel:
                    key, raw = per_channel[(i, j)]
                    try:
                        values[(i, j)] = conv(raw)
                    except ValueError as exc:
                        raise sec.error(key, str(exc)) from None
                elif default is not None:
                    values[(i, j)] = default
                else:
                    raise sec.error("kind", f"no intensity for channel sigma.{i + 1}.{j + 1} "
                                            "and no default")
            if kind == "linear_scalar":
                noise = NoiseModel.linear_scalar(values, symmetric)
            else:
                noise = NoiseModel.linear_matrix(values, symmetric)
        elif kind == "general":
            raise sec.error("kind", "general (callable) noise cannot be configured from a file; "
                                    "use the Python API")
        else:
            raise sec.error("kind", f"unknown noise kind {kind!r}")
    except ConfigError:
        raise
    except ValueError as exc:
        raise sec.error("kind", str(exc)) from None
    sec.finish()
    return noise


def _parse_gain(sec: _Section) -> GainMatrix:
    if sec.has("K") and sec.has("k"):
        raise sec.error("K", "give either 'k' or 'K', not both")
    if sec.has("K"):
        if sec.has("n"):
            raise sec.error("n", "'n' only applies to a scalar gain 'k'")
        gain = GainMatrix.matrix(sec.get("K", _to_matrix))
    else:
        k = sec.get("k", _to_float, required=True)
        n = sec.get("n", _to_int, default=1)
        if n < 1:
            raise sec.error("n", "n must be positive")
        gain = GainMatrix.scalar(k, n)
    sec.finish()
    return gain


def _parse_dataclass(sec: _Section | None, cls, convs: dict):
    if sec is None:
        return cls()
    kwargs = {name: sec.get(name, conv) for name, conv in convs.items() if sec.has(name)}
    sec.finish()
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{sec.source}:0: [{sec.name}] {exc}") from None


def _checks(s: str) -> tuple[str, ...]:
    names = tuple(c.strip() for c in s.split(",") if c.strip())
    if names == ("all",):
        return CHECKS
    bad = [c for c in names if c not in CHECKS]
    if bad:
        raise ValueError(f"unknown checks {bad}; known: {', '.join(CHECKS)}")
    return names


def _optional_int(s: str) -> int | None:
    return None if s.strip().lower() in ("auto", "none", "") else _to_int(s)


_SIM = {"dt": _to_float, "horizon": _to_float, "trials": _to_int, "seed": _to_int,
        "stride": _optional_int, "window": _to_float, "batch_size": _to_int, "per_trial": _to_bool}
_ANALYSIS = {"mu_restarts": _to_int, "mu_seed": _to_int}
_VERIFY = {"checks": _checks, **{f.name: _to_float for f in fields(VerifySettings) if f.name != "checks"}}
_SECTIONS = ("graph", "noise", "gain", "initial", "sim", "analysis", "verify", "output")


def parse_config(text: str, source: str = "<config>", base_dir: Path | None = None) -> ExperimentConfig:
    """Parse and validate a whole config before anything is computed.

    Raises:
        ConfigError: with a ``source:line`` prefix (line 0 when the problem
            is a missing key).
    """
    raw = _read_sections(text, source)
    for name, entries in raw.items():
        if name not in _SECTIONS:
            line = min((e.line for e in entries.values()), default=1) - 1
            raise ConfigError(f"{source}:{max(line, 1)}: unknown section [{name}]")
    for req in ("graph", "noise", "gain", "initial"):
        if req not in raw:
            raise ConfigError(f"{source}:0: missing section [{req}]")
    sec = {name: _Section(name, entries, source) for name, entries in raw.items()}
    g = _parse_graph(sec["graph"], base_dir)
    noise = _parse_noise(sec["noise"], g)
    gain = _parse_gain(sec["gain"])
    if noise.state_dim is not None and noise.state_dim != gain.n:
        raise sec["gain"].error(next(iter(sec["gain"].entries), None),
                                f"gain is {gain.n}x{gain.n} but noise matrices are "
                                f"{noise.state_dim}x{noise.state_dim}")

    init = sec["initial"]
    groups = init.get("x0", _to_state, required=True)
    init.finish()
    if len(groups) != g.n_agents or any(len(v) != gain.n for v in groups):
        raise init.error("x0", f"x0 needs {g.n_agents} agents with {gain.n} components each")
    x0 = np.array(groups, dtype=np.float64).reshape(-1)

    sim = _parse_dataclass(sec.get("sim"), SimSettings, _SIM)
    if not (sim.dt > 0 and sim.horizon >= sim.dt and sim.trials >= 1 and sim.batch_size >= 1
            and 0 < sim.window <= 1 and (sim.stride is None or sim.stride >= 1)):
        raise sec["sim"].error(None, "need dt > 0, horizon >= dt, trials >= 1, batch_size >= 1, "
                                     "0 < window <= 1, stride >= 1")
    if not 0 <= sim.seed < 2**64:
        raise sec["sim"].error("seed", "seed must be an unsigned 64-bit integer")
    analysis = _parse_dataclass(sec.get("analysis"), AnalysisSettings, _ANALYSIS)
    verify = _parse_dataclass(sec.get("verify"), VerifySettings, _VERIFY)
    out = "out"
    if "output" in sec:
        out = sec["output"].get("dir", str, default="out").strip()
        sec["output"].finish()
    return ExperimentConfig(g, noise, gain, x0, sim, analysis, verify, out, source)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}:0: cannot read config: {exc.strerror}") from None
    return parse_config(text, str(path), path.parent)


# serialize -----------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return repr(float(v))


def _fmt_matrix(M: np.ndarray) -> str:
    return "; ".join(" ".join(_fmt(v) for v in row) for row in np.atleast_2d(M))


def serialize_config(cfg: ExperimentConfig) -> str:
    """Config text that parses back to an equivalent configuration (graph given inline)."""
    g, noise, gain = cfg.graph, cfg.noise, cfg.gain
    lines = ["[graph]", f"n_agents = {g.n_agents}",
             "edges = " + ", ".join(f"{i + 1}-{j + 1}" for i, j in g.edges), "",
             "[noise]", f"kind = {noise.kind}", f"symmetric = {str(noise.symmetric_channels).lower()}"]
    if noise.kind == "homogeneous":
        lines.append(f"sigma = {_fmt(noise.sigma)}")
    elif noise.kind == "linear_scalar":
        lines += [f"sigma.{i + 1}.{j + 1} = {_fmt(noise.sigmas[(i, j)])}" for i, j in g.ordered_edges]
    elif noise.kind == "linear_matrix":
        lines += [f"sigma.{i + 1}.{j + 1} = {_fmt_matrix(noise.matrices[(i, j)])}"
                  for i, j in g.ordered_edges]
    else:
        raise ValueError("general noise has no text form")
    lines += ["", "[gain]"]
    if gain.scalar_k is not None:
        lines += [f"k = {_fmt(gain.scalar_k)}", f"n = {gain.n}"]
    else:
        lines.append(f"K = {_fmt_matrix(gain.K)}")
    X = cfg.x0.reshape(g.n_agents, gain.n)
    lines += ["", "[initial]", "x0 = " + "; ".join(" ".join(_fmt(v) for v in row) for row in X), ""]

    def section(name, obj):
        out = [f"[{name}]"]
        for f in fields(obj):
            v = getattr(obj, f.name)
            if f.name == "checks":
                v = ", ".join(v)
            elif f.name == "stride" and v is None:
                v = "auto"
            elif isinstance(v, bool):
                v = str(v).lower()
            elif isinstance(v, float):
                v = _fmt(v)
            out.append(f"{f.name} = {v}")
        return out + [""]

    lines += section("sim", cfg.sim) + section("analysis", cfg.analysis) + section("verify", cfg.verify)
    lines += ["[output]", f"dir = {cfg.output_dir}", ""]
    return "\n".join(lines)


def configs_equivalent(a: ExperimentConfig, b: ExperimentConfig) -> bool:
    """Semantic equality used by the round-trip property."""
    na, nb = a.noise, b.noise
    if na.kind != nb.kind or na.symmetric_channels != nb.symmetric_channels:
        return False
    if not np.array_equal(a.graph.adjacency, b.graph.adjacency):
        return False
    for i, j in a.graph.ordered_edges:
        if not np.array_equal(na.intensity_matrix(i, j, a.gain.n), nb.intensity_matrix(i, j, b.gain.n)):
            return False
    return (np.array_equal(a.gain.K, b.gain.K) and a.gain.scalar_k == b.gain.scalar_k
            and np.array_equal(a.x0, b.x0) and a.sim == b.sim and a.analysis == b.analysis
            and a.verify == b.verify and a.output_dir == b.output_dir)


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, trials: int | None = None,
                   output_dir: str | None = None) -> ExperimentConfig:
    sim = cfg.sim
    if seed is not None:
        sim = replace(sim, seed=seed)
    if trials is not None:
        sim = replace(sim, trials=trials)
    return replace(cfg, sim=sim, output_dir=cfg.output_dir if output_dir is None else output_dir)
