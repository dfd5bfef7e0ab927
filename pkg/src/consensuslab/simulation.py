"""Euler-Maruyama simulation of the closed-loop consensus SDE.

Each agent runs ``dx_i = K sum_j a_ij [(x_j - x_i) dt + f_ji(x_j - x_i) dw_ji]``.
Trial ``r`` of a run with seed ``s`` draws its Brownian increments from
``PCG64(SeedSequence([s, r]))``, one row of ``M`` normals per step in
channel-id order, so results do not depend on batching or thread count.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _fallback
from . import backend as _backend
from .analysis import GainMatrix
from .graph import Graph, LaplacianSpectrum, channel_matrix, spectrum as laplacian_spectrum
from .linalg import kron, sym_expm
from .noise import ChannelSet, NoiseModel, build_channels

DIVERGENCE_GUARD = 1e150
MAX_SAMPLES = 10_000
_CHUNK_STEPS = 1024
_SEED_MASK = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class SimConfig:
    graph: Graph
    noise: NoiseModel
    gain: GainMatrix
    x0: np.ndarray
    dt: float = 1e-3
    horizon: float = 1.0
    sample_stride: int | None = None
    seed: int = 0
    trials: int = 1
    window: float = 0.5
    guard: float = DIVERGENCE_GUARD

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=np.float64).reshape(-1)
        N, n = self.graph.n_agents, self.gain.n
        if x0.size != N * n:
            raise ValueError(f"x0 has {x0.size} entries, expected N*n = {N * n}")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= self.dt:
            raise ValueError("horizon must be at least dt")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.sample_stride is not None and self.sample_stride < 1:
            raise ValueError("sample_stride must be positive")
        if not 0 < self.window <= 1:
            raise ValueError("window must be in (0, 1]")
        dim = self.noise.state_dim
        if dim is not None and dim != n:
            raise ValueError(f"noise intensities are {dim}x{dim} but the gain is {n}x{n}")
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "seed", int(self.seed) & _SEED_MASK)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.horizon / self.dt)))

    @property
    def stride(self) -> int:
        if self.sample_stride is not None:
            return int(self.sample_stride)
        return max(1, math.ceil(self.n_steps / MAX_SAMPLES))

    @property
    def sample_steps(self) -> np.ndarray:
        steps = np.arange(0, self.n_steps + 1, self.stride)
        if steps[-1] != self.n_steps:
            steps = np.append(steps, self.n_steps)
        return steps

    @property
    def times(self) -> np.ndarray:
        return self.sample_steps * self.dt

    @property
    def state_dim(self) -> int:
        return self.gain.n

    def channels(self) -> ChannelSet:
        return build_channels(self.graph, self.noise)


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed) & _SEED_MASK,
                                                                       int(trial_index)])))


def brownian_increments(cfg: SimConfig, trial_index: int, n_steps: int | None = None) -> np.ndarray:
    """The ``(n_steps, M)`` increments trial ``trial_index`` consumes."""
    n_steps = cfg.n_steps if n_steps is None else n_steps
    M = cfg.channels().brownian_count
    return trial_rng(cfg.seed, trial_index).standard_normal((n_steps, M)) * math.sqrt(cfg.dt)


class _Plan:
    """Per-config constants shared by every batch."""

    def __init__(self, cfg: SimConfig, backend: str | None):
        self.cfg = cfg
        ch = cfg.channels()
        self.channel_set = ch
        self.M = ch.brownian_count
        self.recv = np.ascontiguousarray(ch.receivers(), dtype=np.intp)
        self.send = np.ascontiguousarray(ch.senders(), dtype=np.intp)
        self.bm = np.ascontiguousarray(ch.brownian_ids(), dtype=np.intp)
        n = cfg.gain.n
        self.K = np.ascontiguousarray(cfg.gain.K)
        noise = cfg.noise
        if noise.is_linear:
            G = [self.K @ noise.intensity_matrix(i, j, n) for i, j, _ in ch.channels]
            self.G = np.ascontiguousarray(np.array(G).reshape(len(ch), n, n))
            self.kernel = _backend.linear_kernel(backend)
            self.extra = self.G
            self.rescale = True
        else:
            if backend == "cython":
                raise ValueError("the compiled kernel supports linear noise only")
            self.kernel = _backend.general_kernel
            self.extra = [noise.function(i, j) for i, j, _ in ch.channels]
            self.rescale = False
        self.stride = cfg.stride
        self.steps = cfg.sample_steps
        per_chunk = max(1, _CHUNK_STEPS // self.stride) * self.stride
        self.chunk = per_chunk

    def run(self, trial_indices, dW=None):
        """Simulate a batch.

        Returns the sampled scaled consensus error ``(B, S, N, n)``, its log
        scale ``(B, S)`` (the error is ``d * exp(logs)``), the sampled agent
        average ``(B, S, n)``, alive flags and ``w(T)`` per Brownian id.
        """
        cfg = self.cfg
        B = len(trial_indices)
        N, n = cfg.graph.n_agents, cfg.gain.n
        X0 = cfg.x0.reshape(N, n)
        c = np.tile(X0.mean(axis=0), (B, 1))
        d = np.tile((X0 - X0.mean(axis=0))[None], (B, 1, 1))
        logs = np.zeros(B)
        n_samples = len(self.steps)
        samp_d = np.full((B, n_samples, N, n), np.nan)
        samp_c = np.full((B, n_samples, n), np.nan)
        samp_logs = np.full((B, n_samples), np.nan)
        samp_d[:, 0] = d
        samp_c[:, 0] = c
        samp_logs[:, 0] = 0.0
        alive = np.ones(B, dtype=np.uint8)
        w_total = np.zeros((B, self.M))
        rngs = None if dW is not None else [trial_rng(cfg.seed, r) for r in trial_indices]
        sq = math.sqrt(cfg.dt)
        total = cfg.n_steps
        done = 0
        slot = 1
        while done < total:
            S = min(self.chunk, total - done)
            if dW is not None:
                inc = np.ascontiguousarray(dW[:, done:done + S])
            else:
                inc = np.empty((B, S, self.M))
                for b, rng in enumerate(rngs):
                    inc[b] = rng.standard_normal((S, self.M))
                inc *= sq
            w_total += inc.sum(axis=1)
            if self.M == 0:
                inc = np.zeros((B, S, 1))
            n_out = S // self.stride
            out_d = np.full((B, n_out, N, n), np.nan)
            out_c = np.full((B, n_out, n), np.nan)
            out_logs = np.full((B, n_out), np.nan)
            self.kernel(d, c, logs, self.recv, self.send, self.bm, self.K, self.extra, float(cfg.dt),
                        inc, int(self.stride), out_d, out_c, out_logs, alive, float(cfg.guard))
            samp_d[:, slot:slot + n_out] = out_d
            samp_c[:, slot:slot + n_out] = out_c
            samp_logs[:, slot:slot + n_out] = out_logs
            slot += n_out
            done += S
        if slot < n_samples:       # horizon is not a multiple of the stride
            _fallback.sample_state(d, c, logs, samp_d, samp_c, samp_logs, alive, slot, cfg.guard,
                                   self.rescale)
        return samp_d, samp_logs, samp_c, alive.astype(bool), w_total


def _log_norms(d: np.ndarray, logs: np.ndarray) -> np.ndarray:
    """``log |d * exp(logs)|`` over the trailing ``(N, n)`` axes; ``-inf`` for zero error."""
    with np.errstate(divide="ignore"):
        return 0.5 * np.log(np.einsum("...ij,...ij->...", d, d)) + logs


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled path of one trial.

    ``states`` is ``(S, N*n)``; ``delta`` is the consensus error
    ``((I - J_N) (x) I_n) x(t_k)``, integrated directly rather than recovered
    from ``states`` so that it keeps full relative precision;
    ``consensus_value[k]`` is the agent average; ``brownian_terminal`` holds
    ``w(T)`` per Brownian id.  ``log_delta_norms`` stays finite where
    ``delta_norms`` underflows to zero (fast a.s. decay).  Samples after
    divergence are NaN.
    """

    times: np.ndarray
    states: np.ndarray
    delta: np.ndarray
    delta_norms: np.ndarray
    log_delta_norms: np.ndarray
    consensus_value: np.ndarray
    brownian_terminal: np.ndarray
    diverged: bool
    n_agents: int


def simulate_trajectory(cfg: SimConfig, trial_index: int = 0, dW: np.ndarray | None = None,
                        backend: str | None = None) -> Trajectory:
    """One Euler-Maruyama path.

    ``dW`` overrides the seeded increments (shape ``(n_steps, M)``, already
    scaled by ``sqrt(dt)``), e.g. to drive several step sizes with one path.
    """
    plan = _Plan(cfg, backend)
    if dW is not None:
        dW = np.asarray(dW, dtype=np.float64)
        if dW.shape != (cfg.n_steps, plan.M):
            raise ValueError(f"dW must have shape {(cfg.n_steps, plan.M)}, got {dW.shape}")
        dW = dW[None]
    d, logs, c, alive, w_T = plan.run([trial_index], dW)
    d, logs, c = d[0], logs[0], c[0]
    S = len(cfg.times)
    if not alive[0]:
        warnings.warn(f"trial {trial_index} diverged (state norm above {cfg.guard:g})", RuntimeWarning,
                      stacklevel=2)
    with np.errstate(under="ignore"):
        delta = d * np.exp(logs)[:, None, None]
    ln = _log_norms(d, logs)
    return Trajectory(times=cfg.times, states=(delta + c[:, None, :]).reshape(S, -1),
                      delta=delta.reshape(S, -1), delta_norms=_exp(ln), log_delta_norms=ln,
                      consensus_value=c, brownian_terminal=w_T[0], diverged=not alive[0],
                      n_agents=cfg.graph.n_agents)


def _exp(x: np.ndarray) -> np.ndarray:
    with np.errstate(under="ignore", over="ignore"):
        return np.exp(x)


def trailing_slope(times: np.ndarray, delta_norms: np.ndarray, window: float = 0.5,
                   warn: bool = True) -> float:
    """Least-squares slope of ``log |delta|`` over the trailing ``window`` fraction of time."""
    with np.errstate(divide="ignore"):
        ln = np.log(np.asarray(delta_norms, dtype=np.float64))
    return trailing_log_slope(times, ln, window, warn)


def trailing_log_slope(times: np.ndarray, log_norms: np.ndarray, window: float = 0.5,
                       warn: bool = True) -> float:
    """:func:`trailing_slope` on precomputed ``log |delta|`` (``-inf`` marks a zero sample)."""
    times = np.asarray(times)
    ln = np.asarray(log_norms)
    t0 = times[-1] - window * (times[-1] - times[0])
    sel = times >= t0
    t, y = times[sel], ln[sel]
    ok = np.isfinite(y)
    if warn and np.any(y == -np.inf):
        warnings.warn("zero consensus-error samples excluded from slope fit", RuntimeWarning,
                      stacklevel=3)
    if ok.sum() < 2:
        return math.nan
    t, y = t[ok], y[ok]
    tc = t - t.mean()
    return float(np.dot(tc, y - y.mean()) / np.dot(tc, tc))


def as_rate_estimate(tr: Trajectory, window: float = 0.5) -> float:
    """Empirical a.s. decay rate: slope of ``log |delta(t)|`` over the trailing window.

    Raises:
        ValueError: the initial state is already at consensus.
    """
    if not tr.log_delta_norms[0] > -np.inf:
        raise ValueError("delta(0) = 0: the consensus error is identically zero")
    return trailing_log_slope(tr.times, tr.log_delta_norms, window)


def lil_normalized_curve(tr: Trajectory, k: float, sigma: float,
                         spec: LaplacianSpectrum) -> tuple[np.ndarray, np.ndarray]:
    """``(log|delta(t)| + (k + k^2 sigma^2/2) lambda_2 t) / sqrt(2 t log log t)`` for ``t > e``.

    Compare against the envelope ``|k| sigma lambda_N``.
    """
    t = tr.times
    sel = (t > math.e) & np.isfinite(tr.log_delta_norms)
    t = t[sel]
    rate = (k + 0.5 * k**2 * sigma**2) * spec.lambda2
    num = tr.log_delta_norms[sel] + rate * t
    return t, num / np.sqrt(2.0 * t * np.log(np.log(t)))


# ensemble ---------------------------------------------------------------------------


@dataclass(eq=False)
class Ensemble:
    """Monte Carlo statistics over ``trials`` independent paths.

    ``ms_curve[k]`` estimates ``E|delta(t_k)|^2`` from the trials still finite
    at ``t_k`` (``ms_count``); ``ms_se`` is its standard error.
    """

    times: np.ndarray
    ms_curve: np.ndarray
    ms_se: np.ndarray
    ms_count: np.ndarray
    consensus_mean: np.ndarray
    consensus_se: np.ndarray
    terminal_consensus: np.ndarray
    terminal_delta_norm: np.ndarray
    as_slopes: np.ndarray
    diverged: np.ndarray
    x0_mean: np.ndarray
    seed: int
    trials: int
    log_delta_norms: np.ndarray | None = field(default=None, repr=False)

    @property
    def delta_norms(self) -> np.ndarray | None:
        """Per-trial ``|delta(t_k)|`` (``(trials, S)``) when kept; may underflow to 0."""
        return None if self.log_delta_norms is None else _exp(self.log_delta_norms)

    @property
    def terminal_errors(self) -> np.ndarray:
        """``|x_bar(T) - mean(x0)|^2`` per trial."""
        d = self.terminal_consensus - self.x0_mean
        return np.einsum("ij,ij->i", d, d)

    def terminal_error(self) -> tuple[float, float]:
        """Mean and standard error of :attr:`terminal_errors` over finite trials."""
        e = self.terminal_errors
        e = e[np.isfinite(e)]
        if e.size == 0:
            return math.nan, math.nan
        se = e.std(ddof=1) / math.sqrt(e.size) if e.size > 1 else math.nan
        return float(e.mean()), float(se)

    def consensus_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample mean and variance of the terminal consensus value."""
        c = self.terminal_consensus[np.all(np.isfinite(self.terminal_consensus), axis=1)]
        return c.mean(axis=0), c.var(axis=0, ddof=1) if len(c) > 1 else np.full(c.shape[1], np.nan)

    @property
    def relative_se(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.ms_se / self.ms_curve


class _Moments:
    """Pairwise-merged count/mean/M2 accumulators (Chan et al.), reduced in batch order."""

    def __init__(self, shape):
        self.n = np.zeros(shape)
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, values: np.ndarray) -> None:
        finite = np.isfinite(values)
        nb = finite.sum(axis=0).astype(np.float64)
        v = np.where(finite, values, 0.0)
        with np.errstate(invalid="ignore", divide="ignore", over="ignore"):
            mb = np.where(nb > 0, v.sum(axis=0) / nb, 0.0)
            m2b = np.where(finite, (values - mb) ** 2, 0.0).sum(axis=0)
            tot = self.n + nb
            delta = mb - self.mean
            self.mean = np.where(tot > 0, self.mean + delta * nb / np.maximum(tot, 1), 0.0)
            self.m2 = self.m2 + m2b + np.where(tot > 0, delta**2 * self.n * nb / np.maximum(tot, 1), 0.0)
        self.n = tot

    def stderr(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            var = np.where(self.n > 1, self.m2 / np.maximum(self.n - 1, 1), np.nan)
            return np.sqrt(var / self.n)


def default_threads() -> int:
    env = os.environ.get("CONSENSUSLAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"CONSENSUSLAB_THREADS must be an integer, got {env!r}") from None
    return 1


def run_ensemble(cfg: SimConfig, batch_size: int = 256, threads: int | None = None,
                 backend: str | None = None, keep_delta_norms: bool = False) -> Ensemble:
    """Monte Carlo over ``cfg.trials`` seeded trials.

    Trials are split into fixed batches of ``batch_size``; batches may run on
    ``threads`` worker threads (default ``CONSENSUSLAB_THREADS`` or 1) and are
    reduced in trial order, so results are identical for any thread count.
    """
    plan = _Plan(cfg, backend)
    threads = default_threads() if threads is None else max(1, int(threads))
    N, n = cfg.graph.n_agents, cfg.gain.n
    S = len(cfg.times)
    batches = [list(range(a, min(a + batch_size, cfg.trials))) for a in range(0, cfg.trials, batch_size)]

    def work(idx):
        d, logs, cons, alive, _ = plan.run(idx)
        ln = _log_norms(d, logs)
        slopes = np.array([trailing_log_slope(cfg.times, row, cfg.window, warn=False) for row in ln])
        return ln, cons, alive, slopes

    ms = _Moments(S)
    cm = _Moments((S, n))
    term_cons, term_norm, slopes_all, diverged, kept = [], [], [], [], []

    def consume(res):
        ln, cons, alive, slopes = res
        dn2 = _exp(2 * ln)
        ms.add(dn2)
        cm.add(cons)
        term_cons.append(cons[:, -1])
        term_norm.append(_exp(ln[:, -1]))
        slopes_all.append(slopes)
        diverged.append(~alive)
        if keep_delta_norms:
            kept.append(ln)

    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for res in pool.map(work, batches):
                consume(res)
    else:
        for idx in batches:
            consume(work(idx))

    div = np.concatenate(diverged)
    if div.any():
        warnings.warn(f"{int(div.sum())} of {cfg.trials} trials diverged", RuntimeWarning, stacklevel=2)
    return Ensemble(
        times=cfg.times, ms_curve=ms.mean, ms_se=ms.stderr(), ms_count=ms.n.astype(int),
        consensus_mean=cm.mean, consensus_se=cm.stderr(),
        terminal_consensus=np.concatenate(term_cons), terminal_delta_norm=np.concatenate(term_norm),
        as_slopes=np.concatenate(slopes_all), diverged=div,
        x0_mean=cfg.x0.reshape(N, n).mean(axis=0), seed=cfg.seed, trials=cfg.trials,
        log_delta_norms=np.concatenate(kept) if keep_delta_norms else None,
    )


def fitted_ms_rate(times: np.ndarray, ms_curve: np.ndarray, t_min: float = 0.0,
                   t_max: float | None = None) -> float:
    """Decay rate ``-d/dt log E|delta|^2`` by least squares on ``[t_min, t_max]``."""
    t_max = times[-1] if t_max is None else t_max
    sel = (times >= t_min) & (times <= t_max) & np.isfinite(ms_curve) & (ms_curve > 0)
    t, y = times[sel], np.log(ms_curve[sel])
    tc = t - t.mean()
    return float(-np.dot(tc, y - y.mean()) / np.dot(tc, tc))


# closed-form oracle ------------------------------------------------------------------


def reduced_error(states: np.ndarray, spec: LaplacianSpectrum, n: int) -> np.ndarray:
    """``delta_bar = (phi^T (x) I_n) x`` for each row of ``states``."""
    P = kron(spec.phi.T, np.eye(n))
    return np.atleast_2d(states) @ P.T


def _diffusion_by_brownian(cfg: SimConfig, spec: LaplacianSpectrum) -> list[np.ndarray]:
    """``G_b = sum_{c on b} (phi^T B_c phi) (x) (K sigma_c)`` per Brownian id."""
    ch = cfg.channels()
    m = (cfg.graph.n_agents - 1) * cfg.gain.n
    G = [np.zeros((m, m)) for _ in range(ch.brownian_count)]
    phi, K = spec.phi, cfg.gain.K
    for i, j, b in ch.channels:
        G[b] += kron(phi.T @ channel_matrix(cfg.graph, i, j) @ phi, K * cfg.noise.scalar_intensity(i, j))
    return G


def closed_form_exponents(cfg: SimConfig, spec: LaplacianSpectrum | None = None,
                          correction: str = "wiring") -> tuple[np.ndarray, list[np.ndarray]]:
    """Drift exponent ``A`` and per-Brownian diffusion matrices ``G_b``.

    ``delta_bar(t) = expm(-A t + sum_b G_b w_b(t)) delta_bar(0)`` whenever the
    ``G_b`` commute with each other and with ``A``.  ``correction="wiring"``
    uses the Ito correction of the actual wiring, ``A = Lambda0 (x) K + 1/2 sum_b G_b^2``.
    ``correction="per_channel"`` sums the squares channel by channel instead
    (``as_rate_matrices``' ``A``), which matches the simulated dynamics only
    when every channel has its own Brownian motion.
    """
    spec = spec if spec is not None else laplacian_spectrum(cfg.graph)
    noise, gain = cfg.noise, cfg.gain
    if noise.kind not in ("homogeneous", "linear_scalar"):
        raise ValueError("closed form needs scalar linear intensities")
    if not noise.symmetric_channels:
        raise ValueError("closed form needs symmetric (shared-Brownian) channels")
    if not gain.is_symmetric:
        raise ValueError("closed form needs a symmetric gain")
    for i, j in cfg.graph.ordered_edges:
        if noise.scalar_intensity(i, j) != noise.scalar_intensity(j, i):
            raise ValueError(f"asymmetric intensities on edge ({i}, {j})")
    G = _diffusion_by_brownian(cfg, spec)
    K = gain.K
    A = kron(spec.lambda0, K)
    if correction == "wiring":
        A = A + 0.5 * sum((Gb @ Gb for Gb in G), np.zeros_like(A))
    elif correction == "per_channel":
        phi = spec.phi
        for i, j in cfg.graph.ordered_edges:
            Bc = phi.T @ channel_matrix(cfg.graph, i, j) @ phi
            s = cfg.noise.scalar_intensity(i, j)
            A = A + 0.5 * kron(Bc @ Bc, (K * s) @ (K * s))
    else:
        raise ValueError(f"unknown correction {correction!r}")
    return 0.5 * (A + A.T), [0.5 * (Gb + Gb.T) for Gb in G]


def closed_form_symmetric(cfg: SimConfig, times, w_values, spec: LaplacianSpectrum | None = None,
                          correction: str = "wiring") -> np.ndarray:
    """Pathwise solution ``delta_bar(t_k)`` given Brownian values ``w_values[k, b]``.

    Exact when the exponent matrices commute (e.g. two agents, or any graph
    with ``n = 1`` whose edge Laplacians commute); otherwise an approximation.
    """
    spec = spec if spec is not None else laplacian_spectrum(cfg.graph)
    A, G = closed_form_exponents(cfg, spec, correction)
    times = np.atleast_1d(np.asarray(times, dtype=np.float64))
    W = np.asarray(w_values, dtype=np.float64).reshape(times.size, len(G))
    d0 = reduced_error(cfg.x0, spec, cfg.gain.n)[0]
    out = np.empty((times.size, d0.size))
    for k, t in enumerate(times):
        if t == 0 and not W[k].any():
            out[k] = d0
            continue
        E = -A * t
        for b, Gb in enumerate(G):
            E = E + Gb * W[k, b]
        out[k] = sym_expm(E) @ d0
    return out
