"""Consensus certificates, gain thresholds, rate and steady-state-error bounds.

All matrices live in the reduced coordinates ``delta_bar`` of the consensus
error, i.e. they are ``(N-1)n x (N-1)n`` with blocks indexed by the
non-trivial Laplacian modes.  Certificates that fail (not positive definite)
turn the corresponding bounds into ``math.inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .graph import (Graph, LaplacianSpectrum, channel_matrix, graph_metrics, is_connected,
                    spectrum as laplacian_spectrum)
from .linalg import (check_symmetric, kron, lambda_max, lambda_min, max_abs_eig, min_abs_eig,
                     spectral_norm, sym_eigvals)
from .noise import NoiseModel, growth_bound, lower_intensity

UNBOUNDED = math.inf


@dataclass(frozen=True, eq=False)
class GainMatrix:
    """Control gain ``K``; ``scalar_k`` is set when ``K = k I_n``."""

    K: np.ndarray
    scalar_k: float | None = None

    def __post_init__(self):
        K = np.array(self.K, dtype=np.float64, ndmin=2)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ValueError(f"gain must be square, got shape {K.shape}")
        if self.scalar_k is not None and not np.array_equal(K, self.scalar_k * np.eye(K.shape[0])):
            raise ValueError("scalar_k given but K is not k * I")
        K.setflags(write=False)
        object.__setattr__(self, "K", K)

    @classmethod
    def scalar(cls, k: float, n: int = 1) -> GainMatrix:
        return cls(float(k) * np.eye(n), float(k))

    @classmethod
    def matrix(cls, K) -> GainMatrix:
        K = np.array(K, dtype=np.float64, ndmin=2)
        n = K.shape[0]
        if K.shape == (n, n) and np.array_equal(K, K[0, 0] * np.eye(n)):
            return cls(K, float(K[0, 0]))
        return cls(K)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.K, self.K.T))


# building blocks ----------------------------------------------------------------


def reduced_channel_matrices(g: Graph, spec: LaplacianSpectrum) -> list[tuple[int, int, np.ndarray]]:
    """``(i, j, phi^T B_ij phi)`` for every ordered edge ``(i, j)``."""
    phi = spec.phi
    return [(i, j, phi.T @ channel_matrix(g, i, j) @ phi) for i, j in g.ordered_edges]


def _noise_gain(noise: NoiseModel, gain: GainMatrix, i: int, j: int) -> np.ndarray:
    """``K Sigma_ji`` for channel ``(i, j)``."""
    return gain.K @ noise.intensity_matrix(i, j, gain.n)


def _require_linear(noise: NoiseModel, what: str) -> None:
    if not noise.is_linear:
        raise ValueError(f"{what} needs a linear noise model, got {noise.kind!r}")


def _check_dims(noise: NoiseModel, gain: GainMatrix) -> None:
    n = noise.state_dim
    if n is not None and n != gain.n:
        raise ValueError(f"noise intensities are {n}x{n} but the gain is {gain.n}x{gain.n}")


def ms_coefficient(n_agents: int, k: float, sigma: float) -> float:
    """``2k - 2(N-1) sigma^2 k^2 / N``: eigenvalues of ``Psi_K`` per unit ``lambda_i``."""
    N = n_agents
    return 2.0 * k - 2.0 * (N - 1) * sigma**2 * k**2 / N


# growth-bound certificate -----------------------------------------------------------


def psi_f_matrix(spec: LaplacianSpectrum, gain: GainMatrix, sigma_bar: float) -> np.ndarray:
    """Certificate for a general noise intensity with growth constant ``sigma_bar``.

    ``Lambda0 (x) (K + K^T)/2 - ((N-1)/N) |K|^2 sigma_bar^2 (Lambda0 (x) I_n)``
    """
    N = spec.n_agents
    n = gain.n
    lam0 = spec.lambda0
    sym_K = 0.5 * (gain.K + gain.K.T)
    penalty = (N - 1) / N * spectral_norm(gain.K) ** 2 * sigma_bar**2
    return kron(lam0, sym_K) - penalty * kron(lam0, np.eye(n))


@dataclass(frozen=True)
class GainInterval:
    """Open interval ``(lower, upper)`` of admissible scalar gains."""

    lower: float
    upper: float

    def __contains__(self, k: float) -> bool:
        return self.lower < k < self.upper


def small_gain_interval(n_agents: int, sigma_bar: float) -> GainInterval:
    """``(0, N / ((N-1) sigma_bar^2))``; ``sigma_bar = 0`` gives ``(0, inf)``."""
    if n_agents < 2:
        raise ValueError("the gain interval needs at least two agents")
    if sigma_bar < 0:
        raise ValueError("sigma_bar must be nonnegative")
    if sigma_bar == 0:
        return GainInterval(0.0, math.inf)
    return GainInterval(0.0, n_agents / ((n_agents - 1) * sigma_bar**2))


def optimal_gain(n_agents: int, sigma: float) -> float:
    """Scalar gain maximising the mean-square decay coefficient, ``N / (2 (N-1) sigma^2)``."""
    if n_agents < 2 or not sigma > 0:
        raise ValueError("optimal gain needs N >= 2 and sigma > 0")
    return n_agents / (2.0 * (n_agents - 1) * sigma**2)


# linear noise: mean-square certificates ----------------------------------------------


def certificate_matrices(g: Graph, spec: LaplacianSpectrum, noise: NoiseModel,
                         gain: GainMatrix) -> tuple[np.ndarray, np.ndarray]:
    """``(Phi_K, Psi_K)`` for linear intensities with independent channels.

    ``Phi_K = sum (phi^T B^T phi phi^T B phi) (x) (S^T K^T K S)`` and
    ``Psi_K = Lambda0 (x) (K + K^T) - Phi_K``; the sum runs over channels.
    """
    _require_linear(noise, "certificate_matrices")
    _check_dims(noise, gain)
    n = gain.n
    m = (g.n_agents - 1) * n
    Phi = np.zeros((m, m))
    for i, j, C in reduced_channel_matrices(g, spec):
        KS = _noise_gain(noise, gain, i, j)
        Phi += kron(C.T @ C, KS.T @ KS)
    Phi = 0.5 * (Phi + Phi.T)
    Psi = kron(spec.lambda0, gain.K + gain.K.T) - Phi
    return Phi, 0.5 * (Psi + Psi.T)


def ms_rate_bounds(psi_K: np.ndarray) -> tuple[float, float]:
    """Exponents ``(lambda_min(Psi_K), lambda_max(Psi_K))``.

    ``|d0|^2 exp(-hi t) <= E|delta(t)|^2 <= |d0|^2 exp(-lo t)``.
    """
    w = sym_eigvals(psi_K)
    if not w.size:
        return 0.0, 0.0
    return float(w[0]), float(w[-1])


@dataclass(frozen=True)
class SteadyStateBounds:
    """Upper bounds on ``E|x* - mean(x0)|^2``.

    ``general_bound`` uses only the growth constant; ``linear_bound`` uses the
    linear-noise certificate and is ``None`` for nonlinear noise;
    ``asymptotic_bound`` is the degree-based expression for homogeneous noise
    with a scalar gain (``None`` otherwise).
    """

    general_bound: float
    linear_bound: float | None
    asymptotic_bound: float | None


def _delta0_sq(x0: np.ndarray, n_agents: int, n: int) -> float:
    X = np.asarray(x0, dtype=np.float64).reshape(n_agents, n)
    d = X - X.mean(axis=0)
    return float(np.sum(d * d))


def steady_state_error_bounds(g: Graph, spec: LaplacianSpectrum, noise: NoiseModel,
                              gain: GainMatrix, x0) -> SteadyStateBounds:
    N, n = g.n_agents, gain.n
    d0 = _delta0_sq(x0, N, n)

    def guarded(num: float, den: float) -> float:
        if d0 == 0.0:
            return 0.0
        return num * d0 / den if den > 0 else UNBOUNDED

    sigma_bar = growth_bound(noise)
    lam_f = lambda_min(psi_f_matrix(spec, gain, sigma_bar)) if N > 1 else math.inf
    # Proof-consistent constant: the integral of |K|^2 sigma^2 sum a_ij |d_j - d_i|^2
    # equals 2 |K|^2 sigma^2 lambda_N |d0|^2 / (2 lambda_min), i.e. N^2 in the denominator.
    general = guarded(spectral_norm(gain.K) ** 2 * sigma_bar**2 * spec.lambda_n, N**2 * lam_f)

    linear = None
    if noise.is_linear and N > 1:
        Phi, Psi = certificate_matrices(g, spec, noise, gain)
        linear = guarded(lambda_max(Phi), N * (N - 1) * lambda_min(Psi))

    asymptotic = None
    if noise.kind == "homogeneous" and gain.scalar_k is not None and N > 1:
        k, s = gain.scalar_k, noise.sigma
        d_max = int(g.degrees.max())
        den = 2.0 * N**2 * (1.0 - (N - 1) / N * s**2 * k)
        if k > 0 and den > 0:
            asymptotic = guarded(s**2 * k * d_max * (N - 1), den)
        else:
            asymptotic = 0.0 if d0 == 0.0 else UNBOUNDED
    return SteadyStateBounds(general, linear, asymptotic)


@dataclass(frozen=True)
class TwoAgentResult:
    ms_error: float
    as_iff: bool
    ms_iff: bool


def two_agent_closed_form(k: float, sigma12: float, sigma21: float, x1_0, x2_0) -> TwoAgentResult:
    """Exact mean-square steady-state error and consensus conditions for two agents.

    ``ms_error = k s |x1 - x2|^2 / (4 (4 - k s))`` with ``s = sigma12^2 + sigma21^2``;
    a.s. consensus iff ``2k + k^2 s / 2 > 0``; m.s. consensus iff ``4k - k^2 s > 0``.
    """
    if not (sigma12 > 0 and sigma21 > 0):
        raise ValueError("two-agent intensities must be positive")
    s = sigma12**2 + sigma21**2
    diff = np.atleast_1d(np.asarray(x1_0, dtype=np.float64) - np.asarray(x2_0, dtype=np.float64))
    as_iff = 2.0 * k + 0.5 * k**2 * s > 0
    ms_iff = 4.0 * k - k**2 * s > 0
    if ms_iff:
        den = 4.0 * (4.0 - k * s)
        assert den > 0
        err = k * s * float(diff @ diff) / den
    else:
        err = UNBOUNDED
    return TwoAgentResult(err, bool(as_iff), bool(ms_iff))


def ms_decision_homogeneous(g: Graph, k: float, sigma: float) -> bool:
    """Mean-square consensus iff connected and ``0 < k < N / (sigma^2 (N-1))``."""
    if g.n_agents == 1:
        return True
    return is_connected(g) and k in small_gain_interval(g.n_agents, sigma)


@dataclass(frozen=True)
class GainBands:
    sufficient: bool
    necessary: bool


def heterogeneous_gain_bands(g: Graph, noise: NoiseModel, k: float) -> GainBands:
    """Sufficient band from the largest intensity, necessary band from the smallest."""
    if noise.kind not in ("homogeneous", "linear_scalar"):
        raise ValueError("gain bands need scalar linear intensities")
    if g.n_agents == 1:
        return GainBands(True, True)
    conn = is_connected(g)
    N = g.n_agents
    hi, lo = growth_bound(noise), lower_intensity(noise)
    return GainBands(conn and k in small_gain_interval(N, hi),
                     conn and k in small_gain_interval(N, lo))


# linear noise: almost-sure certificates ----------------------------------------------


def _coupling_terms(g: Graph, spec: LaplacianSpectrum, noise: NoiseModel,
                    gain: GainMatrix) -> list[np.ndarray]:
    """``(phi^T B_ij phi) (x) (K Sigma_ji)`` per channel."""
    return [kron(C, _noise_gain(noise, gain, i, j)) for i, j, C in reduced_channel_matrices(g, spec)]


def lambda_K_bound(g: Graph, spec: LaplacianSpectrum, noise: NoiseModel, gain: GainMatrix) -> float:
    """Checkable a.s. floor ``lambda_min(Psi_K) + 1/2 sum minabs(C + C^T)^2``."""
    _require_linear(noise, "lambda_K_bound")
    _, Psi = certificate_matrices(g, spec, noise, gain)
    extra = sum(min_abs_eig(C + C.T, symmetrize=True) ** 2
                for C in _coupling_terms(g, spec, noise, gain))
    return lambda_min(Psi) + 0.5 * extra


@dataclass(frozen=True)
class MuEstimate:
    """Numerical infimum of the a.s. rate functional; not a certified value."""

    value: float
    floor: float
    argmin: np.ndarray = field(repr=False)
    restarts: int = 0


def _mu_objective(x: np.ndarray, Psi: np.ndarray, S: np.ndarray) -> tuple[float, np.ndarray]:
    """Objective and Euclidean gradient on the unit sphere.

    ``q(x) = x^T Psi x + 2 sum_c (x^T S_c x)^2`` with ``S_c`` the symmetric parts.
    """
    Sx = S @ x                       # (C, m)
    quad = Sx @ x                    # (C,)
    q = x @ Psi @ x + 2.0 * np.dot(quad, quad)
    grad = 2.0 * Psi @ x + 8.0 * quad @ Sx
    return float(q), grad


def _sphere_descent(x: np.ndarray, Psi: np.ndarray, S: np.ndarray, tol: float,
                    max_iter: int) -> tuple[float, np.ndarray]:
    x = x / np.linalg.norm(x)
    q, grad = _mu_objective(x, Psi, S)
    step = 1.0
    for _ in range(max_iter):
        rgrad = grad - (x @ grad) * x
        gnorm = np.linalg.norm(rgrad)
        if gnorm < tol:
            break
        step = min(step * 2.0, 1e6)
        while True:
            cand = x - step * rgrad
            cand /= np.linalg.norm(cand)
            q_new, g_new = _mu_objective(cand, Psi, S)
            if q_new <= q - 1e-4 * step * gnorm**2 or step < 1e-16:
                break
            step *= 0.5
        if step < 1e-16:
            break
        converged = q - q_new <= tol * max(1.0, abs(q))
        x, q, grad = cand, q_new, g_new
        if converged and np.linalg.norm(grad - (x @ grad) * x) < math.sqrt(tol):
            break
    return q, x


def mu_estimate(g: Graph, spec: LaplacianSpectrum, noise: NoiseModel, gain: GainMatrix,
                restarts: int = 64, tol: float = 1e-10, seed: int = 0,
                max_iter: int = 5000) -> MuEstimate:
    """Multi-start projected gradient descent for ``inf_x q(x) / |x|^2``.

    Starts are the eigenvectors of ``Psi_K`` followed by seeded random points
    (restart ``r`` draws from ``SeedSequence([seed, r])``).
    """
    _require_linear(noise, "mu_estimate")
    _, Psi = certificate_matrices(g, spec, noise, gain)
    floor = lambda_K_bound(g, spec, noise, gain)
    m = Psi.shape[0]
    if m == 0:
        return MuEstimate(math.inf, floor, np.zeros(0), 0)
    terms = _coupling_terms(g, spec, noise, gain)
    S = np.array([0.5 * (C + C.T) for C in terms]) if terms else np.zeros((0, m, m))
    _, V = np.linalg.eigh(Psi)
    starts = [V[:, r] for r in range(m)]
    starts += [np.random.default_rng([seed, r]).standard_normal(m) for r in range(restarts)]
    best_q, best_x = math.inf, starts[0]
    for x0 in starts:
        q, x = _sphere_descent(np.array(x0, dtype=np.float64), Psi, S, tol, max_iter)
        if q < best_q:
            best_q, best_x = q, x
    return MuEstimate(float(best_q), float(floor), best_x, len(starts))


def as_rate_matrices(g: Graph, spec: LaplacianSpectrum, noise: NoiseModel,
                     gain: GainMatrix) -> tuple[np.ndarray, np.ndarray]:
    """``(A_L(K), B_{L,K})`` for symmetric scalar intensities and a symmetric gain.

    ``A = Lambda0 (x) K + 1/2 (phi^T (sum B_ij^2 s_ji^2) phi) (x) K^2``,
    ``B = (phi^T (sum B_ij s_ji) phi) (x) K``.
    """
    if noise.kind not in ("homogeneous", "linear_scalar"):
        raise ValueError("as_rate_matrices needs scalar linear intensities")
    if not noise.symmetric_channels:
        raise ValueError("as_rate_matrices needs symmetric (shared-Brownian) channels")
    if not gain.is_symmetric:
        raise ValueError("as_rate_matrices needs a symmetric gain")
    N = g.n_agents
    sq = np.zeros((N, N))
    lin = np.zeros((N, N))
    for i, j in g.ordered_edges:
        s = noise.scalar_intensity(i, j)
        if s != noise.scalar_intensity(j, i):
            raise ValueError(f"asymmetric intensities on edge ({i}, {j})")
        B = channel_matrix(g, i, j)
        sq += B @ B * s**2
        lin += B * s
    phi = spec.phi
    K = gain.K
    A = kron(spec.lambda0, K) + 0.5 * kron(phi.T @ sq @ phi, K @ K)
    Bm = kron(phi.T @ lin @ phi, K)
    return 0.5 * (A + A.T), 0.5 * (Bm + Bm.T)


def as_decision_homogeneous_symmetric(k: float, sigma: float, connected: bool) -> bool:
    """A.s. consensus for homogeneous symmetric channels: connected and ``k + k^2 sigma^2 / 2 > 0``."""
    return bool(connected and k + 0.5 * k**2 * sigma**2 > 0)


def lil_envelope(k: float, sigma: float, spec: LaplacianSpectrum) -> dict[str, float]:
    """Rates and fluctuation scale of the iterated-logarithm envelopes (homogeneous case)."""
    c = k + 0.5 * k**2 * sigma**2
    return {
        "slow_rate": c * spec.lambda2,
        "fast_rate": c * spec.lambda_n,
        "fluctuation": abs(k) * sigma * spec.lambda_n,
    }


# full report -----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AnalysisReport:
    """Every certificate, verdict and bound for one configuration.

    Fields that do not apply to the configuration (e.g. linear-noise
    certificates for a nonlinear model) are ``None``.
    """

    n_agents: int
    state_dim: int
    connected: bool
    eigenvalues: np.ndarray
    max_degree: int
    diameter: float
    synchronizability: float
    sigma_bar: float
    psi_f: np.ndarray
    psi_f_min_eig: float
    phi_K: np.ndarray | None
    psi_K: np.ndarray | None
    ms_rate_interval: tuple[float, float] | None
    ss_error_bounds: SteadyStateBounds
    lambda_K: float | None
    mu_estimate: float | None
    as_rate_matrices: tuple[np.ndarray, np.ndarray] | None
    ms_sufficient: bool
    ms_iff: bool | None
    as_sufficient: bool
    gain_interval: GainInterval | None
    optimal_k: float | None
    scalar_k: float | None
    two_agent: TwoAgentResult | None = None


def analyze(g: Graph, noise: NoiseModel, gain: GainMatrix, x0, mu_restarts: int = 64,
            mu_seed: int = 0) -> AnalysisReport:
    """Build the complete :class:`AnalysisReport`."""
    _check_dims(noise, gain)
    spec = laplacian_spectrum(g)
    N, n = g.n_agents, gain.n
    connected = is_connected(g, spec=spec)
    metrics = graph_metrics(g, spec)
    sigma_bar = growth_bound(noise)

    psi_f = psi_f_matrix(spec, gain, sigma_bar)
    psi_f_min = lambda_min(psi_f) if N > 1 else math.inf
    ms_sufficient = N > 1 and psi_f_min > 0

    phi_K = psi_K = rate = lam_K = mu = None
    if noise.is_linear and N > 1:
        phi_K, psi_K = certificate_matrices(g, spec, noise, gain)
        rate = ms_rate_bounds(psi_K)
        ms_sufficient = ms_sufficient or rate[0] > 0
        lam_K = lambda_K_bound(g, spec, noise, gain)
        mu = mu_estimate(g, spec, noise, gain, restarts=mu_restarts, seed=mu_seed).value

    as_sufficient = ms_sufficient or (lam_K is not None and lam_K > 0)

    ms_iff = None
    rates = None
    k = gain.scalar_k
    if noise.kind == "homogeneous" and k is not None:
        ms_iff = ms_decision_homogeneous(g, k, noise.sigma)
        if noise.symmetric_channels:
            as_sufficient = as_sufficient or as_decision_homogeneous_symmetric(k, noise.sigma, connected)
    if (noise.kind in ("homogeneous", "linear_scalar") and noise.symmetric_channels
            and gain.is_symmetric and N > 1):
        rates = as_rate_matrices(g, spec, noise, gain)

    interval = small_gain_interval(N, sigma_bar) if N > 1 else None
    opt = (optimal_gain(N, noise.sigma) if noise.kind == "homogeneous" and N > 1 and noise.sigma > 0
           else None)

    two = None
    if N == 2 and noise.kind in ("homogeneous", "linear_scalar") and k is not None:
        X = np.asarray(x0, dtype=np.float64).reshape(N, n)
        two = two_agent_closed_form(k, noise.scalar_intensity(1, 0), noise.scalar_intensity(0, 1),
                                    X[0], X[1])

    return AnalysisReport(
        n_agents=N, state_dim=n, connected=connected,
        eigenvalues=spec.eigenvalues, max_degree=metrics.max_degree, diameter=metrics.diameter,
        synchronizability=metrics.synchronizability, sigma_bar=sigma_bar,
        psi_f=psi_f, psi_f_min_eig=psi_f_min, phi_K=phi_K, psi_K=psi_K,
        ms_rate_interval=rate,
        ss_error_bounds=steady_state_error_bounds(g, spec, noise, gain, x0),
        lambda_K=lam_K, mu_estimate=mu, as_rate_matrices=rates,
        ms_sufficient=bool(ms_sufficient), ms_iff=ms_iff, as_sufficient=bool(as_sufficient),
        gain_interval=interval, optimal_k=opt, scalar_k=k, two_agent=two,
    )


def symmetric_rate_envelope(A: np.ndarray, B: np.ndarray) -> dict[str, float]:
    """Envelope constants for the symmetric case: ``lambda_min(A)``, ``lambda_max(A)``, ``max|eig(B)|``."""
    check_symmetric(A)
    return {"rate_slow": lambda_min(A), "rate_fast": lambda_max(A),
            "fluctuation": max_abs_eig(B, symmetrize=True)}
