"""Relative-state-dependent measurement noise models.

A *channel* ``(i, j)`` is the link through which agent ``i`` measures its
neighbour ``j``.  Its noise term is ``f(x_j - x_i) * xi``, where ``f`` is the
channel's intensity function and ``xi`` is white noise, i.e. the derivative
of a Brownian motion.  Per-channel parameters are keyed by ``(i, j)``
(receiver, sender).

Supported kinds:

``homogeneous``
    ``f(v) = sigma * v`` on every channel.
``linear_scalar``
    ``f(v) = sigma_c * v`` with a positive scalar per channel.
``linear_matrix``
    ``f(v) = S_c @ v`` with an ``n x n`` matrix per channel.
``general``
    user callables with a declared growth constant ``sigma_bar``, i.e.
    ``|f(v)| <= sigma_bar |v|``.  The bound is spot-checked by sampling,
    not proved.  Callables must also be Lipschitz so that the closed-loop
    SDE is well posed, and must act row-wise on arrays of shape ``(..., n)``
    because the simulator evaluates a whole batch of trials at once.

``symmetric_channels=True`` drives channels ``(i, j)`` and ``(j, i)`` with
one shared Brownian motion; otherwise every channel has its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .graph import Graph
from .linalg import spectral_norm

KINDS = ("homogeneous", "linear_scalar", "linear_matrix", "general")
LINEAR_KINDS = ("homogeneous", "linear_scalar", "linear_matrix")

Channel = tuple[int, int]
IntensityFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class NoiseModel:
    kind: str
    sigma: float | None = None
    sigmas: Mapping[Channel, float] = field(default_factory=dict)
    matrices: Mapping[Channel, np.ndarray] = field(default_factory=dict)
    functions: Mapping[Channel, IntensityFn] = field(default_factory=dict)
    default_function: IntensityFn | None = None
    sigma_bar: float | None = None
    symmetric_channels: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "homogeneous":
            if self.sigma is None or not self.sigma >= 0:
                raise ValueError("homogeneous noise needs sigma >= 0 (0 is the noise-free limit)")
        elif self.kind == "linear_scalar":
            for ch, s in self.sigmas.items():
                if not s > 0:
                    raise ValueError(f"linear_scalar intensity for channel {ch} must be positive, got {s}")
            if self.symmetric_channels:
                _check_symmetric_values(self.sigmas, lambda a, b: a == b)
        elif self.kind == "linear_matrix":
            shapes = {np.shape(S) for S in self.matrices.values()}
            if len(shapes) > 1 or any(len(s) != 2 or s[0] != s[1] for s in shapes):
                raise ValueError(f"linear_matrix intensities must share one square shape, got {shapes}")
            if self.symmetric_channels:
                _check_symmetric_values(self.matrices, np.array_equal)
        else:
            if self.sigma_bar is None or self.sigma_bar < 0:
                raise ValueError("general noise needs a declared sigma_bar >= 0")
            if not self.functions and self.default_function is None:
                raise ValueError("general noise needs at least one intensity function")

    # constructors -----------------------------------------------------------

    @classmethod
    def homogeneous(cls, sigma: float, symmetric_channels: bool = False) -> NoiseModel:
        return cls("homogeneous", sigma=float(sigma), symmetric_channels=symmetric_channels)

    @classmethod
    def linear_scalar(cls, sigmas: Mapping[Channel, float],
                      symmetric_channels: bool = False) -> NoiseModel:
        return cls("linear_scalar", sigmas={_key(c): float(s) for c, s in sigmas.items()},
                   symmetric_channels=symmetric_channels)

    @classmethod
    def linear_matrix(cls, matrices: Mapping[Channel, np.ndarray],
                      symmetric_channels: bool = False) -> NoiseModel:
        mats = {}
        for c, S in matrices.items():
            S = np.array(S, dtype=np.float64, ndmin=2)
            S.setflags(write=False)
            mats[_key(c)] = S
        return cls("linear_matrix", matrices=mats, symmetric_channels=symmetric_channels)

    @classmethod
    def general(cls, functions: Mapping[Channel, IntensityFn] | IntensityFn, sigma_bar: float,
                symmetric_channels: bool = False) -> NoiseModel:
        if callable(functions):
            return cls("general", default_function=functions, sigma_bar=float(sigma_bar),
                       symmetric_channels=symmetric_channels)
        return cls("general", functions={_key(c): f for c, f in functions.items()},
                   sigma_bar=float(sigma_bar), symmetric_channels=symmetric_channels)

    # queries ------------------------------------------------------------------

    @property
    def is_linear(self) -> bool:
        return self.kind in LINEAR_KINDS

    @property
    def state_dim(self) -> int | None:
        """Fixed state dimension for matrix intensities, else ``None``."""
        if self.kind == "linear_matrix" and self.matrices:
            return next(iter(self.matrices.values())).shape[0]
        return None

    def covers(self, i: int, j: int) -> bool:
        c = (i, j)
        if self.kind == "homogeneous":
            return True
        if self.kind == "linear_scalar":
            return c in self.sigmas
        if self.kind == "linear_matrix":
            return c in self.matrices
        return c in self.functions or self.default_function is not None

    def scalar_intensity(self, i: int, j: int) -> float:
        """``sigma_c`` for the scalar linear kinds."""
        if self.kind == "homogeneous":
            return float(self.sigma)
        if self.kind == "linear_scalar":
            return self.sigmas[(i, j)]
        raise ValueError(f"{self.kind} noise has no scalar intensity")

    def intensity_matrix(self, i: int, j: int, n: int) -> np.ndarray:
        """``Sigma_c`` as an ``n x n`` matrix for the linear kinds."""
        if self.kind == "linear_matrix":
            S = self.matrices[(i, j)]
            if S.shape[0] != n:
                raise ValueError(f"intensity matrix is {S.shape[0]}x{S.shape[0]}, state dimension is {n}")
            return np.array(S)
        return self.scalar_intensity(i, j) * np.eye(n)

    def function(self, i: int, j: int) -> IntensityFn:
        if self.kind != "general":
            raise ValueError("only general noise carries callables")
        f = self.functions.get((i, j), self.default_function)
        if f is None:
            raise KeyError((i, j))
        return f


def _key(c) -> Channel:
    i, j = c
    return int(i), int(j)


def _check_symmetric_values(values: Mapping[Channel, object], equal) -> None:
    for (i, j), v in values.items():
        w = values.get((j, i))
        if w is not None and not equal(v, w):
            raise ValueError(
                f"symmetric channels need equal intensities on ({i}, {j}) and ({j}, {i})")


def _check_channel(m: NoiseModel, i: int, j: int, graph: Graph | None) -> None:
    if graph is not None and not graph.has_edge(i, j):
        raise ValueError(f"({i}, {j}) is not an edge of the graph")
    if not m.covers(i, j):
        raise ValueError(f"noise model has no intensity for channel ({i}, {j})")


def evaluate_intensity(m: NoiseModel, i: int, j: int, x, graph: Graph | None = None) -> np.ndarray:
    """Noise intensity of channel ``(i, j)`` at relative state ``x = x_j - x_i``.

    Raises:
        ValueError: ``(i, j)`` is not an edge (when ``graph`` is given) or the
            model has no intensity for it.
    """
    _check_channel(m, i, j, graph)
    v = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if m.kind == "general":
        return np.asarray(m.function(i, j)(v), dtype=np.float64)
    if m.kind == "linear_matrix":
        return m.intensity_matrix(i, j, v.shape[-1]) @ v
    return m.scalar_intensity(i, j) * v


def growth_bound(m: NoiseModel) -> float:
    """The constant ``sigma_bar`` with ``|f_c(x)| <= sigma_bar |x|`` on every channel."""
    if m.kind == "homogeneous":
        return float(m.sigma)
    if m.kind == "linear_scalar":
        return max(m.sigmas.values(), default=0.0)
    if m.kind == "linear_matrix":
        return max((spectral_norm(S) for S in m.matrices.values()), default=0.0)
    return float(m.sigma_bar)


def lower_intensity(m: NoiseModel) -> float:
    """Smallest scalar intensity over the channels (scalar linear kinds)."""
    if m.kind == "homogeneous":
        return float(m.sigma)
    if m.kind == "linear_scalar":
        return min(m.sigmas.values(), default=0.0)
    raise ValueError(f"{m.kind} noise has no scalar intensities")


def check_growth_bound(m: NoiseModel, graph: Graph, n: int, samples: int = 10_000,
                       rng: np.random.Generator | None = None, slack: float = 1e-12) -> float:
    """Sample random relative states and return the worst ``|f(x)| - bound*|x|``.

    Raises:
        ValueError: the declared bound is violated by more than ``slack``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    bound = growth_bound(m)
    worst = -np.inf
    for i, j in graph.ordered_edges:
        X = rng.standard_normal((samples, n)) * rng.lognormal(0.0, 2.0, (samples, 1))
        if m.kind == "general":
            F = np.asarray(m.function(i, j)(X), dtype=np.float64).reshape(X.shape)
        elif m.kind == "linear_matrix":
            F = X @ m.intensity_matrix(i, j, n).T
        else:
            F = m.scalar_intensity(i, j) * X
        excess = np.linalg.norm(F, axis=1) - bound * np.linalg.norm(X, axis=1)
        worst = max(worst, float(excess.max()))
    if worst > slack:
        raise ValueError(f"growth bound {bound:g} violated by {worst:.3e}")
    return worst


@dataclass(frozen=True)
class ChannelSet:
    """Channel list with Brownian-motion assignment.

    ``channels[c] = (i, j, brownian_id)``; channels are in row-major order of
    the ordered edges.
    """

    channels: tuple[tuple[int, int, int], ...]
    brownian_count: int

    def __len__(self) -> int:
        return len(self.channels)

    def receivers(self) -> np.ndarray:
        return np.array([c[0] for c in self.channels], dtype=np.intp)

    def senders(self) -> np.ndarray:
        return np.array([c[1] for c in self.channels], dtype=np.intp)

    def brownian_ids(self) -> np.ndarray:
        return np.array([c[2] for c in self.channels], dtype=np.intp)


def build_channels(g: Graph, m: NoiseModel) -> ChannelSet:
    """One channel per ordered edge, with Brownian ids per the model's wiring.

    Raises:
        ValueError: the model misses an edge, or symmetric wiring is requested
            with asymmetric intensities.
    """
    ids: dict[tuple[int, int], int] = {}
    channels = []
    for i, j in g.ordered_edges:
        if not m.covers(i, j):
            raise ValueError(f"noise model has no intensity for channel ({i}, {j})")
        if m.symmetric_channels:
            if m.kind == "linear_scalar" and m.sigmas[(i, j)] != m.sigmas.get((j, i)):
                raise ValueError(f"asymmetric intensities on edge ({i}, {j}) with symmetric channels")
            if m.kind == "linear_matrix" and not np.array_equal(m.matrices[(i, j)],
                                                                m.matrices.get((j, i))):
                raise ValueError(f"asymmetric intensities on edge ({i}, {j}) with symmetric channels")
            key = (min(i, j), max(i, j))
        else:
            key = (i, j)
        bid = ids.setdefault(key, len(ids))
        channels.append((i, j, bid))
    return ChannelSet(tuple(channels), len(ids))
