"""Independent reference implementations used as test oracles.

None of these call into the package's eigen or exponential routines.
"""

from __future__ import annotations

from collections import deque

import mpmath
import numpy as np
import pytest

from consensuslab.graph import random_connected_graph

mpmath.mp.dps = 50


def charpoly_coefficients(M) -> list:
    """Faddeev-LeVerrier in 50-digit arithmetic; highest degree first."""
    A = mpmath.matrix(np.asarray(M, dtype=float).tolist())
    n = A.rows
    coeffs = [mpmath.mpf(1)]
    Mk = mpmath.zeros(n, n)
    I = mpmath.eye(n)
    for k in range(1, n + 1):
        Mk = A * Mk + coeffs[-1] * I
        AM = A * Mk
        c = -sum(AM[i, i] for i in range(n)) / k
        coeffs.append(c)
    return coeffs


def charpoly_roots(M) -> np.ndarray:
    """Real roots of ``det(lambda I - M)``, ascending."""
    roots = mpmath.polyroots(charpoly_coefficients(M), maxsteps=5000, extraprec=400)
    return np.sort(np.array([float(mpmath.re(r)) for r in roots]))


def taylor_expm(M, terms: int = 40) -> np.ndarray:
    """Scaling and squaring around a truncated Taylor series."""
    A = np.asarray(M, dtype=float)
    norm = np.abs(A).sum(axis=1).max() if A.size else 0.0
    s = max(0, int(np.ceil(np.log2(norm / 0.25))) if norm > 0.25 else 0)
    A = A / 2.0**s
    E = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ A / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def bfs_distances(adjacency) -> np.ndarray:
    """All-pairs hop distances by repeated breadth-first search (inf if unreachable)."""
    A = np.asarray(adjacency)
    n = A.shape[0]
    D = np.full((n, n), np.inf)
    for src in range(n):
        D[src, src] = 0
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in np.nonzero(A[u])[0]:
                if D[src, v] == np.inf:
                    D[src, v] = D[src, u] + 1
                    queue.append(v)
    return D


def random_graphs(count: int, n_min: int = 2, n_max: int = 8, seed: int = 2024):
    rng = np.random.default_rng(seed)
    return [random_connected_graph(int(rng.integers(n_min, n_max + 1)), rng, p=float(rng.uniform(0.1, 0.9)))
            for _ in range(count)]


@pytest.fixture(scope="session")
def graphs50():
    return random_graphs(50)
