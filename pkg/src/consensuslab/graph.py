"""Undirected 0-1 interaction graphs and their Laplacian objects.

Agents are indexed from 0 in the Python API.  Graph files and experiment
configs use 1-based agent labels, which :func:`read_graph_file` and
:func:`parse_graph_text` convert.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, shortest_path

from .linalg import sym_eigen

ZERO_EIG_TOL = 1e-9
CONNECTIVITY_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with 0-1 weights.

    Attributes:
        n_agents: number of nodes ``N``.
        adjacency: symmetric ``N x N`` 0-1 matrix with zero diagonal.
        degrees: ``deg_i = sum_j a_ij``.
    """

    n_agents: int
    adjacency: np.ndarray
    degrees: np.ndarray

    @property
    def edges(self) -> list[tuple[int, int]]:
        """Undirected edges as ``(i, j)`` with ``i < j``."""
        rows, cols = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(rows.tolist(), cols.tolist()))

    @property
    def ordered_edges(self) -> list[tuple[int, int]]:
        """Every ordered pair ``(i, j)`` with ``a_ij = 1``, row-major."""
        rows, cols = np.nonzero(self.adjacency)
        return list(zip(rows.tolist(), cols.tolist()))

    def neighbors(self, i: int) -> list[int]:
        return np.nonzero(self.adjacency[i])[0].tolist()

    def has_edge(self, i: int, j: int) -> bool:
        return bool(self.adjacency[i, j])

    def __repr__(self) -> str:
        return f"Graph(n_agents={self.n_agents}, edges={self.edges})"


def build_graph(n_agents: int, edges: Iterable[tuple[int, int]]) -> Graph:
    """Build a graph from 0-based unordered index pairs.

    Duplicate edges (in either orientation) collapse to one.

    Raises:
        ValueError: on self-loops, out-of-range indices or ``n_agents < 1``.
    """
    n = int(n_agents)
    if n < 1:
        raise ValueError(f"n_agents must be positive, got {n_agents}")
    A = np.zeros((n, n), dtype=np.int64)
    for edge in edges:
        i, j = (int(v) for v in edge)
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"edge ({i}, {j}) out of range for {n} agents")
        if i == j:
            raise ValueError(f"self-loop at agent {i} is not allowed")
        A[i, j] = A[j, i] = 1
    return Graph(n, _frozen(A), _frozen(A.sum(axis=1)))


def from_adjacency(adjacency) -> Graph:
    A = np.asarray(adjacency)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(A, A.T):
        raise ValueError("adjacency must be symmetric")
    if not np.all((A == 0) | (A == 1)):
        raise ValueError("adjacency must have 0-1 entries")
    if np.any(np.diag(A)):
        raise ValueError("adjacency must have a zero diagonal")
    rows, cols = np.nonzero(np.triu(A, 1))
    return build_graph(A.shape[0], zip(rows.tolist(), cols.tolist()))


def complete_graph(n: int) -> Graph:
    return build_graph(n, itertools.combinations(range(n), 2))


def path_graph(n: int) -> Graph:
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    if n < 3:
        raise ValueError("a cycle needs at least 3 agents")
    return build_graph(n, [(i, (i + 1) % n) for i in range(n)])


def random_connected_graph(n: int, rng: np.random.Generator, p: float = 0.5) -> Graph:
    """Random spanning tree plus independent extra edges with probability ``p``."""
    order = rng.permutation(n)
    edges = {tuple(sorted((int(order[m]), int(order[rng.integers(m)])))) for m in range(1, n)}
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < p:
            edges.add((i, j))
    return build_graph(n, sorted(edges))


def parse_graph_text(text: str, source: str = "<graph>") -> Graph:
    """Parse the graph file format: first line ``N``, then ``i j`` per edge (1-based).

    ``#`` starts a comment; blank lines are ignored.
    """
    n = None
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            values = [int(p) for p in parts]
        except ValueError:
            raise ValueError(f"{source}:{lineno}: expected integers, got {line!r}") from None
        if n is None:
            if len(values) != 1:
                raise ValueError(f"{source}:{lineno}: first line must hold the agent count N")
            n = values[0]
            continue
        if len(values) != 2:
            raise ValueError(f"{source}:{lineno}: expected an edge 'i j', got {line!r}")
        i, j = values
        if not (1 <= i <= n and 1 <= j <= n):
            raise ValueError(f"{source}:{lineno}: edge ({i}, {j}) out of range 1..{n}")
        if i == j:
            raise ValueError(f"{source}:{lineno}: self-loop at agent {i}")
        edges.append((i - 1, j - 1))
    if n is None:
        raise ValueError(f"{source}: empty graph file")
    return build_graph(n, edges)


def read_graph_file(path) -> Graph:
    path = Path(path)
    return parse_graph_text(path.read_text(), source=str(path))


def format_graph_text(g: Graph) -> str:
    lines = [str(g.n_agents)] + [f"{i + 1} {j + 1}" for i, j in g.edges]
    return "\n".join(lines) + "\n"


def laplacian(g: Graph) -> np.ndarray:
    """``L = D - A``."""
    return np.diag(g.degrees).astype(np.float64) - g.adjacency


@dataclass(frozen=True, eq=False)
class LaplacianSpectrum:
    """Eigen-structure of ``L`` used throughout the analysis.

    ``phi`` holds unit eigenvectors for ``lambda_2..lambda_N`` as columns;
    ``full_transform`` is ``[1/sqrt(N), phi]``.  Only basis-invariant
    quantities (eigenvalues, ``phi @ phi.T``, quadratic forms) are
    meaningful when eigenvalues repeat.
    """

    eigenvalues: np.ndarray
    phi: np.ndarray
    lambda0: np.ndarray
    full_transform: np.ndarray

    @property
    def n_agents(self) -> int:
        return self.eigenvalues.shape[0]

    @property
    def lambda2(self) -> float:
        return float(self.eigenvalues[1]) if self.n_agents > 1 else 0.0

    @property
    def lambda_n(self) -> float:
        return float(self.eigenvalues[-1])


def spectrum(g: Graph) -> LaplacianSpectrum:
    """Eigenvalues (ascending) and the reduced eigenbasis of the Laplacian."""
    n = g.n_agents
    w, V = sym_eigen(laplacian(g))
    w = w.copy()
    ones = np.full(n, 1.0 / math.sqrt(n))
    if abs(w[0]) <= ZERO_EIG_TOL:
        w[0] = 0.0
    # For disconnected graphs the null space has dimension > 1 and eigh returns
    # an arbitrary basis of it; rebuild that block orthogonal to 1.
    c = int(np.count_nonzero(np.abs(w) <= ZERO_EIG_TOL))
    if c > 1:
        Z = V[:, :c] - np.outer(ones, ones @ V[:, :c])
        U, _, _ = np.linalg.svd(Z, full_matrices=False)
        null_rest = U[:, : c - 1]
        phi = np.hstack([null_rest, V[:, c:]])
    else:
        phi = V[:, 1:]
    T = np.hstack([ones[:, None], phi])
    return LaplacianSpectrum(
        eigenvalues=_frozen(w),
        phi=_frozen(phi),
        lambda0=_frozen(np.diag(w[1:])),
        full_transform=_frozen(T),
    )


def canonical_matrices(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(1, J_N, I_N)``; the columns of ``I_N`` are the unit vectors ``eta_{N,i}``."""
    ones = np.ones(n)
    return ones, np.full((n, n), 1.0 / n), np.eye(n)


def channel_matrix(g: Graph, i: int, j: int) -> np.ndarray:
    """``B_ij``: ``-a_ij`` at ``(i, i)``, ``a_ij`` at ``(i, j)``, zero elsewhere.

    ``(B_ij x)_i = a_ij (x_j - x_i)`` picks out the relative state carried by
    the channel from agent ``j`` to agent ``i``.
    """
    if i == j:
        raise ValueError("channel matrix needs i != j")
    n = g.n_agents
    if not (0 <= i < n and 0 <= j < n):
        raise ValueError(f"channel ({i}, {j}) out of range for {n} agents")
    B = np.zeros((n, n))
    a = float(g.adjacency[i, j])
    B[i, i] = -a
    B[i, j] = a
    return B


def _bfs_connected(g: Graph) -> bool:
    if g.n_agents == 1:
        return True
    reached = breadth_first_order(csr_matrix(g.adjacency), 0, directed=False,
                                  return_predecessors=False)
    return len(reached) == g.n_agents


def is_connected(g: Graph, tol: float = CONNECTIVITY_TOL,
                 spec: LaplacianSpectrum | None = None) -> bool:
    """``lambda_2 > tol``, cross-checked by breadth-first search.

    The search result wins if the two disagree (a warning is emitted).
    """
    bfs = _bfs_connected(g)
    if g.n_agents == 1:
        return bfs
    spec = spec if spec is not None else spectrum(g)
    spectral = spec.lambda2 > tol
    if spectral != bfs:
        warnings.warn(
            f"spectral connectivity test (lambda_2={spec.lambda2:.3e}, tol={tol:g}) "
            f"disagrees with breadth-first search; using search result {bfs}",
            RuntimeWarning,
            stacklevel=2,
        )
    return bfs


@dataclass(frozen=True)
class GraphMetrics:
    max_degree: int
    diameter: float
    synchronizability: float


def graph_metrics(g: Graph, spec: LaplacianSpectrum | None = None) -> GraphMetrics:
    """Maximum degree, diameter and ``lambda_2 / lambda_N``.

    The diameter is ``math.inf`` for a disconnected graph.
    """
    spec = spec if spec is not None else spectrum(g)
    if g.n_agents == 1:
        return GraphMetrics(0, 0.0, math.nan)
    dist = shortest_path(csr_matrix(g.adjacency), method="D", directed=False, unweighted=True)
    diameter = float(dist.max())
    lam_n = spec.lambda_n
    ratio = spec.lambda2 / lam_n if lam_n > 0 else math.nan
    return GraphMetrics(int(g.degrees.max()), diameter, float(ratio))
