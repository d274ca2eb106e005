"""Weighted social network and Perron-Frobenius primitives.

Networks are undirected, weighted and connected. ``W = D^-1 A`` is the
row-normalized adjacency. Everything is dense; graphs here have at most a
few thousand vertices.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DisconnectedGraph,
    DomainError,
    DuplicateEdge,
    IsolatedVertex,
    NegativeWeight,
    NoConvergence,
    NonPositiveGamma,
)

DEFAULT_TOL = 1e-12
DEFAULT_MAX_ITER = 100_000


@dataclass(frozen=True)
class Network:
    n: int
    weights: np.ndarray
    degrees: np.ndarray
    normalized: np.ndarray

    def __post_init__(self):
        for arr in (self.weights, self.degrees, self.normalized):
            arr.setflags(write=False)

    @classmethod
    def from_matrix(cls, weights) -> "Network":
        a = np.array(weights, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DomainError(f"weight matrix must be square, got shape {a.shape}")
        if a.shape[0] < 2:
            raise DomainError("a network needs at least 2 agents")
        if (a < 0).any():
            raise NegativeWeight("edge weights must be nonnegative")
        if not np.array_equal(a, a.T):
            raise DomainError("weight matrix must be symmetric")
        deg = a.sum(axis=1)
        isolated = np.flatnonzero(deg <= 0)
        if isolated.size:
            raise IsolatedVertex(f"vertices without edges: {isolated.tolist()}")
        if not _is_connected(a):
            raise DisconnectedGraph("graph is not connected")
        return cls(n=a.shape[0], weights=a, degrees=deg, normalized=a / deg[:, None])


@dataclass(frozen=True)
class SpectralResult:
    radius: float
    left_vector: np.ndarray
    iterations: int
    residual: float


def build_network(edges, n=None) -> Network:
    """Build a network from ``(i, j, weight)`` triples with 0-based indices.

    Each undirected edge is stored in both directions and a self-loop once.
    Listing the same unordered pair twice is accepted only when the weights
    agree.
    """
    edges = [(int(i), int(j), float(w)) for i, j, w in edges]
    if n is None:
        n = 1 + max((max(i, j) for i, j, _ in edges), default=-1)
    seen = {}
    for i, j, w in edges:
        if i < 0 or j < 0 or i >= n or j >= n:
            raise DomainError(f"edge ({i}, {j}) out of range for n={n}")
        if w < 0:
            raise NegativeWeight(f"edge ({i}, {j}) has weight {w}")
        key = (min(i, j), max(i, j))
        if key in seen and seen[key] != w:
            raise DuplicateEdge(f"edge {key} listed with weights {seen[key]} and {w}")
        seen[key] = w
    a = np.zeros((n, n))
    for (i, j), w in seen.items():
        a[i, j] = w
        a[j, i] = w
    return Network.from_matrix(a)


def _is_connected(a: np.ndarray) -> bool:
    n = a.shape[0]
    support = a > 0
    visited = np.zeros(n, dtype=bool)
    visited[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.flatnonzero(support[u] & ~visited):
            visited[v] = True
            queue.append(v)
    return bool(visited.all())


def scaled_matrix(net: Network, gamma, inverse=False) -> np.ndarray:
    """Return ``diag(gamma) W``, or ``diag(gamma)^-1 W`` when ``inverse``."""
    gamma = np.asarray(gamma, dtype=float)
    if gamma.shape != (net.n,):
        raise DomainError(f"gamma must have length {net.n}")
    if not (gamma > 0).all():
        raise NonPositiveGamma("all gamma values must be positive")
    scale = 1.0 / gamma if inverse else gamma
    return scale[:, None] * net.normalized


def perron(matrix, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, shift=0.0) -> SpectralResult:
    """Perron root and left Perron vector of a nonnegative irreducible matrix.

    Power iteration on the transpose, started from the uniform vector and
    normalized to ``sum(v) == 1``. With ``shift > 0`` the iteration runs on
    ``M + shift*I`` and the shift is removed from the reported root; use it
    for periodic (e.g. bipartite) matrices where the plain iteration
    oscillates between the +lambda and -lambda eigenvectors.
    """
    m = np.asarray(matrix, dtype=float)
    if tol <= 0:
        raise DomainError("tol must be positive")
    n = m.shape[0]
    mt = m.T + shift * np.eye(n)
    v = np.full(n, 1.0 / n)
    residual = np.inf
    for it in range(1, max_iter + 1):
        y = mt @ v
        total = y.sum()
        if not total > 0:
            raise NoConvergence("iterate collapsed to zero; matrix is not irreducible")
        v = y / total
        # vT M = lam vT with sum(v) == 1 gives lam = sum(vT M)
        vm = m.T @ v
        lam = vm.sum()
        residual = float(np.max(np.abs(vm - lam * v)))
        if residual <= tol:
            return SpectralResult(radius=float(lam), left_vector=v, iterations=it, residual=residual)
    raise NoConvergence(
        f"power iteration did not reach tol={tol:g} in {max_iter} iterations "
        f"(residual {residual:.3g})"
    )


def perron_robust(matrix, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> SpectralResult:
    """``perron`` with the unit diagonal shift as fallback.

    The plain iteration gets a short budget first; periodic matrices never
    converge there, so waiting the full ``max_iter`` would be wasted work.
    """
    try:
        return perron(matrix, tol=tol, max_iter=min(max_iter, 2_000))
    except NoConvergence:
        return perron(matrix, tol=tol, max_iter=max_iter, shift=1.0)


# ---------------------------------------------------------------------------
# generators and edge-list files


def complete_edges(n):
    return [(i, j, 1.0) for i in range(n) for j in range(i + 1, n)]


def cycle_edges(n):
    if n == 2:
        return [(0, 1, 1.0)]
    return [(i, (i + 1) % n, 1.0) for i in range(n)]


def path_edges(n):
    return [(i, i + 1, 1.0) for i in range(n - 1)]


def star_edges(n):
    """Vertex 0 is the center, ``1..n-1`` are leaves."""
    return [(0, j, 1.0) for j in range(1, n)]


def gnp_edges(n, p, seed):
    rng = np.random.default_rng(seed)
    draws = rng.random((n, n))
    return [(i, j, 1.0) for i in range(n) for j in range(i + 1, n) if draws[i, j] < p]


def generate(spec: str) -> Network:
    """Build a network from a shorthand such as ``complete:5`` or ``gnp:20:0.3:7``.

    ``star:n`` has ``n`` vertices in total with vertex 0 at the center.
    """
    kind, *args = spec.strip().split(":")
    try:
        if kind == "complete":
            (n,) = args
            edges, n = complete_edges(int(n)), int(n)
        elif kind == "cycle":
            (n,) = args
            edges, n = cycle_edges(int(n)), int(n)
        elif kind == "path":
            (n,) = args
            edges, n = path_edges(int(n)), int(n)
        elif kind == "star":
            (n,) = args
            edges, n = star_edges(int(n)), int(n)
        elif kind == "gnp":
            n, p, seed = args
            edges, n = gnp_edges(int(n), float(p), int(seed)), int(n)
        else:
            raise DomainError(f"unknown graph generator {kind!r}")
    except ValueError as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"malformed graph spec {spec!r}") from exc
    return build_network(edges, n=n)


def parse_edge_list(text: str):
    """Parse ``i j weight`` lines; ``#`` starts a comment. Weight defaults to 1."""
    edges = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (2, 3):
            raise DomainError(f"line {lineno}: expected 'i j [weight]', got {raw!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
            w = float(parts[2]) if len(parts) == 3 else 1.0
        except ValueError as exc:
            raise DomainError(f"line {lineno}: cannot parse {raw!r}") from exc
        edges.append((i, j, w))
    return edges


def load_network(source) -> Network:
    """Generator shorthand or path to an edge-list file."""
    source = str(source)
    if ":" in source and not Path(source).exists():
        return generate(source)
    return build_network(parse_edge_list(Path(source).read_text()))
