"""Communication topologies and gossip mixing matrices.

Builders for the small undirected graphs used in decentralized training
(ring, chain, 32-vertex cubic "dyck" graph, 2-D torus, fully connected),
symmetric doubly-stochastic edge weights, and a power-iteration estimator
of the spectral gap that governs gossip averaging speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOPOLOGY_KINDS = ("ring", "chain", "dyck", "torus", "full")

# Chord offsets of the 32-vertex cubic symmetric graph, applied on top of a
# Hamiltonian cycle: vertex i also connects to (i + _DYCK_CHORDS[i % 4]) mod 32.
_DYCK_CHORDS = (-13, 5, -5, 13)
_DYCK_N = 32


class UnsupportedSize(ValueError):
    """Requested topology kind cannot be built at this agent count."""


class NonConvergence(RuntimeError):
    """Power iteration failed to settle within the iteration cap."""


@dataclass(frozen=True)
class Topology:
    """Undirected connected graph over agent ids 0..n_agents-1.

    edges holds sorted (i, j) pairs with i < j and no self loops;
    neighbor_lists[i] is the sorted tuple of i's neighbors (self excluded).
    """

    kind: str
    n_agents: int
    edges: frozenset[tuple[int, int]]
    neighbor_lists: tuple[tuple[int, ...], ...]

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.neighbor_lists[i]

    def degree(self, i: int) -> int:
        return len(self.neighbor_lists[i])

    def is_regular(self) -> bool:
        degs = {len(nb) for nb in self.neighbor_lists}
        return len(degs) == 1


def _ring_edges(n: int) -> set[tuple[int, int]]:
    if n < 3:
        raise UnsupportedSize(f"ring needs n >= 3 so both neighbors are distinct, got {n}")
    return {tuple(sorted((i, (i + 1) % n))) for i in range(n)}


def _chain_edges(n: int) -> set[tuple[int, int]]:
    if n < 2:
        raise UnsupportedSize(f"chain needs n >= 2, got {n}")
    return {(i, i + 1) for i in range(n - 1)}


def _dyck_edges(n: int) -> set[tuple[int, int]]:
    if n != _DYCK_N:
        raise UnsupportedSize(f"dyck graph is defined only for n = {_DYCK_N}, got {n}")
    edges = {tuple(sorted((i, (i + 1) % n))) for i in range(n)}
    for i in range(n):
        j = (i + _DYCK_CHORDS[i % 4]) % n
        edges.add(tuple(sorted((i, j))))
    return edges


def torus_shape(n: int) -> tuple[int, int]:
    """Pick the most square r x c factorization of n with r, c >= 3.

    r is the largest divisor of n not exceeding sqrt(n); both sides must be
    at least 3 so that all four grid neighbors are distinct.
    """
    best = None
    r = 1
    while r * r <= n:
        if n % r == 0 and r >= 3 and n // r >= 3:
            best = (r, n // r)
        r += 1
    if best is None:
        raise UnsupportedSize(f"torus needs n = r*c with r, c >= 3, got {n}")
    return best


def _torus_edges(n: int) -> set[tuple[int, int]]:
    r, c = torus_shape(n)
    edges: set[tuple[int, int]] = set()
    for a in range(r):
        for b in range(c):
            v = a * c + b
            edges.add(tuple(sorted((v, ((a + 1) % r) * c + b))))
            edges.add(tuple(sorted((v, a * c + (b + 1) % c))))
    return edges


def _full_edges(n: int) -> set[tuple[int, int]]:
    if n < 1:
        raise UnsupportedSize(f"fully connected graph needs n >= 1, got {n}")
    return {(i, j) for i in range(n) for j in range(i + 1, n)}


_BUILDERS = {
    "ring": _ring_edges,
    "chain": _chain_edges,
    "dyck": _dyck_edges,
    "torus": _torus_edges,
    "full": _full_edges,
}


def _connected(n: int, neighbor_lists: tuple[tuple[int, ...], ...]) -> bool:
    seen = [False] * n
    stack = [0]
    seen[0] = True
    count = 1
    while stack:
        v = stack.pop()
        for u in neighbor_lists[v]:
            if not seen[u]:
                seen[u] = True
                count += 1
                stack.append(u)
    return count == n


def build_topology(kind: str, n_agents: int) -> Topology:
    """Construct a named topology over n_agents vertices.

    Raises UnsupportedSize when the kind cannot be realized at this size
    (e.g. dyck at n != 32, torus without an r x c >= 3x3 factorization).
    A single fully connected vertex is allowed, giving the single-node
    degenerate case.
    """
    if kind not in _BUILDERS:
        raise ValueError(f"unknown topology kind {kind!r}, expected one of {TOPOLOGY_KINDS}")
    if n_agents < 1:
        raise UnsupportedSize(f"n_agents must be positive, got {n_agents}")
    if n_agents == 1 and kind != "full":
        raise UnsupportedSize(f"{kind} needs more than one agent")
    edges = _BUILDERS[kind](n_agents)
    lists: list[list[int]] = [[] for _ in range(n_agents)]
    for i, j in edges:
        lists[i].append(j)
        lists[j].append(i)
    neighbor_lists = tuple(tuple(sorted(nb)) for nb in lists)
    if n_agents > 1 and not _connected(n_agents, neighbor_lists):
        raise UnsupportedSize(f"{kind}({n_agents}) is not connected")
    return Topology(kind, n_agents, frozenset(edges), neighbor_lists)


def uniform_mixing(topology: Topology) -> np.ndarray:
    """Symmetric doubly-stochastic weights for gossip averaging.

    Regular graphs get the uniform rule w_ij = 1/(degree+1) on every edge and
    on the diagonal (ring -> 1/3, dyck -> 1/4, torus -> 1/5). Non-regular
    graphs fall back to Metropolis-Hastings weights
    w_ij = 1/(1 + max(deg_i, deg_j)) with the diagonal absorbing the slack,
    which keeps every self weight strictly positive.
    """
    n = topology.n_agents
    w = np.zeros((n, n), dtype=np.float64)
    degs = [topology.degree(i) for i in range(n)]
    if topology.is_regular():
        val = 1.0 / (degs[0] + 1)
        for i, j in topology.edges:
            w[i, j] = val
            w[j, i] = val
        for i in range(n):
            w[i, i] = val
    else:
        for i, j in topology.edges:
            val = 1.0 / (1.0 + max(degs[i], degs[j]))
            w[i, j] = val
            w[j, i] = val
        for i in range(n):
            w[i, i] = 1.0 - w[i].sum()
    return w


def check_mixing_matrix(w: np.ndarray, topology: Topology, tol: float = 1e-12) -> None:
    """Raise ValueError if w is not a valid mixing matrix for the topology.

    Checks symmetry, row sums, nonnegativity, and that the support is exactly
    the edge set plus the diagonal.
    """
    n = topology.n_agents
    if w.shape != (n, n):
        raise ValueError(f"mixing matrix shape {w.shape} does not match n_agents {n}")
    if not np.all(np.abs(w - w.T) <= tol):
        raise ValueError("mixing matrix is not symmetric")
    if not np.all(np.abs(w.sum(axis=1) - 1.0) <= tol):
        raise ValueError("mixing matrix rows do not sum to 1")
    if w.min() < -tol:
        raise ValueError("mixing matrix has negative entries")
    for i in range(n):
        for j in range(n):
            on_support = i == j or (min(i, j), max(i, j)) in topology.edges
            if on_support and w[i, j] <= tol:
                raise ValueError(f"weight w[{i}][{j}] should be positive on the support")
            if not on_support and abs(w[i, j]) > tol:
                raise ValueError(f"weight w[{i}][{j}] is nonzero off the edge set")


def spectral_gap(w: np.ndarray, tol: float = 1e-9, max_iter: int = 200_000) -> float:
    """1 - |second largest eigenvalue| of a symmetric doubly-stochastic w.

    Power iteration runs on the mean-deflated matrix B = w - (1/n) J, whose
    dominant eigenvalue magnitude is |lambda_2|. The norm-growth estimate is
    accepted once it is stable to relative tolerance tol over a few
    consecutive iterations; NonConvergence is raised past max_iter.
    """
    n = w.shape[0]
    if n == 1:
        return 1.0
    b = w - 1.0 / n
    rng = np.random.default_rng(0x5EED)
    x = rng.standard_normal(n)
    x -= x.mean()  # stay orthogonal to the all-ones eigenvector
    norm = np.linalg.norm(x)
    if norm == 0.0:
        x = np.ones(n) / np.sqrt(n)
    else:
        x /= norm
    prev = np.inf
    stable = 0
    for _ in range(max_iter):
        y = b @ x
        sigma = float(np.linalg.norm(y))
        if sigma < 1e-14:
            return 1.0  # deflated matrix is (numerically) zero, e.g. fully connected
        if abs(sigma - prev) <= tol * sigma:
            stable += 1
            if stable >= 5:
                return 1.0 - sigma
        else:
            stable = 0
        prev = sigma
        x = y / sigma
    raise NonConvergence(f"power iteration did not converge in {max_iter} iterations")


def mixing_to_csv(w: np.ndarray, path: str) -> None:
    np.savetxt(path, w, delimiter=",")
