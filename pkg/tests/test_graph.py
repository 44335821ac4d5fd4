"""Topology builders, mixing matrices, and the spectral gap estimator."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gossiplearn.graph import (
    NonConvergence,
    Topology,
    UnsupportedSize,
    build_topology,
    check_mixing_matrix,
    mixing_to_csv,
    spectral_gap,
    torus_shape,
    uniform_mixing,
)
from helpers import disagreement


def dense_second_eigenvalue(w):
    """Oracle: |lambda_2| from a full symmetric eigendecomposition."""
    evals = np.linalg.eigvalsh(w)
    idx = int(np.argmax(evals))  # drop one copy of the leading eigenvalue 1
    rest = np.delete(evals, idx)
    return float(np.max(np.abs(rest))) if rest.size else 0.0


def bfs_distances(topo, start):
    dist = {start: 0}
    frontier = [start]
    while frontier:
        nxt = []
        for u in frontier:
            for v in topo.neighbors(u):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    nxt.append(v)
        frontier = nxt
    return dist


VALID_CASES = [
    ("ring", 4), ("ring", 8), ("ring", 16), ("ring", 32),
    ("chain", 2), ("chain", 5), ("chain", 16),
    ("dyck", 32),
    ("torus", 9), ("torus", 12), ("torus", 32), ("torus", 36),
    ("full", 1), ("full", 2), ("full", 6),
]


# ---------------------------------------------------------------- builders


def test_ring_structure():
    topo = build_topology("ring", 6)
    assert len(topo.edges) == 6
    assert all(topo.degree(i) == 2 for i in range(6))
    assert topo.neighbors(0) == (1, 5)


def test_chain_structure():
    topo = build_topology("chain", 4)
    assert len(topo.edges) == 3
    assert [topo.degree(i) for i in range(4)] == [1, 2, 2, 1]


def test_full_structure():
    topo = build_topology("full", 5)
    assert len(topo.edges) == 10
    assert all(topo.degree(i) == 4 for i in range(5))


def test_torus_shape_rule():
    assert torus_shape(9) == (3, 3)
    assert torus_shape(12) == (3, 4)
    assert torus_shape(32) == (4, 8)
    assert torus_shape(36) == (6, 6)


def test_torus_9_is_the_3x3_wraparound_grid():
    topo = build_topology("torus", 9)
    # 3 row cycles and 3 column cycles of length 3 give 18 distinct edges
    assert len(topo.edges) == 18
    assert all(topo.degree(i) == 4 for i in range(9))


def test_dyck_graph_signature():
    # label-invariant checks so any isomorphic vertex numbering passes
    topo = build_topology("dyck", 32)
    assert topo.n_agents == 32
    assert len(topo.edges) == 48
    assert all(topo.degree(i) == 3 for i in range(32))

    dist = bfs_distances(topo, 0)
    assert len(dist) == 32  # connected

    # bipartite: 2-coloring by BFS parity never conflicts across an edge
    color = {v: d % 2 for v, d in dist.items()}
    assert all(color[a] != color[b] for a, b in topo.edges)

    # girth 6: shortest cycle through any vertex has length 6
    def shortest_cycle_through(s):
        best = None
        parent = {s: None}
        dist2 = {s: 0}
        frontier = [s]
        while frontier:
            nxt = []
            for u in frontier:
                for v in topo.neighbors(u):
                    if v not in dist2:
                        dist2[v] = dist2[u] + 1
                        parent[v] = u
                        nxt.append(v)
                    elif parent[u] != v:
                        cyc = dist2[u] + dist2[v] + 1
                        if best is None or cyc < best:
                            best = cyc
            frontier = nxt
        return best

    girth = min(shortest_cycle_through(s) for s in range(32))
    assert girth == 6


def test_unsupported_sizes_raise():
    for kind, n in [("ring", 2), ("ring", 1), ("chain", 1), ("dyck", 16),
                    ("dyck", 33), ("torus", 10), ("torus", 8), ("torus", 7),
                    ("full", 0), ("ring", 0)]:
        with pytest.raises(UnsupportedSize):
            build_topology(kind, n)
    with pytest.raises(ValueError):
        build_topology("star", 4)


def test_single_node_full_graph_allowed():
    topo = build_topology("full", 1)
    w = uniform_mixing(topo)
    assert w.shape == (1, 1) and w[0, 0] == 1.0
    assert spectral_gap(w) == 1.0


# ---------------------------------------------------------------- mixing


def test_uniform_weights_on_ring():
    topo = build_topology("ring", 5)
    w = uniform_mixing(topo)
    assert np.allclose(np.diag(w), 1.0 / 3.0)
    for i, j in topo.edges:
        assert w[i, j] == pytest.approx(1.0 / 3.0)


def test_chain_uses_metropolis_hastings_weights():
    # degrees 1,2,2,1: edge weight 1/(1+max degree), slack absorbed on the diagonal
    topo = build_topology("chain", 4)
    w = uniform_mixing(topo)
    assert w[0, 1] == pytest.approx(1.0 / 3.0)
    assert w[1, 2] == pytest.approx(1.0 / 3.0)
    assert w[0, 0] == pytest.approx(2.0 / 3.0)
    assert w[1, 1] == pytest.approx(1.0 / 3.0)
    check_mixing_matrix(w, topo)


@pytest.mark.parametrize("kind,n", VALID_CASES)
def test_mixing_matrices_pass_validity_checks(kind, n):
    topo = build_topology(kind, n)
    w = uniform_mixing(topo)
    check_mixing_matrix(w, topo, tol=1e-12)


def test_check_rejects_bad_matrices():
    topo = build_topology("ring", 4)
    w = uniform_mixing(topo)

    asym = w.copy()
    asym[0, 1] += 1e-6
    with pytest.raises(ValueError):
        check_mixing_matrix(asym, topo)

    offsum = w.copy()
    offsum[0, 0] += 1e-6
    offsum[1, 0] += 1e-6  # keep symmetric companion consistent
    with pytest.raises(ValueError):
        check_mixing_matrix(offsum, topo)

    support = w.copy()
    support[0, 2] = support[2, 0] = 0.1  # not an edge of the 4-ring
    support[0, 0] -= 0.1
    support[2, 2] -= 0.1
    with pytest.raises(ValueError):
        check_mixing_matrix(support, topo)

    negative = w.copy()
    negative[0, 1] = negative[1, 0] = -1.0 / 3.0
    negative[0, 0] += 2.0 / 3.0
    negative[1, 1] += 2.0 / 3.0
    with pytest.raises(ValueError):
        check_mixing_matrix(negative, topo)


# ---------------------------------------------------------------- spectra


def test_ring_16_gap_matches_closed_form():
    # uniform 3-weight ring: lambda_2 = (1 + 2 cos(2 pi / n)) / 3
    w = uniform_mixing(build_topology("ring", 16))
    expected = 1.0 - (1.0 + 2.0 * math.cos(2.0 * math.pi / 16.0)) / 3.0
    assert spectral_gap(w) == pytest.approx(expected, rel=1e-8)


def test_ring_4_gap_is_two_thirds():
    w = uniform_mixing(build_topology("ring", 4))
    assert spectral_gap(w) == pytest.approx(2.0 / 3.0, rel=1e-8)


@pytest.mark.parametrize("kind,n", [(k, n) for k, n in VALID_CASES if n > 1])
def test_gap_matches_dense_eigendecomposition(kind, n):
    # compare |lambda_2| itself; the gap can be tiny, which would turn a
    # relative bound on it into an unreasonably absolute one
    w = uniform_mixing(build_topology(kind, n))
    got = 1.0 - spectral_gap(w)
    assert got == pytest.approx(dense_second_eigenvalue(w), rel=1e-6, abs=1e-9)


def test_ring_gap_shrinks_with_size():
    gaps = [spectral_gap(uniform_mixing(build_topology("ring", n)))
            for n in (4, 8, 16, 32)]
    assert gaps[0] > gaps[1] > gaps[2] > gaps[3] > 0


def test_full_graph_gap_is_one():
    w = uniform_mixing(build_topology("full", 6))
    assert spectral_gap(w) == pytest.approx(1.0, abs=1e-12)


def test_gap_estimator_raises_without_convergence():
    w = uniform_mixing(build_topology("ring", 16))
    with pytest.raises(NonConvergence):
        spectral_gap(w, max_iter=2)


def test_gossip_contracts_at_the_spectral_rate():
    topo = build_topology("ring", 8)
    w = uniform_mixing(topo)
    rate = 1.0 - spectral_gap(w)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(8, 5))
    d = disagreement(x)
    for _ in range(30):
        x = w @ x
        d_next = disagreement(x)
        assert d_next <= rate * d * (1.0 + 1e-6)
        d = d_next


def test_mixing_csv_round_trip(tmp_path):
    w = uniform_mixing(build_topology("torus", 9))
    path = tmp_path / "w.csv"
    mixing_to_csv(w, str(path))
    back = np.loadtxt(path, delimiter=",")
    assert np.allclose(back, w, atol=1e-15)


# ---------------------------------------------------------------- properties


@settings(max_examples=30, deadline=None)
@given(st.sampled_from(VALID_CASES))
def test_every_valid_topology_yields_a_usable_matrix(case):
    kind, n = case
    topo = build_topology(kind, n)
    assert isinstance(topo, Topology)
    w = uniform_mixing(topo)
    check_mixing_matrix(w, topo)
    gap = spectral_gap(w)
    assert 0.0 < gap <= 1.0 + 1e-12
