import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rignn.graph import build_aig, build_graph, build_rig, format_edges, re_neighbors
from rignn.topics import SENTINEL_NO_REVIEW as S

from .oracles import brute_force_graph


def test_single_item():
    nodes, A_out, A_in = build_aig([7])
    assert nodes == [7]
    assert not A_out.any() and not A_in.any()


def test_single_edge():
    nodes, A_out, A_in = build_aig(["a", "b"])
    np.testing.assert_array_equal(A_out, [[0, 1], [0, 0]])
    np.testing.assert_array_equal(A_in, [[0, 0], [1, 0]])


def test_repeat_example():
    nodes, A_out, A_in = build_aig(list("abcbd"))
    assert nodes == list("abcd")
    a, b, c, d = range(4)
    expected = np.zeros((4, 4))
    expected[a, b] = 1.0
    expected[b, c] = expected[b, d] = 0.5
    expected[c, b] = 1.0
    np.testing.assert_array_equal(A_out, expected)
    # incoming: b is entered from a and c once each
    assert A_in[b, a] == A_in[b, c] == 0.5
    assert A_in[c, b] == A_in[d, b] == 1.0


def test_aig_rejects_empty():
    with pytest.raises(ValueError):
        build_aig([])


def test_rig_filters_cross_topic_adjacent_edges():
    dominant = {"v1": 1, "v2": 2, "v3": 1}
    E, B_out, _ = build_rig(["v1", "v2", "v3"], dominant)
    assert E == {(0, 2)}
    assert B_out[0, 2] == 1.0 and B_out.sum() == 1.0


def test_rig_all_same_topic():
    E, B_out, B_in = build_rig(list("abc"), {"a": 0, "b": 0, "c": 0})
    assert E == {(0, 1), (0, 2), (1, 2)}
    np.testing.assert_array_equal(B_out[0], [0, 0.5, 0.5])
    np.testing.assert_array_equal(B_in[2], [0.5, 0.5, 0])


def test_rig_sentinel():
    E, B_out, B_in = build_rig(list("abc"), {"a": S, "b": S, "c": S})
    assert E == set() and not B_out.any() and not B_in.any()


def test_rig_ignore_topics():
    E, _, _ = build_rig(list("abc"), {"a": 0, "b": 1, "c": S}, ignore_topics=True)
    assert E == {(0, 1), (0, 2), (1, 2)}


def _graph_with(edges, n=3):
    g = build_graph(list(range(n)), np.full(n, S))
    g.E_re = set(edges)
    return g


def test_re_neighbors_examples():
    g = _graph_with({(0, 2)})
    assert (re_neighbors(g, 0), re_neighbors(g, 2), re_neighbors(g, 1)) == ([2], [0], [])
    assert all(re_neighbors(_graph_with(set()), i) == [] for i in range(3))
    assert _graph_with({(0, 1), (2, 0)}).re_neighbors(0) == [1, 2]
    with pytest.raises(IndexError):
        re_neighbors(g, 3)


def test_format_edges_lists_both_graphs():
    g = build_graph([0, 1, 0], np.array([5, 6]))
    text = format_edges(g, ["x", "y"])
    assert "x -> y" in text and "RIG:" in text


# ---------------------------------------------------------------- properties

sessions = st.integers(1, 8).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 9), min_size=n, max_size=n),
                        st.lists(st.sampled_from([S, 0, 1, 2, 3]), min_size=10, max_size=10)))


@settings(max_examples=300, deadline=None)
@given(sessions)
def test_matches_brute_force(case):
    session, dominant = case
    g = build_graph(session, dominant)
    ref = brute_force_graph(session, dominant)
    assert g.nodes == ref["nodes"]
    assert g.aig_edges() == ref["aig_edges"] and g.E_re == ref["rig_edges"]
    for name in ("A_out", "A_in", "B_out", "B_in"):
        np.testing.assert_allclose(getattr(g, name), ref[name], rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(sessions)
def test_structural_invariants(case):
    session, dominant = case
    g = build_graph(session, dominant)
    tp = [dominant[i] for i in g.nodes]
    for M in (g.A_out, g.A_in, g.B_out, g.B_in):
        sums = M.sum(axis=1)
        assert np.all((np.abs(sums - 1) <= 1e-12) | (sums == 0))
    for u, w in g.E_re:
        assert u != w and tp[u] == tp[w] != S
        positions_u = [t for t, s in enumerate(g.node_of) if s == u]
        positions_w = [t for t, s in enumerate(g.node_of) if s == w]
        assert min(positions_u) < max(positions_w)
    surviving = {(u, w) for u, w in g.aig_edges() if tp[u] == tp[w] != S}
    assert surviving <= g.E_re
    assert g.E_re == {(int(u), int(w)) for u, w in zip(*np.nonzero(g.B_out))}
    assert g.E_re == {(int(w), int(u)) for u, w in zip(*np.nonzero(g.B_in))}
    assert g.A.shape == (len(g.nodes), 2 * len(g.nodes))


@settings(max_examples=100, deadline=None)
@given(sessions, st.permutations(range(10)))
def test_relabel_invariance(case, perm):
    session, dominant = case
    g = build_graph(session, dominant)
    relabelled = [perm[i] for i in session]
    dom2 = [0] * 10
    for i in range(10):
        dom2[perm[i]] = dominant[i]
    h = build_graph(relabelled, dom2)
    # slots follow first occurrence, so they line up one to one
    assert h.nodes == [perm[i] for i in g.nodes]
    for name in ("A_out", "A_in", "B_out", "B_in"):
        np.testing.assert_array_equal(getattr(g, name), getattr(h, name))
    assert g.E_re == h.E_re
