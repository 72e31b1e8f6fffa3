import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from estimandlab.errors import CycleError, GraphError
from estimandlab.graph import (Dag, ancestors, build_dag, d_connecting_trail, d_separated, descendants,
                               format_graph, parse_graph, parse_label, remove_edges, render_label, swig,
                               swig_independent)

from oracles import descendants_closure, dsep_bruteforce

NODES = ["Z", "X", "A", "U", "Y"]
FULL_EDGES = [("Z", "X"), ("Z", "A"), ("X", "A"), ("X", "Y"), ("A", "Y"), ("U", "X"), ("U", "Y")]


@pytest.fixture
def g1():
    return build_dag(NODES, FULL_EDGES)


@pytest.fixture
def g2(g1):
    return remove_edges(g1, [("Z", "X"), ("X", "Y")])


def test_build_full_structure(g1):
    assert g1.nodes == tuple(NODES)
    assert g1.edges == frozenset(FULL_EDGES)
    assert g1.parents["Y"] == ("X", "A", "U")
    assert g1.parents["X"] == ("Z", "U")
    assert g1.topological_order.index("U") < g1.topological_order.index("X")


def test_single_node():
    g = build_dag(["Z"], [])
    assert g.nodes == ("Z",) and not g.edges


def test_cycle_rejected():
    with pytest.raises(CycleError) as info:
        build_dag(["Z", "X"], [("Z", "X"), ("X", "Z")])
    assert set(info.value.cycle) == {"Z", "X"}


@pytest.mark.parametrize("nodes,edges", [
    (["Z", "Z"], []),
    (["Z", "X"], [("Z", "Q")]),
    (["Z"], [("Z", "Z")]),
    (["Z", "X"], [("Z", "X"), ("Z", "X")]),
])
def test_invalid_graphs(nodes, edges):
    with pytest.raises(GraphError):
        build_dag(nodes, edges)


def test_remove_edges(g1, g2):
    assert g2.edges == frozenset(FULL_EDGES) - {("Z", "X"), ("X", "Y")}
    assert remove_edges(g1, []) == g1
    g7 = remove_edges(g1, [("X", "A")])
    assert ("X", "A") not in g7.edges and len(g7.edges) == 6
    with pytest.raises(GraphError):
        remove_edges(g2, [("Z", "X")])


def test_ancestors_descendants(g1, g2):
    assert ancestors(g1, "Y") == {"Z", "X", "A", "U"}
    assert descendants(g1, "U") == {"X", "A", "Y"}
    # structure 2 keeps U -> X -> A -> Y and U -> Y
    assert descendants(g2, "U") == descendants_closure(g2.edges, "U") == {"X", "A", "Y"}
    with pytest.raises(GraphError):
        ancestors(g1, "Q")


def test_dsep_known_statements(g1):
    assert d_separated(g1, {"Z"}, {"U"}, set())
    assert not d_separated(g1, {"A"}, {"U"}, {"X"})
    assert not d_separated(g1, {"Z"}, {"Y"}, {"X", "A"})
    chain = build_dag(["Z", "A", "Y"], [("Z", "A"), ("A", "Y")])
    assert d_separated(chain, "Z", "Y", {"A"})


def test_dsep_errors(g1):
    with pytest.raises(GraphError):
        d_separated(g1, {"A"}, {"A"}, set())
    with pytest.raises(GraphError):
        d_separated(g1, {"A"}, {"Y"}, {"A"})
    with pytest.raises(GraphError):
        d_separated(g1, {"Q"}, {"Y"}, set())


def test_collider_witness(g1):
    assert d_connecting_trail(g1, "A", "U", {"X"}) == ["A", "<-", "Z", "->", "X", "<-", "U"]
    assert d_connecting_trail(g1, "Z", "U", set()) is None


def _random_dag(rng, n, p):
    names = [f"V{i}" for i in range(n)]
    order = rng.permutation(n)
    edges = [(names[order[i]], names[order[j]]) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return build_dag(names, edges)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 8), p=st.floats(0.1, 0.7))
def test_dsep_matches_path_enumeration(seed, n, p):
    rng = np.random.default_rng(seed)
    g = _random_dag(rng, n, p)
    for _ in range(10):
        perm = list(rng.permutation(g.nodes))
        a, b = {perm[0]}, {perm[1]}
        c = {v for v in perm[2:] if rng.random() < 0.4}
        want = dsep_bruteforce(g.nodes, g.edges, a, b, c)
        assert d_separated(g, a, b, c) == want
        assert d_separated(g, b, a, c) == want
        trail = d_connecting_trail(g, a, b, c)
        assert (trail is None) == want


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_edge_removal_never_creates_dependence(seed):
    rng = np.random.default_rng(seed)
    g = _random_dag(rng, 6, 0.5)
    drop = [e for e in g.edges if rng.random() < 0.4]
    h = remove_edges(g, drop)
    nodes = list(g.nodes)
    for a, b in itertools.combinations(nodes, 2):
        rest = [v for v in nodes if v not in (a, b)]
        for k in range(len(rest) + 1):
            for c in itertools.combinations(rest, k):
                if d_separated(g, {a}, {b}, set(c)):
                    assert d_separated(h, {a}, {b}, set(c))


def test_swig_assignment(g1):
    sw = swig(g1, {"Z": "z"})
    assert set(sw.dag.nodes) == {"Z", "z", "X^z", "A^z", "Y^z", "U"}
    assert ("z", "X^z") in sw.dag.edges and ("z", "A^z") in sw.dag.edges
    assert sw.dag.parents["Z"] == ()


def test_swig_joint(g1):
    sw = swig(g1, {"Z": "z", "A": "a"})
    assert set(sw.dag.nodes) == {"Z", "z", "X^z", "A^z", "a", "Y^{a,z}", "U"}
    assert ("a", "Y^{a,z}") in sw.dag.edges
    assert sw.resolve("Y^{z,a}") == "Y^{a,z}"
    assert sw.resolve("A") == "A^z"
    assert sw.dag.children["A^z"] == ()


def test_swig_empty_is_identity(g1):
    sw = swig(g1, {})
    assert sw.dag == g1
    assert sw.collapse() == g1


@pytest.mark.parametrize("do", [{"Z": "z"}, {"A": "a"}, {"Z": "z", "A": "a"}, {"X": "x", "U": "u"}])
def test_swig_collapse_recovers_source(g1, do):
    sw = swig(g1, do)
    assert sw.collapse() == g1
    # each intervened node appears once as a random/fixed pair
    for v, lab in do.items():
        assert sw.fixed_nodes[lab] == v
        assert sum(1 for b, _ in sw.random_nodes.values() if b == v) == 1


def test_swig_superscripts_are_fixed_ancestors(g1):
    sw = swig(g1, {"Z": "z", "A": "a"})
    for name, (_, sup) in sw.random_nodes.items():
        assert sup == ancestors(sw.dag, name) & set(sw.fixed_nodes)


def test_swig_errors(g1):
    with pytest.raises(GraphError):
        swig(g1, {"Q": "q"})
    with pytest.raises(GraphError):
        swig(g1, {"Z": "X"})
    sw = swig(g1, {"Z": "z"})
    with pytest.raises(GraphError):
        sw.resolve("Y^a")


def test_swig_known_independences(g1, g2):
    assert swig_independent(swig(g1, {"Z": "z"}), "Y^z", {"Z"})
    sw_za = swig(g1, {"Z": "z", "A": "a"})
    assert swig_independent(sw_za, "Y^{z,a}", {"Z"})
    assert swig_independent(sw_za, "Y^{z,a}", {"A^z"}, {"X^z", "Z"})
    sw_a = swig(g1, {"A": "a"})
    assert swig_independent(sw_a, "Y^a", {"A"}, {"Z", "X"})
    assert not swig_independent(sw_a, "Y^a", {"A"}, {"X"})
    assert swig_independent(swig(g2, {"A": "a"}), "Y^a", {"A"}, {"X"})


def test_labels_round_trip():
    assert render_label("Y", {"z", "a"}) == "Y^{a,z}"
    assert render_label("Y", {"z"}) == "Y^z"
    assert parse_label("Y^{z, a}") == ("Y", frozenset({"a", "z"}))
    assert parse_label("X^z") == ("X", frozenset({"z"}))
    assert parse_label("U") == ("U", None)
    with pytest.raises(GraphError):
        parse_label("Y^{z,}")


def test_graph_text_format(g1):
    text = format_graph(g1)
    assert parse_graph(text) == g1
    doc = """
    # full trial graph
    nodes: Z, X A  U,Y
    Z -> X
    Z->A
    """
    g = parse_graph(doc)
    assert g.nodes == ("Z", "X", "A", "U", "Y") and len(g.edges) == 2


@pytest.mark.parametrize("doc", [
    "Z -> X\n",
    "nodes: Z X\nZ => X\n",
    "nodes: Z X\nZ -> X -> Z\n",
    "nodes: Z X!\n",
    "nodes: Z X\nZ -> Q\n",
    "vertices: Z X\n",
])
def test_graph_text_rejects(doc):
    with pytest.raises(GraphError):
        parse_graph(doc)


def test_dag_is_immutable(g1):
    with pytest.raises(Exception):
        g1.nodes = ()
    assert isinstance(g1, Dag)


def test_swig_resolves_redundant_superscripts(g1, g2):
    sw2 = swig(g2, {"Z": "z", "A": "a"})
    # without Z -> X -> Y the outcome under both interventions is Y^a
    assert sw2.resolve("Y^{z,a}") == "Y^a"
    assert swig_independent(sw2, "Y^{z,a}", {"A^z"}, {"X", "Z"})
    sw1 = swig(g1, {"Z": "z", "A": "a"})
    with pytest.raises(GraphError):
        sw1.resolve("Y^a")
    with pytest.raises(GraphError):
        sw2.resolve("Y^{a,q}")
