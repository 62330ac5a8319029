import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treewave.graph import (
    GraphError,
    GraphPoint,
    MetricGraph,
    interval_graph,
    parse_graph,
    recovery_domain,
    star_graph,
)


def graph_doc(vertices, edges, gamma0):
    return json.dumps(
        {
            "vertices": vertices,
            "edges": [{"id": e, "ends": [a, b], "length": l} for e, a, b, l in edges],
            "gamma0": gamma0,
        }
    )


def test_parse_interval():
    g = parse_graph(graph_doc(["u", "v"], [("e0", "u", "v", "1.0")], "v"))
    assert g.gamma == ("u", "v")
    assert g.controlled == ("u",)
    assert g.edges["e0"].length == 1.0


def test_parse_three_star_2_1_5():
    g = star_graph(["2", "1", "5"])
    assert set(g.gamma) == {"z0", "z1", "z2"}
    assert g.degree("v") == 3
    assert g.edges["e2"].length_exact == 5


def test_parse_cycle_rejected():
    doc = graph_doc(
        ["a", "b", "c"],
        [("e0", "a", "b", "1"), ("e1", "b", "c", "1"), ("e2", "c", "a", "1")],
        "a",
    )
    with pytest.raises(GraphError, match="cycle"):
        parse_graph(doc)


def test_parse_bad_length():
    with pytest.raises(GraphError, match="positive"):
        parse_graph(graph_doc(["a", "b"], [("e0", "a", "b", "0")], "b"))


def test_gamma0_must_be_leaf():
    doc = graph_doc(
        ["a", "b", "c", "d"],
        [("e0", "a", "b", "1"), ("e1", "b", "c", "1"), ("e2", "b", "d", "1")],
        "b",
    )
    with pytest.raises(GraphError, match="leaf"):
        parse_graph(doc)


def test_degree_two_rejected():
    doc = graph_doc(["a", "b", "c"], [("e0", "a", "b", "1"), ("e1", "b", "c", "1")], "c")
    with pytest.raises(GraphError, match="degree 2"):
        parse_graph(doc)


def test_disconnected_rejected():
    doc = json.dumps(
        {
            "vertices": ["a", "b", "c", "d"],
            "edges": [
                {"id": "e0", "ends": ["a", "b"], "length": "1"},
                {"id": "e1", "ends": ["c", "d"], "length": "1"},
            ],
            "gamma0": "a",
        }
    )
    with pytest.raises(GraphError):
        parse_graph(doc)


def test_distance_identity_and_endpoints():
    g = interval_graph(2.5)
    p = GraphPoint("e0", 1.3)
    assert g.distance(p, p) == 0.0
    assert g.distance("a", "b") == pytest.approx(2.5)


def test_distance_three_star():
    g = star_graph([2.0, 1.0, 5.0])
    assert g.distance("z0", "z2") == pytest.approx(7.0)
    assert g.distance("z1", "z2") == pytest.approx(6.0)
    p = GraphPoint("e0", 0.5)  # 0.5 from hub on the length-2 edge
    r = GraphPoint("e2", 2.0)
    assert g.distance(p, r) == pytest.approx(2.5)


def test_eccentricity():
    assert interval_graph(3.0).eccentricity() == pytest.approx(3.0)
    g = star_graph([2.0, 1.0, 5.0], gamma0_index=2)
    assert g.eccentricity() == pytest.approx(7.0)
    assert star_graph([1.0, 1.0, 1.0]).eccentricity() == pytest.approx(2.0)


def test_find_sheaves_star():
    g = star_graph([2.0, 1.0, 5.0], gamma0_index=2)
    sheaves = g.find_sheaves()
    assert len(sheaves) == 1
    s = sheaves[0]
    assert s.vertex == "v"
    assert s.stem_edge == "e2"
    assert set(s.boundary_edges) == {"e0", "e1"}


def test_find_sheaves_interval_empty():
    assert interval_graph(1.0).find_sheaves() == []


def caterpillar_three_sheaves():
    """Root leaf, one junction, three star hubs hanging off the junction."""
    vertices = ["g0", "vg", "s1", "s2", "s3"]
    edges = [("r", "g0", "vg", 1.0), ("t1", "vg", "s1", 1.0), ("t2", "vg", "s2", 1.0), ("t3", "vg", "s3", 1.0)]
    leaves = []
    for i, hub in enumerate(("s1", "s2", "s3"), start=1):
        for j in range(2 + (i % 2)):
            u = f"l{i}{j}"
            leaves.append(u)
            edges.append((f"b{i}{j}", hub, u, 0.5 + 0.1 * j))
    return MetricGraph(vertices + leaves, [(e, (a, b), l) for e, a, b, l in edges], "g0")


def test_find_sheaves_caterpillar():
    g = caterpillar_three_sheaves()
    sheaves = g.find_sheaves()
    assert {s.vertex for s in sheaves} == {"s1", "s2", "s3"}
    assert all(s.stem_far == "vg" for s in sheaves)


def test_recovery_domain_interval():
    g = interval_graph(1.0)  # gamma0 = "b" at chart x = 1
    bands = recovery_domain(g, T=3.0)
    band = bands["e0"]
    # d(x, gamma0) = 1 - x, so the window is 2 - x <= t <= 3 - x
    assert band.t_lo(0.0) == pytest.approx(2.0)
    assert band.t_hi(0.0) == pytest.approx(3.0)
    assert band.t_lo(1.0) == pytest.approx(1.0)
    assert band.width == pytest.approx(1.0)


def test_recovery_domain_too_short():
    g = interval_graph(1.0)
    with pytest.raises(GraphError, match="too short"):
        recovery_domain(g, T=2.0)


def test_recovery_domain_at_gamma0():
    g = star_graph([2.0, 1.0, 5.0], gamma0_index=2)
    T = 16.0
    bands = recovery_domain(g, T=T)
    D = g.eccentricity()
    e2 = g.edges["e2"]
    x_g0 = 0.0 if e2.ends[0] == "z2" else e2.length
    band = bands["e2"]
    assert band.t_lo(x_g0) == pytest.approx(D)
    assert band.t_hi(x_g0) == pytest.approx(T - D)


# -- random-tree properties ----------------------------------------------------


@st.composite
def random_trees(draw):
    """Random metric tree with <= 8 edges and no internal degree-2 vertices.

    Built by sampling a parent function and then contracting degree-2 chains
    (adding their lengths), which keeps the metric intact.
    """
    n = draw(st.integers(min_value=2, max_value=9))
    parents = [draw(st.integers(min_value=0, max_value=i - 1)) for i in range(1, n)]
    lengths = [draw(st.floats(min_value=0.1, max_value=3.0, allow_nan=False)) for _ in range(n - 1)]
    adj: dict[int, list[tuple[int, float]]] = {i: [] for i in range(n)}
    for child, (p, l) in enumerate(zip(parents, lengths), start=1):
        adj[p].append((child, l))
        adj[child].append((p, l))
    # contract chains through degree-2 vertices
    alive = {v for v in adj if len(adj[v]) != 2}
    edges = []
    seen_pairs = set()
    for v in alive:
        for w0, l0 in adj[v]:
            path_len, prev, cur = l0, v, w0
            while len(adj[cur]) == 2:
                (a, la), (b, lb) = adj[cur]
                nxt, ln = (b, lb) if a == prev else (a, la)
                path_len += ln
                prev, cur = cur, nxt
            key = (min(v, cur), max(v, cur), round(path_len, 9))
            if key not in seen_pairs:
                seen_pairs.add(key)
                edges.append((f"e{len(edges)}", (f"n{v}", f"n{cur}"), path_len))
    verts = sorted({a for _, (a, b), _ in edges} | {b for _, (a, b), _ in edges})
    deg: dict[str, int] = {}
    for _, (a, b), _ in edges:
        deg[a] = deg.get(a, 0) + 1
        deg[b] = deg.get(b, 0) + 1
    leaves = [v for v in verts if deg[v] == 1]
    gamma0 = leaves[draw(st.integers(min_value=0, max_value=len(leaves) - 1))]
    return MetricGraph(verts, edges, gamma0)


def brute_force_distance(g: MetricGraph, u: str, v: str) -> float:
    """Minimum path length by exhaustive DFS over all simple paths."""
    best = math.inf

    def dfs(cur, acc, used):
        nonlocal best
        if cur == v:
            best = min(best, acc)
            return
        for eid, w in g.incident(cur):
            if eid not in used:
                dfs(w, acc + g.edges[eid].length, used | {eid})

    dfs(u, 0.0, frozenset())
    return best


@settings(max_examples=60, deadline=None)
@given(random_trees(), st.data())
def test_distance_is_a_metric_vs_bruteforce(g, data):
    idx = st.integers(min_value=0, max_value=len(g.vertices) - 1)
    u = g.vertices[data.draw(idx)]
    v = g.vertices[data.draw(idx)]
    w = g.vertices[data.draw(idx)]
    duv = g.distance(u, v)
    assert duv >= 0.0
    assert duv == pytest.approx(g.distance(v, u))
    assert (duv == 0.0) == (u == v)
    assert duv == pytest.approx(brute_force_distance(g, u, v))
    assert duv <= g.distance(u, w) + g.distance(w, v) + 1e-9


@settings(max_examples=60, deadline=None)
@given(random_trees())
def test_every_tree_has_a_sheaf(g):
    if len(g.edges) >= 2:
        assert len(g.find_sheaves()) >= 1


@settings(max_examples=40, deadline=None)
@given(random_trees(), st.floats(min_value=0.05, max_value=4.0))
def test_recovery_domain_constant_width(g, extra):
    D = g.eccentricity()
    T = 2 * D + extra
    bands = recovery_domain(g, T=T)
    assert set(bands) == set(g.edges)
    for band in bands.values():
        assert band.width == pytest.approx(T - 2 * D)
