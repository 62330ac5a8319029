"""Metric tree graphs: data model, validation, distances, sheaves, recovery domains.

A metric tree is a finite connected acyclic graph whose edges carry positive
lengths.  Each edge is identified with an interval [0, l] in a canonical chart
(offset measured from the lexicographically smaller endpoint id).  Degree-1
vertices are leaves; one distinguished leaf gamma0 carries a homogeneous
Dirichlet condition while the remaining leaves are controlled.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction


class GraphError(ValueError):
    """Raised for malformed or invalid graph descriptions."""


@dataclass(frozen=True)
class Edge:
    id: str
    ends: tuple[str, str]  # canonical orientation: ends[0] < ends[1]; chart x runs from ends[0]
    length: float
    length_exact: Fraction | None = None


@dataclass(frozen=True)
class GraphPoint:
    """A point on the graph: an edge id plus a chart offset in [0, length]."""

    edge: str
    offset: float


@dataclass(frozen=True)
class Sheaf:
    """A star subgraph whose edges, except the stem, all end at controlled leaves."""

    vertex: str
    boundary_edges: tuple[str, ...]
    leaves: tuple[str, ...]
    stem_edge: str
    stem_far: str


@dataclass(frozen=True)
class Band:
    """Space-time trapezoid on one edge: lo(x) <= t <= hi(x), lo/hi linear in x.

    lo(x) = c_lo + slope*x and hi(x) = c_hi + slope*x in the edge chart; the
    window width hi - lo = c_hi - c_lo is constant along the edge.  An optional
    chart extent [x_lo, x_hi] restricts the band to part of the edge.
    """

    edge: str
    slope: float
    c_lo: float
    c_hi: float
    x_lo: float = 0.0
    x_hi: float = math.inf

    def t_lo(self, x):
        return self.c_lo + self.slope * x

    def t_hi(self, x):
        return self.c_hi + self.slope * x

    def contains(self, x, t, tol: float = 1e-9) -> bool:
        if not (self.x_lo - tol <= x <= self.x_hi + tol):
            return False
        return self.t_lo(x) - tol <= t <= self.t_hi(x) + tol

    @property
    def width(self) -> float:
        return self.c_hi - self.c_lo


def _fraction_from_decimal(text: str) -> Fraction:
    return Fraction(text)


class MetricGraph:
    """Validated metric tree with cached adjacency and vertex distances.

    Immutable after construction; safe to share across workers.
    """

    def __init__(self, vertices, edges, gamma0: str):
        self.vertices: tuple[str, ...] = tuple(str(v) for v in vertices)
        if len(set(self.vertices)) != len(self.vertices):
            raise GraphError("duplicate vertex ids")
        vset = set(self.vertices)

        canon: dict[str, Edge] = {}
        for e in edges:
            if isinstance(e, Edge):
                eid, (a, b), length, exact = e.id, e.ends, e.length, e.length_exact
            else:
                eid, a, b, length = e[0], e[1][0], e[1][1], e[2]
                exact = e[3] if len(e) > 3 else None
            a, b = str(a), str(b)
            if a not in vset or b not in vset:
                raise GraphError(f"edge {eid!r} references unknown vertex")
            if a == b:
                raise GraphError(f"edge {eid!r} is a self-loop (cycle detected)")
            if not (float(length) > 0.0) or not math.isfinite(float(length)):
                raise GraphError(f"edge {eid!r}: length must be positive")
            if eid in canon:
                raise GraphError(f"duplicate edge id {eid!r}")
            if a > b:
                a, b = b, a
            canon[str(eid)] = Edge(str(eid), (a, b), float(length), exact)
        self.edges: dict[str, Edge] = canon

        self._adj: dict[str, list[tuple[str, str]]] = {v: [] for v in self.vertices}
        for e in self.edges.values():
            self._adj[e.ends[0]].append((e.id, e.ends[1]))
            self._adj[e.ends[1]].append((e.id, e.ends[0]))
        for v in self._adj:
            self._adj[v].sort()

        if len(self.edges) != len(self.vertices) - 1:
            raise GraphError("cycle detected (edge count != vertex count - 1)")
        self._check_connected()

        self.gamma: tuple[str, ...] = tuple(v for v in self.vertices if self.degree(v) == 1)
        gamma0 = str(gamma0)
        if gamma0 not in set(self.gamma):
            raise GraphError(f"gamma0 {gamma0!r} must be a leaf")
        self.gamma0 = gamma0
        self.controlled: tuple[str, ...] = tuple(v for v in self.gamma if v != gamma0)

        for v in self.vertices:
            if self.degree(v) == 2:
                raise GraphError(
                    f"internal vertex {v!r} has degree 2; merge its edges before loading"
                )

        self._vdist = self._all_vertex_distances()

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_json(cls, text: str) -> "MetricGraph":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise GraphError(f"malformed graph document: {exc}") from exc
        for key in ("vertices", "edges", "gamma0"):
            if key not in doc:
                raise GraphError(f"graph document missing {key!r}")
        edges = []
        for rec in doc["edges"]:
            try:
                eid, ends, length = rec["id"], rec["ends"], rec["length"]
            except (KeyError, TypeError) as exc:
                raise GraphError(f"malformed edge record {rec!r}") from exc
            if len(ends) != 2:
                raise GraphError(f"edge {eid!r}: ends must list two vertices")
            if isinstance(length, str):
                try:
                    exact = _fraction_from_decimal(length)
                except (ValueError, ZeroDivisionError) as exc:
                    raise GraphError(f"edge {eid!r}: bad length literal {length!r}") from exc
                edges.append((eid, (ends[0], ends[1]), float(exact), exact))
            elif isinstance(length, int):
                edges.append((eid, (ends[0], ends[1]), float(length), Fraction(length)))
            else:
                edges.append((eid, (ends[0], ends[1]), float(length), None))
        return cls(doc["vertices"], edges, doc["gamma0"])

    def _check_connected(self) -> None:
        if not self.vertices:
            raise GraphError("graph has no vertices")
        seen = {self.vertices[0]}
        stack = [self.vertices[0]]
        while stack:
            v = stack.pop()
            for _, w in self._adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        if len(seen) != len(self.vertices):
            raise GraphError("graph not connected")

    def _all_vertex_distances(self) -> dict[str, dict[str, float]]:
        dist: dict[str, dict[str, float]] = {}
        for src in self.vertices:
            d = {src: 0.0}
            stack = [src]
            while stack:
                v = stack.pop()
                for eid, w in self._adj[v]:
                    if w not in d:
                        d[w] = d[v] + self.edges[eid].length
                        stack.append(w)
            dist[src] = d
        return dist

    # -- basic queries ---------------------------------------------------------

    def degree(self, v: str) -> int:
        return len(self._adj[v])

    def is_leaf(self, v: str) -> bool:
        return self.degree(v) == 1

    def incident(self, v: str) -> list[tuple[str, str]]:
        """Incident (edge id, opposite vertex) pairs, sorted by edge id."""
        return list(self._adj[v])

    def edge(self, eid: str) -> Edge:
        return self.edges[eid]

    def leaf_edge(self, leaf: str) -> Edge:
        (eid, _other), = self._adj[leaf]
        return self.edges[eid]

    @property
    def internal_vertices(self) -> tuple[str, ...]:
        return tuple(v for v in self.vertices if self.degree(v) > 1)

    @property
    def total_length(self) -> float:
        return sum(e.length for e in self.edges.values())

    def vertex_point(self, v: str) -> GraphPoint:
        """Canonical GraphPoint for a vertex (offset 0 or l on an incident edge)."""
        eid, _ = self._adj[v][0]
        e = self.edges[eid]
        return GraphPoint(eid, 0.0 if e.ends[0] == v else e.length)

    def point_vertex(self, p: GraphPoint, tol: float = 1e-12) -> str | None:
        """Vertex id if p coincides with an edge endpoint, else None."""
        e = self.edges[p.edge]
        if abs(p.offset) <= tol:
            return e.ends[0]
        if abs(p.offset - e.length) <= tol:
            return e.ends[1]
        return None

    # -- metric ----------------------------------------------------------------

    def vertex_distance(self, u: str, v: str) -> float:
        return self._vdist[u][v]

    def distance(self, p: GraphPoint | str, r: GraphPoint | str) -> float:
        """Length of the unique path between two points (vertex ids allowed)."""
        p = self.vertex_point(p) if isinstance(p, str) else p
        r = self.vertex_point(r) if isinstance(r, str) else r
        for q in (p, r):
            e = self.edges[q.edge]
            if not (-1e-12 <= q.offset <= e.length + 1e-12):
                raise GraphError(f"point offset {q.offset} outside edge {q.edge!r}")
        if p.edge == r.edge:
            return abs(p.offset - r.offset)
        ep, er = self.edges[p.edge], self.edges[r.edge]
        best = math.inf
        for ap, dp in ((ep.ends[0], p.offset), (ep.ends[1], ep.length - p.offset)):
            for ar, dr in ((er.ends[0], r.offset), (er.ends[1], er.length - r.offset)):
                best = min(best, dp + self.vertex_distance(ap, ar) + dr)
        return best

    def path_vertices(self, u: str, v: str) -> list[str]:
        """Vertex sequence of the unique path from u to v."""
        parent: dict[str, tuple[str, str]] = {}
        seen = {u}
        stack = [u]
        while stack:
            w = stack.pop()
            if w == v:
                break
            for eid, x in self._adj[w]:
                if x not in seen:
                    seen.add(x)
                    parent[x] = (w, eid)
                    stack.append(x)
        path = [v]
        while path[-1] != u:
            path.append(parent[path[-1]][0])
        return path[::-1]

    def path_edges(self, u: str, v: str) -> list[str]:
        verts = self.path_vertices(u, v)
        out = []
        for a, b in zip(verts, verts[1:]):
            for eid, w in self._adj[a]:
                if w == b:
                    out.append(eid)
                    break
        return out

    def distance_on_edge(self, eid: str, src: str) -> tuple[float, float]:
        """(d0, slope) so that d(x, src) = d0 + slope*x for chart offset x on edge eid.

        Valid on trees: the path from any point of the edge to src leaves through
        a single endpoint, so the distance is linear in the chart coordinate.
        """
        e = self.edges[eid]
        d0 = self.vertex_distance(e.ends[0], src)
        d1 = self.vertex_distance(e.ends[1], src)
        if abs((d0 + e.length) - d1) < abs((d1 + e.length) - d0):
            return d0, 1.0  # src reached through ends[0]
        return d1 + e.length, -1.0  # src reached through ends[1]

    # -- derived structure -------------------------------------------------------

    def eccentricity(self, gamma0: str | None = None) -> float:
        """Largest distance from gamma0 to a controlled leaf."""
        g0 = self.gamma0 if gamma0 is None else gamma0
        others = [v for v in self.gamma if v != g0]
        if not others:
            raise GraphError("no controlled leaves")
        return max(self.vertex_distance(v, g0) for v in others)

    def find_sheaves(self) -> list[Sheaf]:
        """All internal vertices whose incident edges, except one, end at controlled leaves."""
        controlled = set(self.controlled)
        out = []
        for v in self.internal_vertices:
            boundary, stems = [], []
            for eid, w in self._adj[v]:
                if w in controlled:
                    boundary.append((eid, w))
                else:
                    stems.append((eid, w))
            if len(stems) == 1 and boundary:
                out.append(
                    Sheaf(
                        vertex=v,
                        boundary_edges=tuple(e for e, _ in boundary),
                        leaves=tuple(w for _, w in boundary),
                        stem_edge=stems[0][0],
                        stem_far=stems[0][1],
                    )
                )
        return out


def parse_graph(text: str) -> MetricGraph:
    """Parse and validate a JSON graph description (see README for the format)."""
    return MetricGraph.from_json(text)


def parse_graph_file(path) -> MetricGraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())


def interval_graph(length: float | str = 1.0, *, left: str = "a", right: str = "b") -> MetricGraph:
    """Single-edge tree with the control at `left` and gamma0 at `right`."""
    if isinstance(length, str):
        exact = Fraction(length)
        edges = [("e0", (left, right), float(exact), exact)]
    else:
        edges = [("e0", (left, right), float(length), None)]
    return MetricGraph([left, right], edges, right)


def star_graph(lengths, *, gamma0_index: int | None = None, hub: str = "v") -> MetricGraph:
    """Star with one hub; leaf i sits at the far end of edge `e{i}` with lengths[i].

    gamma0 defaults to the last leaf.
    """
    lengths = list(lengths)
    n = len(lengths)
    leaves = [f"z{i}" for i in range(n)]
    edges = []
    for i, l in enumerate(lengths):
        if isinstance(l, str):
            exact = Fraction(l)
            edges.append((f"e{i}", (hub, leaves[i]), float(exact), exact))
        elif isinstance(l, int):
            edges.append((f"e{i}", (hub, leaves[i]), float(l), Fraction(l)))
        else:
            edges.append((f"e{i}", (hub, leaves[i]), float(l), None))
    g0 = leaves[-1 if gamma0_index is None else gamma0_index]
    return MetricGraph([hub] + leaves, edges, g0)


def recovery_domain(g: MetricGraph, gamma0: str | None = None, T: float = 0.0) -> dict[str, Band]:
    """Per-edge trapezoid where the full-tree reconstruction is guaranteed.

    On each edge the window is D + d(x, gamma0) <= t <= T - D + d(x, gamma0)
    with D the eccentricity of gamma0; its width T - 2D must be positive.
    """
    g0 = g.gamma0 if gamma0 is None else gamma0
    D = g.eccentricity(g0)
    if not (T > 2.0 * D):
        raise GraphError(f"observation time too short: T={T} <= 2*D({g0})={2 * D}")
    out = {}
    for eid in sorted(g.edges):
        d0, slope = g.distance_on_edge(eid, g0)
        out[eid] = Band(edge=eid, slope=slope, c_lo=D + d0, c_hi=T - D + d0)
    return out
