"""Geometric-optics layer: probes, vertex scattering, ray tracing, delay traces.

High-frequency boundary probes e^{it/h} chi_b(t) propagate along slope +-1
characteristics.  A degree-n vertex reflects an incoming unit wave with
amplitude -(n-2)/n and transmits 2/n onto every other incident edge; a
homogeneous Dirichlet leaf reflects with -1.  Superposing the traced segments
gives the leading-order field, accurate to O(h).

Internal-vertex time traces satisfy a delay system driven by the boundary
input: for each internal vertex v with incident edge lengths l_k and opposite
endpoints w_k,

    deg(v) g_v(t) = 2 sum_k sum_{m>=0} g_{w_k}(t - (2m+1) l_k)
                  - 2 sum_k sum_{m>=1} g_v(t - 2m l_k),

where leaf traces are the boundary data.  All delays are positive, so the
system is solved stepwise in t (method of steps), either on a float time grid
or exactly over rationals when the edge lengths are exact.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .graph import GraphPoint, MetricGraph
from .solver import BoundarySignal, Grid, WaveField

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# cutoff and probe signals
# ---------------------------------------------------------------------------


def _smoothstep(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for u<=0, 1 for u>=1."""
    u = np.clip(u, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        a = np.where(u > 0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)
        b = np.where(u < 1, np.exp(-1.0 / np.maximum(1.0 - u, 1e-300)), 0.0)
    return a / (a + b)


class Cutoff:
    """Smooth bump equal to 1 on [b/2, 3b/2] and vanishing outside (0, 2b).

    Symmetric about b.  `mass2` is the integral of chi^2, needed to normalize
    interaction integrals; it lies strictly between b and 2b.
    """

    def __init__(self, b: float, quad_points: int = 4001):
        if not b > 0:
            raise ValueError("cutoff width b must be positive")
        self.b = float(b)
        xi = np.linspace(0.0, 2 * self.b, quad_points)
        self.mass2 = float(np.trapezoid(self(xi) ** 2, xi))

    def __call__(self, xi):
        xi = np.asarray(xi, dtype=float)
        b = self.b
        rise = _smoothstep(xi / (b / 2))
        fall = _smoothstep((2 * b - xi) / (b / 2))
        return np.where((xi > 0) & (xi < 2 * b), np.minimum(rise, fall), 0.0)


def cutoff_chi(b: float) -> Cutoff:
    return Cutoff(b)


@dataclass(frozen=True)
class Probe:
    """High-frequency boundary probe at one leaf.

    The emitted signal is e^{i (t - t0)/h} chi_b(t - t0), supported in
    (t0, t0 + 2b).  `conjugate` flips the phase sign; `backward` marks a probe
    driving the adjoint (zero-at-final-time) wave.
    """

    leaf: str
    t0: float
    h: float
    b: float
    conjugate: bool = False
    backward: bool = False

    def __post_init__(self):
        if self.h <= 0 or self.b <= 0:
            raise ValueError("probe needs h > 0 and b > 0")
        if self.h > self.b / 4:
            log.warning("probe h=%g exceeds b/4=%g; the O(h) regime degrades", self.h, self.b / 4)


def probe_signal(p: Probe, T: float, dt: float, leaves=None) -> BoundarySignal:
    """Sample the probe on a uniform time grid covering [0, T]."""
    if p.t0 + 2 * p.b > T + 1e-12:
        raise ValueError(f"probe support ({p.t0}, {p.t0 + 2 * p.b}) exceeds horizon T={T}")
    nt = int(round(T / dt))
    t = np.arange(nt + 1) * dt
    chi = cutoff_chi(p.b)
    phase = (t - p.t0) / p.h
    if p.conjugate:
        phase = -phase
    vals = np.exp(1j * phase) * chi(t - p.t0)
    sig = BoundarySignal(dt, {p.leaf: vals})
    if leaves:
        for v in leaves:
            if v != p.leaf:
                sig.samples.setdefault(v, np.zeros(nt + 1, dtype=complex))
    return sig


# ---------------------------------------------------------------------------
# vertex scattering
# ---------------------------------------------------------------------------


def star_coefficients(n: int) -> tuple[float, float]:
    """(reflection, transmission) for a degree-n vertex under continuity + zero flux.

    Reflection enters with the minus sign: r = -(n-2)/n, tau = 2/n.  n = 1 is
    a Neumann endpoint (r = +1); a Dirichlet leaf instead reflects with -1 and
    is handled separately by the tracer.
    """
    if n < 1:
        raise ValueError("vertex degree must be >= 1")
    return -(n - 2.0) / n, 2.0 / n


# ---------------------------------------------------------------------------
# ray tracing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RaySegment:
    """One characteristic leg: slope +-1 line in an edge chart with an amplitude.

    direction +1 runs from chart x=0 towards x=l (departing the ends[0]
    endpoint), -1 the other way.  t_depart is the time at the entry endpoint.
    """

    edge: str
    direction: int
    t_depart: float
    amplitude: complex
    generation: int

    def entry_vertex(self, g: MetricGraph) -> str:
        e = g.edges[self.edge]
        return e.ends[0] if self.direction > 0 else e.ends[1]

    def exit_vertex(self, g: MetricGraph) -> str:
        e = g.edges[self.edge]
        return e.ends[1] if self.direction > 0 else e.ends[0]

    def time_at(self, g: MetricGraph, x: float) -> float:
        """Arrival time at chart offset x (must lie on the edge)."""
        e = g.edges[self.edge]
        xi = x if self.direction > 0 else e.length - x
        return self.t_depart + xi


def trace_rays(
    g: MetricGraph,
    p: Probe,
    T: float,
    amp_floor: float = 1e-3,
    generation_cap: int = 40,
    leaf_bc: dict[str, str] | None = None,
) -> list[RaySegment]:
    """Breadth-first expansion of the probe's characteristic tree up to time T.

    At a Dirichlet leaf the wave reflects with -1 (Neumann: +1, via leaf_bc);
    at an internal vertex of degree n one reflected child (amplitude x r) and
    n-1 transmitted children (x tau) are spawned.  Segments born after T or
    weaker than amp_floor are pruned; with the generation cap this guarantees
    termination.
    """
    if amp_floor <= 0:
        raise ValueError("amp_floor must be positive")
    leaf_bc = leaf_bc or {}
    e0, _ = g.incident(p.leaf)[0]
    edge0 = g.edges[e0]
    first = RaySegment(
        edge=e0,
        direction=+1 if edge0.ends[0] == p.leaf else -1,
        t_depart=p.t0,
        amplitude=1.0 + 0.0j,
        generation=0,
    )
    out: list[RaySegment] = []
    queue: list[RaySegment] = [first]
    while queue:
        nxt: list[RaySegment] = []
        for seg in queue:
            if seg.t_depart > T or abs(seg.amplitude) < amp_floor:
                continue
            if seg.generation > generation_cap:
                continue
            out.append(seg)
            e = g.edges[seg.edge]
            arrive = seg.t_depart + e.length
            if arrive > T:
                continue
            v = seg.exit_vertex(g)
            deg = g.degree(v)
            if deg == 1:
                r = +1.0 if leaf_bc.get(v) == "neumann" else -1.0
                nxt.append(
                    RaySegment(seg.edge, -seg.direction, arrive, seg.amplitude * r, seg.generation + 1)
                )
            else:
                r, tau = star_coefficients(deg)
                nxt.append(
                    RaySegment(seg.edge, -seg.direction, arrive, seg.amplitude * r, seg.generation + 1)
                )
                for eid, _w in g.incident(v):
                    if eid == seg.edge:
                        continue
                    e2 = g.edges[eid]
                    nxt.append(
                        RaySegment(
                            eid,
                            +1 if e2.ends[0] == v else -1,
                            arrive,
                            seg.amplitude * tau,
                            seg.generation + 1,
                        )
                    )
        queue = nxt
    out.sort(key=lambda s: (s.t_depart, s.edge, s.direction))
    return out


def rays_to_csv(segments: list[RaySegment]) -> str:
    lines = ["edge,direction,t_depart,re_amp,im_amp,generation"]
    for s in segments:
        lines.append(
            f"{s.edge},{s.direction},{s.t_depart!r},{s.amplitude.real!r},{s.amplitude.imag!r},{s.generation}"
        )
    return "\n".join(lines) + "\n"


def go_field(
    g: MetricGraph,
    p: Probe,
    T: float,
    grid: Grid,
    amp_floor: float = 1e-4,
    generation_cap: int = 40,
    record_every: int = 1,
) -> WaveField:
    """Leading-order field: superposition of amplitude * e^{i phi/h} chi_b(phi)
    over the traced segments, with phi the segment's retarded time.  Sampled on
    the given grid so it can be compared directly with the finite-difference
    solution (agreement is O(h) + discretization error).
    """
    segs = trace_rays(g, p, T, amp_floor=amp_floor, generation_cap=generation_cap)
    chi = cutoff_chi(p.b)
    steps = np.arange(0, grid.nt + 1, record_every)
    times = steps * grid.dt
    data = np.zeros((len(steps), grid.n_nodes), dtype=complex)
    sign = -1.0 if p.conjugate else 1.0
    for eid in sorted(g.edges):
        idx = grid.edge_idx[eid]
        e = g.edges[eid]
        x = np.arange(grid.edge_nx[eid] + 1) * grid.edge_dx[eid]
        for seg in segs:
            if seg.edge != eid:
                continue
            xi = x if seg.direction > 0 else e.length - x
            phi = times[:, None] - seg.t_depart - xi[None, :]
            data[:, idx] += seg.amplitude * np.exp(1j * sign * phi / p.h) * chi(phi)
    return WaveField(grid, data, steps)


# ---------------------------------------------------------------------------
# vertex traces (delay system)
# ---------------------------------------------------------------------------


@dataclass
class VertexTrace:
    """Time trace of the solution value at an internal vertex."""

    vertex: str
    dt: float
    values: np.ndarray
    breakpoints: list[float] = field(default_factory=list)
    max_delay_rounding: float = 0.0


@dataclass
class RationalTrace:
    """Exact trace atoms: g_v(t) = sum over delays tau of coeff * f(t - shift - tau).

    Delays are expressed in the time frame shifted by the first-arrival time
    `shift` = d(driven leaf, vertex), matching how star-graph traces are
    usually tabulated; `atoms` maps shifted delays to exact coefficients.
    """

    vertex: str
    shift: Fraction
    atoms: dict[Fraction, Fraction]

    def coefficient(self, delay) -> Fraction:
        return self.atoms.get(Fraction(delay), Fraction(0))

    def active_on(self, interval_start) -> dict[Fraction, Fraction]:
        """Atoms with shifted delay <= interval_start (those already switched on)."""
        s = Fraction(interval_start)
        return {d: c for d, c in self.atoms.items() if d <= s}


def _exact_lengths(g: MetricGraph) -> dict[str, Fraction]:
    out = {}
    for eid, e in g.edges.items():
        if e.length_exact is None:
            raise ValueError(
                f"edge {eid!r} has no exact rational length; the exact trace mode "
                "needs lengths given as decimal strings"
            )
        out[eid] = e.length_exact
    return out


def vertex_trace_rational(
    g: MetricGraph, driven_leaf: str, horizon
) -> dict[str, RationalTrace]:
    """Exact delay-system solve: coefficients of f(t - tau) at every internal vertex.

    Works over Fractions; `horizon` bounds the absolute atom times considered.
    """
    lengths = _exact_lengths(g)
    H = Fraction(horizon)
    internal = list(g.internal_vertices)
    atoms: dict[str, dict[Fraction, Fraction]] = {v: {} for v in internal}
    leaf_atoms: dict[str, dict[Fraction, Fraction]] = {v: {} for v in g.gamma}
    leaf_atoms[driven_leaf] = {Fraction(0): Fraction(1)}

    def source_atoms(v: str) -> dict[Fraction, Fraction]:
        return atoms[v] if v in atoms else leaf_atoms.get(v, {})

    heap: list[tuple[Fraction, str]] = []
    seen: set[tuple[str, Fraction]] = set()

    def push_from(v: str, tau: Fraction) -> None:
        """Schedule every internal-vertex time this atom can influence."""
        for eid, w in g.incident(v):
            l = lengths[eid]
            if w in atoms:
                m = 0
                while True:
                    t2 = tau + (2 * m + 1) * l
                    if t2 > H:
                        break
                    if (w, t2) not in seen:
                        seen.add((w, t2))
                        heapq.heappush(heap, (t2, w))
                    m += 1
            if v in atoms:
                m = 1
                while True:
                    t2 = tau + 2 * m * l
                    if t2 > H:
                        break
                    if (v, t2) not in seen:
                        seen.add((v, t2))
                        heapq.heappush(heap, (t2, v))
                    m += 1

    push_from(driven_leaf, Fraction(0))
    while heap:
        tau, v = heapq.heappop(heap)
        deg = Fraction(g.degree(v))
        acc = Fraction(0)
        for eid, w in g.incident(v):
            l = lengths[eid]
            src = source_atoms(w)
            m = 0
            while True:
                d = tau - (2 * m + 1) * l
                if d < 0:
                    break
                c = src.get(d)
                if c:
                    acc += 2 * c
                m += 1
            m = 1
            while True:
                d = tau - 2 * m * l
                if d < 0:
                    break
                c = atoms[v].get(d)
                if c:
                    acc -= 2 * c
                m += 1
        coeff = acc / deg
        if coeff != 0:
            atoms[v][tau] = coeff
            push_from(v, tau)

    out = {}
    for v in internal:
        shift = sum(
            (lengths[eid] for eid in g.path_edges(driven_leaf, v)), start=Fraction(0)
        )
        out[v] = RationalTrace(
            vertex=v,
            shift=shift,
            atoms={tau - shift: c for tau, c in sorted(atoms[v].items())},
        )
    return out


def delay_breakpoints(g: MetricGraph, horizon: float) -> list[float]:
    """All sums of even multiples of the edge lengths up to the horizon, sorted."""
    lengths = [e.length for e in g.edges.values()]
    vals = {0.0}
    frontier = [0.0]
    while frontier:
        new = []
        for t in frontier:
            for l in lengths:
                t2 = t + 2 * l
                if t2 <= horizon + 1e-12:
                    key = round(t2, 9)
                    if key not in vals:
                        vals.add(key)
                        new.append(key)
        frontier = new
    return sorted(vals)


def vertex_trace_solve(
    g: MetricGraph, f: BoundarySignal, T: float, dt: float
) -> list[VertexTrace]:
    """Method-of-steps solve of the delay system on a uniform time grid.

    Exactly one leaf may carry a nonzero drive; delays are rounded to the
    nearest sample and the largest rounding error is reported on each trace.
    """
    driven = [v for v, arr in f.samples.items() if np.max(np.abs(arr)) > 0]
    if len(driven) != 1:
        raise ValueError("vertex_trace_solve expects exactly one driven leaf")
    if driven[0] not in g.gamma:
        raise ValueError(f"{driven[0]!r} is not a leaf")
    nt = int(round(T / dt))
    drive = f.samples[driven[0]]
    if len(drive) < nt + 1:
        raise ValueError("drive shorter than the horizon")
    dtype = complex if np.iscomplexobj(drive) else float
    internal = list(g.internal_vertices)
    series = {v: np.zeros(nt + 1, dtype=dtype) for v in internal}

    def source(v):
        if v in series:
            return series[v]
        if v == driven[0]:
            return drive
        return None

    # precompute integer delay taps per vertex
    taps = {}
    max_round = 0.0
    for v in internal:
        tv = []
        for eid, w in g.incident(v):
            l = g.edges[eid].length
            src = source(w)
            m = 0
            while (2 * m + 1) * l <= T:
                d = (2 * m + 1) * l
                k = int(round(d / dt))
                max_round = max(max_round, abs(k * dt - d))
                if k < 1:
                    raise ValueError(f"dt={dt} too coarse to resolve the delay {d}")
                if src is not None:
                    tv.append((src, k, 2.0))
                m += 1
            m = 1
            while 2 * m * l <= T:
                d = 2 * m * l
                k = int(round(d / dt))
                max_round = max(max_round, abs(k * dt - d))
                tv.append((series[v], k, -2.0))
                m += 1
        taps[v] = (g.degree(v), tv)
    if max_round > dt / 2 - 1e-15:
        log.info("delay rounding error %.3e reaches dt/2; refine dt for sharper traces", max_round)

    for n in range(nt + 1):
        for v in internal:
            deg, tv = taps[v]
            acc = 0.0
            for src, k, w in tv:
                if n - k >= 0:
                    acc += w * src[n - k]
            series[v][n] = acc / deg

    bps = delay_breakpoints(g, T)
    return [
        VertexTrace(vertex=v, dt=dt, values=series[v], breakpoints=bps, max_delay_rounding=max_round)
        for v in internal
    ]


# ---------------------------------------------------------------------------
# singular-support lines and four-wave intersections
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WaveLine:
    """Center line of one traced leg in an edge chart: t = c + orient * x,
    valid for t in [t_lo, t_hi] (the leg's traversal window)."""

    edge: str
    orient: int
    c: float
    amplitude: complex
    generation: int
    t_lo: float
    t_hi: float

    def t_at(self, x: float) -> float:
        return self.c + self.orient * x

    def in_window(self, t: float, slack: float = 0.0) -> bool:
        return self.t_lo - slack <= t <= self.t_hi + slack


def forward_lines(
    g: MetricGraph, p: Probe, T: float, amp_floor: float = 1e-3, generation_cap: int = 40
) -> list[WaveLine]:
    """Support center lines of a forward probe (cutoff center at phase b)."""
    out = []
    for s in trace_rays(g, p, T, amp_floor=amp_floor, generation_cap=generation_cap):
        l = g.edges[s.edge].length
        t0c = s.t_depart + p.b
        if s.direction > 0:
            out.append(WaveLine(s.edge, +1, t0c, s.amplitude, s.generation, t0c, t0c + l))
        else:
            out.append(WaveLine(s.edge, -1, t0c + l, s.amplitude, s.generation, t0c, t0c + l))
    return out


def backward_lines(
    g: MetricGraph, p: Probe, T: float, amp_floor: float = 1e-3, generation_cap: int = 40
) -> list[WaveLine]:
    """Support center lines of the adjoint wave driven by a probe at p.t0.

    Obtained from the forward trace by the time reflection t -> 2*t0 + 2b - t,
    under which the wave leaves the leaf at t0 + b travelling to earlier times;
    the forward trace therefore runs out to the reflection pivot, not to T.
    """
    C = 2.0 * p.t0 + 2.0 * p.b
    out = []
    for line in forward_lines(g, p, C, amp_floor=amp_floor, generation_cap=generation_cap):
        t_lo, t_hi = C - line.t_hi, C - line.t_lo
        if t_hi < 0.0 or t_lo > T:
            continue
        out.append(
            WaveLine(line.edge, -line.orient, C - line.c, line.amplitude, line.generation, t_lo, t_hi)
        )
    return out


def probe_lines(g: MetricGraph, p: Probe, T: float, **kw) -> list[WaveLine]:
    return backward_lines(g, p, T, **kw) if p.backward else forward_lines(g, p, T, **kw)


@dataclass(frozen=True)
class FourWaveHit:
    point: GraphPoint
    t: float
    product: complex
    kind: str  # "target" | "known" | "exceptional" | "outside"


def _line_point_gap(line: WaveLine, x: float, t: float) -> float:
    return abs(t - line.t_at(x))


def four_wave_intersections(
    g: MetricGraph,
    probes: tuple[Probe, Probe, Probe, Probe],
    T: float,
    *,
    target: tuple[GraphPoint, float] | None = None,
    coverage=None,
    amp_floor: float = 1e-3,
    generation_cap: int = 40,
    cross_tol: float | None = None,
) -> list[FourWaveHit]:
    """Intersections of the four singular supports, treated as b -> 0 line sets.

    probes = (adjoint wave, first wave, delayed wave, its conjugate twin).
    A hit occurs where the adjoint and first supports share a whole line (their
    phases cancel) and the delayed wave's line crosses it, provided the twin
    passes too.  Transversal adjoint/first crossings form a finite point set
    whose contributions are phase-suppressed; a delayed line running through
    one of those points within `cross_tol` (default b/8, matching the delay
    jitter clearance), or lying on top of the shared line, is flagged
    exceptional.  Other hits are classified against the intended target and
    the already-recovered region.
    """
    b = max(p.b for p in probes)
    coin_tol = 2.0 * b * (1.0 - 1e-9)
    pass_tol = 2.0 * b
    if cross_tol is None:
        cross_tol = b / 8.0
    p0, p1, p2, p3 = probes
    L0 = probe_lines(g, p0, T, amp_floor=amp_floor, generation_cap=generation_cap)
    L1 = probe_lines(g, p1, T, amp_floor=amp_floor, generation_cap=generation_cap)
    L2 = probe_lines(g, p2, T, amp_floor=amp_floor, generation_cap=generation_cap)
    L3 = probe_lines(g, p3, T, amp_floor=amp_floor, generation_cap=generation_cap)

    by_edge: dict[str, tuple[list, list, list, list]] = {}
    for eid in g.edges:
        by_edge[eid] = (
            [l for l in L0 if l.edge == eid],
            [l for l in L1 if l.edge == eid],
            [l for l in L2 if l.edge == eid],
            [l for l in L3 if l.edge == eid],
        )

    def covered(eid: str, x: float, t: float) -> bool:
        return coverage is not None and coverage.covers(eid, x, t, tol=1e-6)

    def classify(eid: str, x: float, t: float) -> str:
        if target is not None:
            tp, tt = target
            if tp.edge == eid and abs(tp.offset - x) <= pass_tol and abs(tt - t) <= pass_tol:
                return "target"
        if covered(eid, x, t):
            return "known"
        return "outside"

    hits: list[FourWaveHit] = []
    seen: set[tuple[str, int, int, str]] = set()

    def emit(eid: str, x: float, t: float, prod: complex, kind: str) -> None:
        key = (eid, round(x / max(b, 1e-12)), round(t / max(b, 1e-12)), kind)
        if key not in seen:
            seen.add(key)
            hits.append(FourWaveHit(GraphPoint(eid, x), t, prod, kind))

    for eid, (l0s, l1s, l2s, l3s) in by_edge.items():
        length = g.edges[eid].length
        for a in l0s:
            for bb in l1s:
                if a.orient == bb.orient and abs(a.c - bb.c) < coin_tol:
                    # shared (phase-cancelling) line over the window overlap
                    w_lo = max(a.t_lo, bb.t_lo)
                    w_hi = min(a.t_hi, bb.t_hi)
                    if w_lo > w_hi + pass_tol:
                        continue
                    for c2 in l2s:
                        if c2.orient == a.orient:
                            if abs(c2.c - a.c) < coin_tol:
                                # the delayed wave rides the shared line: an O(1)
                                # stretch, harmless only inside recovered territory
                                s_lo = max(w_lo, c2.t_lo)
                                s_hi = min(w_hi, c2.t_hi)
                                if s_lo > s_hi + 2 * b:
                                    continue
                                s_hi = max(s_hi, s_lo)
                                ts = np.linspace(s_lo, s_hi, 5)
                                xs = (ts - a.c) * a.orient
                                ok = all(
                                    covered(eid, float(xx), float(tt))
                                    for xx, tt in zip(xs, ts)
                                    if -1e-9 <= xx <= length + 1e-9
                                )
                                kind = "known" if ok else "exceptional"
                                xm = float(np.clip(xs[len(xs) // 2], 0.0, length))
                                emit(
                                    eid, xm, float(a.t_at(xm)),
                                    a.amplitude * bb.amplitude * c2.amplitude, kind,
                                )
                            continue
                        x = (c2.c - a.c) / (a.orient - c2.orient)
                        t = a.t_at(x)
                        # each support extends b beyond its center line/window
                        if not (-b <= x <= length + b):
                            continue
                        if not (0.0 - b <= t <= T + b):
                            continue
                        if not (w_lo - b <= t <= w_hi + b):
                            continue
                        if not c2.in_window(t, slack=b):
                            continue
                        passing3 = [
                            c3
                            for c3 in l3s
                            if _line_point_gap(c3, x, t) < pass_tol and c3.in_window(t, b)
                        ]
                        if not passing3:
                            continue
                        x_cl = float(np.clip(x, 0.0, length))
                        prod = a.amplitude * bb.amplitude * c2.amplitude
                        best3 = min(passing3, key=lambda c3: _line_point_gap(c3, x, t))
                        prod *= best3.amplitude
                        emit(eid, x_cl, t, prod, classify(eid, x_cl, t))
                elif a.orient != bb.orient:
                    # transversal crossing: an isolated, phase-suppressed point;
                    # flagged when the delayed pair runs through it on unknown ground
                    x = (bb.c - a.c) / (a.orient - bb.orient)
                    t = a.t_at(x)
                    if not (0.0 <= x <= length) or not (0.0 <= t <= T):
                        continue
                    if not (a.in_window(t, b) and bb.in_window(t, b)):
                        continue
                    if any(
                        _line_point_gap(c2, x, t) < cross_tol and c2.in_window(t, b)
                        for c2 in l2s
                    ) and any(
                        _line_point_gap(c3, x, t) < cross_tol and c3.in_window(t, b)
                        for c3 in l3s
                    ):
                        kind = "known" if covered(eid, x, t) else "exceptional"
                        emit(eid, x, t, a.amplitude * bb.amplitude, kind)
    hits.sort(key=lambda hh: (hh.point.edge, hh.t, hh.point.offset))
    return hits
