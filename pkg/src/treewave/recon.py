"""Inverse pipeline: probe plans, calibration, and coefficient recovery.

A target point on an edge is reached by four probes sent from one controlled
leaf z along the path to the far endpoint w of the edge under recovery
(path length L, path coordinate x measured from z):

    first wave   at t0,       delayed pair at s = t0 + 2 (L - x_target),
    adjoint wave at 2L + t0   (conjugate phase, zero at the final time).

The adjoint's direct support and the first wave's far-reflection share the
characteristic t + x = 2L + t0; the conjugate pair squares to a phase-free
bump on t - x = s.  The interaction functional then concentrates at
(x_target, (2L + t0 + s)/2 ) with a geometry constant that an a=1 synthetic
run measures once per plan class (calibration).  Lowering s in steps of
2 min(l_j) sweeps the target across the edge; echoes landing on
already-recovered territory are subtracted volumetrically.

All probe roles are emitted at (nominal time - b) so that the cutoff's center
rides exactly on the stated characteristics; nominal formulas are unchanged.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import Band, GraphPoint, MetricGraph, Sheaf, interval_graph, recovery_domain
from .linearize import (
    CorrectionResult,
    DtnOracle,
    InteractionResult,
    combo_cache,
    interaction_integral,
    known_region_correction,
)
from .optics import Probe, backward_lines, forward_lines, four_wave_intersections, probe_signal
from .samples import Coverage, CoverageError, RecoveredSample, RecoveredSamples
from .solver import BoundarySignal, Coefficients, Grid

log = logging.getLogger(__name__)


class PlanError(ValueError):
    pass


class ScheduleError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# path geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathChart:
    """Arclength coordinate along the unique path from a source leaf to a vertex."""

    graph: MetricGraph
    source: str
    far: str
    edges: tuple[str, ...]
    starts: tuple[float, ...]  # path coordinate of each edge's entry endpoint
    entries: tuple[str, ...]  # entry vertex of each edge along the path
    L: float

    @classmethod
    def build(cls, g: MetricGraph, source: str, far: str) -> "PathChart":
        eids = tuple(g.path_edges(source, far))
        verts = g.path_vertices(source, far)
        starts, acc = [], 0.0
        for eid in eids:
            starts.append(acc)
            acc += g.edges[eid].length
        return cls(
            graph=g,
            source=source,
            far=far,
            edges=eids,
            starts=tuple(starts),
            entries=tuple(verts[:-1]),
            L=acc,
        )

    def contains_edge(self, eid: str) -> bool:
        return eid in self.edges

    def point_at(self, x_path: float) -> GraphPoint:
        """Graph point (canonical chart) at path coordinate x_path."""
        if not (-1e-12 <= x_path <= self.L + 1e-12):
            raise PlanError(f"path coordinate {x_path} outside [0, {self.L}]")
        for eid, start, entry in zip(self.edges, self.starts, self.entries):
            e = self.graph.edges[eid]
            if x_path <= start + e.length + 1e-12:
                local = min(max(x_path - start, 0.0), e.length)
                off = local if e.ends[0] == entry else e.length - local
                return GraphPoint(eid, off)
        raise PlanError("unreachable")

    def path_x(self, eid: str, offset: np.ndarray):
        """Path coordinate(s) of chart offsets on a path edge, else None."""
        if eid not in self.edges:
            return None
        i = self.edges.index(eid)
        e = self.graph.edges[eid]
        local = offset if e.ends[0] == self.entries[i] else e.length - offset
        return self.starts[i] + local


# ---------------------------------------------------------------------------
# plans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbePlan:
    """Four-probe schedule aimed at one space-time target.

    Invariants: s > t0 + 2b (the delayed pair must clear the first wave),
    t0 > b (signals vanish near t = 0), and the delayed twins are exact
    conjugates of one another.
    """

    chart: PathChart
    t0: float
    s: float
    h: float
    b: float
    target_x_path: float
    plan_id: str = ""

    def __post_init__(self):
        if self.t0 <= self.b:
            raise PlanError(f"t0={self.t0} must exceed the cutoff width b={self.b}")
        if self.s <= self.t0:
            raise PlanError(f"delay s={self.s} must exceed t0={self.t0}")
        if not 2 * self.b < self.s - self.t0:
            raise PlanError(
                f"cutoff too wide: need 2b < s - t0, got 2b={2 * self.b}, s-t0={self.s - self.t0}"
            )
        if not (0.0 < self.target_x_path < self.chart.L):
            raise PlanError("target must lie strictly inside the probe path")

    @property
    def L(self) -> float:
        return self.chart.L

    @property
    def source(self) -> str:
        return self.chart.source

    @property
    def target_point(self) -> GraphPoint:
        return self.chart.point_at(self.target_x_path)

    @property
    def target_t(self) -> float:
        return (2 * self.L + self.t0 + self.s) / 2.0

    @property
    def adjoint_time(self) -> float:
        return 2 * self.L + self.t0

    def probes(self) -> tuple[Probe, Probe, Probe, Probe]:
        """(adjoint, first, delayed, conjugate twin); emissions centered by -b."""
        z, h, b = self.source, self.h, self.b
        return (
            Probe(z, self.adjoint_time - b, h, b, conjugate=True, backward=True),
            Probe(z, self.t0 - b, h, b),
            Probe(z, self.s - b, h, b),
            Probe(z, self.s - b, h, b, conjugate=True),
        )

    def sources(self, grid: Grid):
        """(h_src, f1, f2, f3) sampled on the grid, zero on silent leaves."""
        p0, p1, p2, p3 = self.probes()
        leaves = grid.graph.controlled
        return (
            probe_signal(p0, grid.T, grid.dt, leaves=leaves),
            probe_signal(p1, grid.T, grid.dt, leaves=leaves),
            probe_signal(p2, grid.T, grid.dt, leaves=leaves),
            probe_signal(p3, grid.T, grid.dt, leaves=leaves),
        )

    def check_horizon(self, T: float) -> None:
        if self.adjoint_time + self.b > T + 1e-12:
            raise PlanError(
                f"adjoint probe (ends {self.adjoint_time + self.b:.4f}) exceeds horizon T={T}"
            )

    def exclusion(self):
        """Mask callable flagging the target's interaction diamond (path coords)."""
        chart, s, B, b = self.chart, self.s, self.adjoint_time, self.b

        def excl(eid: str, xs: np.ndarray, ts: np.ndarray):
            xp = chart.path_x(eid, np.asarray(xs, dtype=float))
            if xp is None:
                return np.zeros(np.shape(xs), dtype=bool)
            alpha = np.asarray(ts) - xp
            beta = np.asarray(ts) + xp
            return (np.abs(alpha - s) < 2 * b) & (np.abs(beta - B) < 2 * b)

        return excl


def plan_for_path(
    chart: PathChart, x_path: float, t0: float, h: float, b: float, plan_id: str = ""
) -> ProbePlan:
    s = t0 + 2.0 * (chart.L - x_path)
    return ProbePlan(chart=chart, t0=t0, s=s, h=h, b=b, target_x_path=x_path, plan_id=plan_id)


def plan_interval(l: float, x0: float, t0: float, h: float, b: float) -> ProbePlan:
    """Plan on the two-vertex interval graph: control at x=0, target (x0, (2l+t0+s)/2)."""
    if not 0.0 < x0 < l:
        raise PlanError(f"target x0={x0} must lie strictly inside (0, {l})")
    if t0 <= 0.0:
        raise PlanError("t0 must be positive (quiescent start)")
    g = interval_graph(l)
    chart = PathChart.build(g, "a", "b")
    return plan_for_path(chart, x0, t0, h, b, plan_id=f"interval:x0={x0:.4g},t0={t0:.4g}")


# ---------------------------------------------------------------------------
# exceptional delays
# ---------------------------------------------------------------------------


def exceptional_delays(
    chart: PathChart, t0: float, h: float, b: float, T: float, amp_floor: float = 1e-3
) -> list[float]:
    """Delay values s at which the delayed pair would ride a spurious crossing.

    Crossings of the adjoint and first supports away from their two shared
    characteristics form a finite point set; a delayed line through one of
    those points (or on top of a shared line) spoils the single-target
    geometry.  Returns the offending s values (finitely many).
    """
    g = chart.graph
    p0 = Probe(chart.source, 2 * chart.L + t0 - b, h, b, conjugate=True, backward=True)
    p1 = Probe(chart.source, t0 - b, h, b)
    L0 = backward_lines(g, p0, T, amp_floor=amp_floor)
    L1 = forward_lines(g, p1, T, amp_floor=amp_floor)
    # delayed-wave leg offsets: intercepts at nominal s = 0
    probe2 = Probe(chart.source, -b, h, b)
    legs2 = forward_lines(g, probe2, T + 2 * chart.L, amp_floor=amp_floor)

    out: set[float] = set()
    for a in L0:
        for bb in L1:
            if a.edge != bb.edge:
                continue
            length = g.edges[a.edge].length
            if a.orient == bb.orient and abs(a.c - bb.c) < 1e-9:
                for leg in legs2:
                    if leg.edge == a.edge and leg.orient == a.orient:
                        out.add(a.c - leg.c)
            elif a.orient != bb.orient:
                x = (bb.c - a.c) / (a.orient - bb.orient)
                t = a.t_at(x)
                if not (0.0 <= x <= length) or not (0.0 <= t <= T):
                    continue
                for leg in legs2:
                    if leg.edge == a.edge:
                        out.add(t - leg.orient * x - leg.c)
    return sorted(s for s in out if s > 0.0)


def choose_delay(candidates, exceptional, delta: float) -> float:
    """First candidate farther than delta from every exceptional delay."""
    cands = list(candidates)
    if not cands:
        raise PlanError("empty delay candidate window")
    exc = sorted(exceptional)
    for s in cands:
        if all(abs(s - e) > delta for e in exc):
            return s
    raise PlanError(
        f"all {len(cands)} delay candidates fall within {delta} of exceptional values"
    )


def _delay_candidates(s_nominal: float, delta: float, lo: float, hi: float, n: int = 7):
    yield s_nominal
    for k in range(1, n + 1):
        for sgn in (+1.0, -1.0):
            c = s_nominal + sgn * k * delta
            if lo < c < hi:
                yield c


# ---------------------------------------------------------------------------
# plan verification
# ---------------------------------------------------------------------------


def verify_plan(
    plan: ProbePlan, T: float, coverage: Coverage | None, amp_floor: float = 5e-3
) -> list:
    """Ray-traced soundness check: every four-wave hit must be the target or lie
    in recovered territory.  Returns the hits; raises ScheduleError on an
    uncovered hit, PlanError (exceptional) when the delay needs jitter."""
    g = plan.chart.graph
    hits = four_wave_intersections(
        g,
        plan.probes(),
        T,
        target=(plan.target_point, plan.target_t),
        coverage=coverage,
        amp_floor=amp_floor,
    )
    if any(hh.kind == "exceptional" for hh in hits):
        raise PlanError("exceptional delay: supports collide away from the target")
    bad = [hh for hh in hits if hh.kind == "outside"]
    if bad:
        h0 = bad[0]
        raise ScheduleError(
            f"plan {plan.plan_id!r}: four-wave hit outside recovered territory at "
            f"({h0.point.edge}, x={h0.point.offset:.4f}, t={h0.t:.4f})"
        )
    if not any(hh.kind == "target" for hh in hits):
        raise ScheduleError(f"plan {plan.plan_id!r}: target intersection not found")
    return hits


# ---------------------------------------------------------------------------
# calibration
# ---------------------------------------------------------------------------


def _plateau(xi: np.ndarray, b: float) -> np.ndarray:
    """1 for |xi| <= b, smooth C-infinity decay to 0 at |xi| >= 2b."""
    from .optics import _smoothstep

    return _smoothstep((2.0 * b - np.abs(xi)) / b)


def calibration_field(plan: ProbePlan, grid: Grid) -> np.ndarray:
    """Synthetic coefficient equal to 1 on the plan's interaction diamond
    (along the probe path), sampled as (nt+1, n_nodes)."""
    arr = np.zeros((grid.nt + 1, grid.n_nodes))
    t = grid.times
    chart, s, B, b = plan.chart, plan.s, plan.adjoint_time, plan.b
    for i, eid in enumerate(chart.edges):
        idx = grid.edge_idx[eid]
        e = grid.graph.edges[eid]
        off = np.arange(grid.edge_nx[eid] + 1) * grid.edge_dx[eid]
        xp = chart.path_x(eid, off)
        alpha = t[:, None] - xp[None, :]
        beta = t[:, None] + xp[None, :]
        arr[:, idx] = _plateau(alpha - s, b) * _plateau(beta - B, b)
    return arr


@dataclass
class CalibrationTable:
    """Measured normalization constants per plan geometry class."""

    entries: dict[tuple, complex] = field(default_factory=dict)

    @staticmethod
    def key(plan: ProbePlan, grid: Grid) -> tuple:
        return (
            plan.source,
            plan.chart.far,
            plan.chart.edges,
            round(plan.h, 12),
            round(plan.b, 12),
            grid.n_nodes,
            round(grid.dt, 15),
        )

    def get_or_compute(self, plan: ProbePlan, grid: Grid, coeffs_q: Coefficients, **kw) -> complex:
        k = self.key(plan, grid)
        if k not in self.entries:
            self.entries[k] = calibrate(plan, grid, coeffs_q, **kw)
        return self.entries[k]


def calibrate(
    plan: ProbePlan,
    grid: Grid,
    coeffs_q: Coefficients,
    *,
    guard: float = 10.0,
    eps: float | None = None,
    noise_floor: float = 1e-8,
) -> complex:
    """Normalization constant: the full pipeline run against a synthetic medium
    whose coefficient is 1 near the plan's target and 0 elsewhere."""
    a_cal = calibration_field(plan, grid)
    oracle = DtnOracle.from_simulation(grid, Coefficients(coeffs_q.q, a_cal), guard=guard)
    h_src, f1, f2, f3 = plan.sources(grid)
    res = interaction_integral(oracle, h_src, f1, f2, f3, eps=eps)
    if abs(res.value) < noise_floor:
        raise PlanError(
            f"probe geometry degenerate: |C_cal|={abs(res.value):.3e} below the noise floor"
        )
    return res.value


# ---------------------------------------------------------------------------
# point recovery
# ---------------------------------------------------------------------------


def recover_point(
    oracle: DtnOracle,
    plan: ProbePlan,
    c_cal: complex,
    correction: complex = 0.0,
    *,
    eps: float | None = None,
    cache=None,
) -> tuple[float, dict]:
    """Estimated coefficient at the plan's target: (I - correction) / C_cal."""
    plan.check_horizon(oracle.T)
    h_src, f1, f2, f3 = plan.sources(oracle.grid if oracle.grid is not None else _need_grid(oracle))
    res = interaction_integral(oracle, h_src, f1, f2, f3, eps=eps, cache=cache)
    est = (res.value - correction) / c_cal
    diag = {
        "eps": res.eps,
        "interaction": res.value,
        "correction": correction,
        "imag": float(np.imag(est)),
        "residual": float(abs(res.residual / c_cal)),
    }
    return float(np.real(est)), diag


def _need_grid(oracle: DtnOracle) -> Grid:
    if oracle.grid is None:
        raise ValueError("this oracle carries no grid; supply sampled sources instead")
    return oracle.grid


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------


@dataclass
class RecoverySettings:
    h: float = 0.01
    b: float = 0.05
    eps: float | None = None  # None: auto ladder
    n_t0: int = 6
    n_x: int = 6
    margin: float = 1.5  # target keep-out from path vertices, in units of b
    jitter: float = 0.5  # delay jitter step, in units of b
    verify: bool = True
    correction_stride: int = 1
    guard: float = 10.0
    amp_floor: float = 5e-3


def _band_from_distance(edge_id: str, d0: float, slope: float, lo0: float, hi0: float) -> Band:
    """Band lo0 + d(x) <= t <= hi0 + d(x) with d(x) = d0 + slope*x."""
    return Band(edge=edge_id, slope=slope, c_lo=lo0 + d0, c_hi=hi0 + d0)


def recover_edge_boundary(
    g: MetricGraph,
    oracle: DtnOracle,
    z: str,
    T: float,
    settings: RecoverySettings,
    coeffs_q: Coefficients | None = None,
    calibration: CalibrationTable | None = None,
    acc: RecoveredSamples | None = None,
) -> RecoveredSamples:
    """Recover the coefficient on the edge at controlled leaf z, on the band
    2l - d(x,z) <= t <= T - d(x,z).  No corrections are needed: with
    2b < s - t0 the four waves meet only at the target."""
    if z not in g.controlled:
        raise PlanError(f"{z!r} is not a controlled leaf")
    e_z = g.leaf_edge(z)
    l = e_z.length
    if not T > 2 * l:
        raise PlanError(f"observation time too short: T={T} <= 2*l={2 * l}")
    grid = _need_grid(oracle)
    coeffs_q = coeffs_q if coeffs_q is not None else Coefficients.zero(grid)
    calibration = calibration if calibration is not None else CalibrationTable()
    out = acc if acc is not None else RecoveredSamples()
    out.coverage.attach(g, 2 * settings.b)

    far = e_z.ends[1] if e_z.ends[0] == z else e_z.ends[0]
    chart = PathChart.build(g, z, far)
    d0, dslope = g.distance_on_edge(e_z.id, z)
    band = Band(edge=e_z.id, slope=-dslope, c_lo=2 * l - d0, c_hi=T - d0)

    b, h = settings.b, settings.h
    pad = settings.margin * b
    t0_lo, t0_hi = b + pad, T - 2 * l - b - pad
    if t0_hi <= t0_lo:
        raise PlanError("horizon leaves no room for the probe schedule")
    x_lo, x_hi = pad, l - pad
    t0s = np.linspace(t0_lo, t0_hi, settings.n_t0)
    xs = np.linspace(x_lo, x_hi, settings.n_x)

    rep = plan_for_path(chart, float(xs[len(xs) // 2]), float(t0s[len(t0s) // 2]), h, b, "cal")
    rep.check_horizon(T)
    c_cal = calibration.get_or_compute(rep, grid, coeffs_q, guard=settings.guard, eps=settings.eps)

    cache = combo_cache()
    buffered: list[RecoveredSample] = []
    for t0 in t0s:
        exc = exceptional_delays(chart, float(t0), h, b, T, amp_floor=settings.amp_floor)
        for x0 in xs:
            s_nom = float(t0) + 2 * (l - float(x0))
            s = choose_delay(
                _delay_candidates(s_nom, settings.jitter * b, float(t0) + 2 * b, float(t0) + 2 * l),
                exc,
                delta=min(settings.jitter * b / 2, b / 4),
            )
            x_eff = l - (s - float(t0)) / 2.0
            plan = plan_for_path(chart, x_eff, float(t0), h, b, f"edge:{z}:t0={t0:.4g}:x={x_eff:.4g}")
            plan.check_horizon(T)
            if settings.verify:
                verify_plan(plan, T, out.coverage, amp_floor=settings.amp_floor)
            val, diag = recover_point(oracle, plan, c_cal, eps=settings.eps, cache=cache)
            tpt = plan.target_point
            buffered.append(
                RecoveredSample(
                    edge=tpt.edge,
                    x=tpt.offset,
                    t=plan.target_t,
                    value=val,
                    err=diag["residual"] + abs(diag["imag"]),
                    plan_id=plan.plan_id,
                )
            )
    out.coverage.add_band(band)
    for smp in buffered:
        out.add(smp)
    return out


def _reentry_step(g: MetricGraph, chart: PathChart) -> float:
    """Earliest echo round-trip feeding back onto the path: twice the shortest
    edge hanging off an interior path vertex."""
    hang = []
    path_edges = set(chart.edges)
    for v in g.path_vertices(chart.source, chart.far):
        for eid, _w in g.incident(v):
            if eid not in path_edges:
                hang.append(g.edges[eid].length)
    if not hang:
        return math.inf
    return 2.0 * min(hang)


def recover_path_edge(
    g: MetricGraph,
    oracle: DtnOracle,
    source: str,
    edge_id: str,
    far_vertex: str,
    acc: RecoveredSamples,
    T: float,
    settings: RecoverySettings,
    coeffs_q: Coefficients,
    calibration: CalibrationTable,
) -> int:
    """Recover one edge by probing along the path source -> far_vertex, lowering
    the delay in echo-sized rounds and subtracting known-region echoes.

    Returns the number of delay rounds executed."""
    chart = PathChart.build(g, source, far_vertex)
    if chart.edges[-1] != edge_id:
        raise PlanError(f"edge {edge_id!r} is not the last path edge towards {far_vertex!r}")
    L = chart.L
    if not T > 2 * L:
        raise PlanError(f"observation time too short: T={T} <= 2*L={2 * L}")
    grid = _need_grid(oracle)
    acc.coverage.attach(g, 2 * settings.b)
    e = g.edges[edge_id]
    l0 = e.length
    l_head = L - l0  # distance from the source to the edge's near endpoint

    d0, dslope = g.distance_on_edge(edge_id, far_vertex)
    full_band = Band(edge=edge_id, slope=dslope, c_lo=L + d0, c_hi=T - L + d0)

    b, h = settings.b, settings.h
    pad = settings.margin * b
    s_hat = _reentry_step(g, chart)
    n_rounds = 1 if not math.isfinite(s_hat) else max(1, math.ceil(2 * l0 / s_hat))

    t0_lo, t0_hi = b + pad, T - 2 * L - b - pad
    if t0_hi <= t0_lo:
        raise PlanError("horizon leaves no room for the probe schedule on this path")
    t0s = np.linspace(t0_lo, t0_hi, settings.n_t0)

    # representative plan mid-edge for the calibration constant
    rep_x = min(max(l_head + 0.5 * l0, l_head + 2 * pad), L - 2 * pad)
    rep = plan_for_path(chart, rep_x, float(t0s[len(t0s) // 2]), h, b, "cal")
    rep.check_horizon(T)
    c_cal = calibration.get_or_compute(rep, grid, coeffs_q, guard=settings.guard, eps=settings.eps)

    cache = combo_cache()
    rounds_done = 0
    for k in range(1, n_rounds + 1):
        gap_hi = 2 * l0 if not math.isfinite(s_hat) else 2 * l0 - (k - 1) * s_hat
        gap_lo = 0.0 if not math.isfinite(s_hat) else max(0.0, 2 * l0 - k * s_hat)
        gap_hi = min(gap_hi, 2 * l0 - 2 * pad)  # keep clear of the near vertex
        gap_lo = max(gap_lo, 2 * pad)  # and of the far vertex
        if gap_hi <= gap_lo:
            continue
        rounds_done += 1
        n_here = max(2, int(round(settings.n_x * (gap_hi - gap_lo) / (2 * l0))))
        if k == 1:
            gaps = np.linspace(gap_lo, gap_hi, n_here)
        else:
            # later rounds own the half-open window below the previous one
            gaps = np.linspace(gap_lo, gap_hi, n_here + 1)[:-1]
        buffered: list[RecoveredSample] = []
        for t0 in t0s:
            exc = exceptional_delays(chart, float(t0), h, b, T, amp_floor=settings.amp_floor)
            for gap in gaps:
                s_nom = float(t0) + float(gap)
                s = choose_delay(
                    _delay_candidates(s_nom, settings.jitter * b, float(t0) + 2 * b, float(t0) + 2 * l0),
                    exc,
                    delta=min(settings.jitter * b / 2, b / 4),
                )
                x_eff = L - (s - float(t0)) / 2.0
                plan = plan_for_path(
                    chart, x_eff, float(t0), h, b,
                    f"path:{edge_id}:k={k}:t0={t0:.4g}:x={x_eff:.4g}",
                )
                plan.check_horizon(T)
                if settings.verify:
                    verify_plan(plan, T, acc.coverage, amp_floor=settings.amp_floor)
                h_src, f1, f2, f3 = plan.sources(grid)
                corr = known_region_correction(
                    grid,
                    coeffs_q,
                    acc.coverage,
                    f1,
                    f2,
                    f3,
                    h_src,
                    exclude=plan.exclusion(),
                    record_every=settings.correction_stride,
                )
                val, diag = recover_point(
                    oracle, plan, c_cal, correction=corr.value, eps=settings.eps, cache=cache
                )
                tpt = plan.target_point
                buffered.append(
                    RecoveredSample(
                        edge=tpt.edge,
                        x=tpt.offset,
                        t=plan.target_t,
                        value=val,
                        err=diag["residual"] + abs(diag["imag"]) + abs(corr.unaccounted / c_cal),
                        plan_id=plan.plan_id,
                    )
                )
        if buffered:
            # expose this round's stretch of the band so later rounds can
            # classify and correct echoes landing on it
            xs_round = [smp.x for smp in buffered]
            acc.coverage.add_band(
                replace(
                    full_band,
                    x_lo=max(0.0, min(xs_round) - 2 * b),
                    x_hi=min(l0, max(xs_round) + 2 * b),
                )
            )
            for smp in buffered:
                acc.add(smp)
    # margins near the vertices are filled by continuity: declare the full band
    acc.coverage.add_band(full_band)
    return rounds_done


def recover_sheaf_stem(
    g: MetricGraph,
    oracle: DtnOracle,
    sheaf: Sheaf,
    acc: RecoveredSamples,
    T: float,
    settings: RecoverySettings,
    coeffs_q: Coefficients | None = None,
    calibration: CalibrationTable | None = None,
) -> int:
    """Recover the sheaf's stem from the leaf of its longest boundary edge.

    Requires the sheaf's boundary edges to be covered already (their bands feed
    the echo corrections).  Returns the number of delay rounds executed."""
    grid = _need_grid(oracle)
    coeffs_q = coeffs_q if coeffs_q is not None else Coefficients.zero(grid)
    calibration = calibration if calibration is not None else CalibrationTable()
    for eid in sheaf.boundary_edges:
        if not acc.coverage.has_band(eid):
            raise PlanError(
                f"boundary edge {eid!r} of the sheaf at {sheaf.vertex!r} is not covered yet"
            )
    lengths = [(g.edges[eid].length, eid, leaf) for eid, leaf in zip(sheaf.boundary_edges, sheaf.leaves)]
    lengths.sort(key=lambda r: (-r[0], r[1]))
    _lmax, _eid, source = lengths[0]
    return recover_path_edge(
        g,
        oracle,
        source,
        sheaf.stem_edge,
        sheaf.stem_far,
        acc,
        T,
        settings,
        coeffs_q,
        calibration,
    )


def recover_tree(
    g: MetricGraph,
    oracle: DtnOracle,
    gamma0: str | None,
    T: float,
    settings: RecoverySettings | None = None,
    coeffs_q: Coefficients | None = None,
) -> RecoveredSamples:
    """Full-tree recovery: boundary edges first, then interior edges bottom-up,
    each probed from the deepest controlled leaf of the subtree above it."""
    settings = settings if settings is not None else RecoverySettings()
    g0 = g.gamma0 if gamma0 is None else gamma0
    D = g.eccentricity(g0)
    if not T > 2 * D:
        raise PlanError(f"observation time too short: T={T} <= 2*D(gamma0)={2 * D}")
    grid = _need_grid(oracle)
    coeffs_q = coeffs_q if coeffs_q is not None else Coefficients.zero(grid)
    calibration = CalibrationTable()
    acc = RecoveredSamples()

    for z in sorted(g.controlled):
        recover_edge_boundary(
            g, oracle, z, T, settings, coeffs_q=coeffs_q, calibration=calibration, acc=acc
        )
    recovered = {g.leaf_edge(z).id for z in g.controlled}

    # rooted structure towards gamma0
    parent_edge: dict[str, str] = {}
    for v in g.internal_vertices:
        parent_edge[v] = g.path_edges(v, g0)[0]

    def subtree_leaves(v: str) -> list[str]:
        """Controlled leaves whose path to gamma0 passes through v."""
        out = []
        for z in g.controlled:
            if v in g.path_vertices(z, g0):
                out.append(z)
        return out

    pending = {v: eid for v, eid in parent_edge.items() if eid not in recovered}
    guard_iter = 0
    while pending:
        guard_iter += 1
        if guard_iter > len(g.edges) + 2:
            raise ScheduleError("edge recovery schedule failed to make progress")
        ready = []
        for v, eid in pending.items():
            children = [e2 for e2, _w in g.incident(v) if e2 != eid]
            if all(e2 in recovered for e2 in children):
                ready.append(v)
        if not ready:
            raise ScheduleError("no ready vertex; the tree schedule is stuck")
        ready.sort(key=lambda v: (-g.vertex_distance(v, g0), v))
        for v in ready:
            eid = pending.pop(v)
            e = g.edges[eid]
            # far endpoint = the one closer to gamma0
            a_, b_ = e.ends
            far = b_ if g.vertex_distance(b_, g0) < g.vertex_distance(a_, g0) else a_
            leaves = subtree_leaves(v)
            if not leaves:
                raise ScheduleError(f"no controlled leaf above vertex {v!r}")
            source = max(leaves, key=lambda z: (g.vertex_distance(z, v), z))
            recover_path_edge(
                g, oracle, source, eid, far, acc, T, settings, coeffs_q, calibration
            )
            recovered.add(eid)
    return acc


def coverage_includes(
    g: MetricGraph, coverage: Coverage, bands: dict[str, Band], n_check: int = 17
) -> bool:
    """True when every given per-edge band is contained in the coverage union.

    All bands are characteristic trapezoids, so per-x interval containment at a
    few stations along the edge decides inclusion."""
    for eid, band in bands.items():
        if not coverage.has_band(eid):
            return False
        length = g.edges[eid].length
        for x in np.linspace(0.0, length, n_check):
            lo, hi = band.t_lo(x), band.t_hi(x)
            ivs = sorted((bb.t_lo(x), bb.t_hi(x)) for bb in coverage.bands[eid])
            merged: list[tuple[float, float]] = []
            for a, b2 in ivs:
                if merged and a <= merged[-1][1] + 1e-9:
                    merged[-1] = (merged[-1][0], max(merged[-1][1], b2))
                else:
                    merged.append((a, b2))
            if not any(a - 1e-9 <= lo and hi <= b2 + 1e-9 for a, b2 in merged):
                return False
    return True
