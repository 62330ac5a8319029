"""Explicit leapfrog solver for the (semi)linear wave equation on a metric tree.

The equation on each edge is u_tt - u_xx + q(x) u + a(x,t) u^3 = 0 with
Dirichlet data at every leaf (zero at gamma0) and continuity plus a zero
outward-derivative sum at internal vertices.  Interior nodes use the standard
second-order stencil; an internal vertex v with incident spacings dx_j is
advanced by the lumped update

    u_v' = 2 u_v - u_v_prev
           + dt^2 * [ (2 / sum_j dx_j) * sum_j (u_{j,1} - u_v)/dx_j
                      - q(v) u_v - a(v,t) u_v^3 ]

which enforces continuity exactly (one shared node) and the flux condition
weakly.  Stability requires dt <= cfl * min_j dx_j with cfl <= 1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .graph import GraphError, MetricGraph

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class InstabilityError(SolverError):
    """Linear field norm exceeded the overflow guard."""


class BlowupError(SolverError):
    """Nonlinear solution left the small-data regime."""


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------


@dataclass
class Grid:
    graph: MetricGraph
    dt: float
    nt: int
    T: float
    cfl: float
    n_nodes: int
    vslot: dict[str, int]
    edge_idx: dict[str, np.ndarray]  # chart-ordered global node indices, length N_j + 1
    edge_nx: dict[str, int]
    edge_dx: dict[str, float]
    node_x: np.ndarray  # chart offset on the owning edge (vertices: offset on a reference edge)
    node_edge: list[str]  # owning edge id used for coefficient evaluation
    node_d0: np.ndarray  # distance to gamma0 per node
    leaf_slots: dict[str, int]
    internal: list[tuple[int, np.ndarray, np.ndarray, float]] = field(default_factory=list)
    # (vertex slot, first-interior-node indices, 1/dx_j weights, 2/sum_j dx_j)

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.nt + 1) * self.dt

    def time_index(self, t: float) -> int:
        n = int(round(t / self.dt))
        if not (0 <= n <= self.nt) or abs(n * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"t={t} is not a grid time (dt={self.dt})")
        return n


def build_grid(g: MetricGraph, target_dx: float, cfl: float, T: float) -> Grid:
    """Discretize: N_j = ceil(l_j/target_dx) nodes per edge, dt dividing T exactly."""
    if not target_dx > 0:
        raise GraphError("target_dx must be positive")
    if not (0.0 < cfl <= 1.0):
        raise GraphError(f"cfl must lie in (0, 1], got {cfl}")
    if not T > 0:
        raise GraphError("T must be positive")

    edge_nx, edge_dx = {}, {}
    for eid in sorted(g.edges):
        l = g.edges[eid].length
        n = int(math.ceil(l / target_dx - 1e-12))
        if n < 4:
            raise GraphError(f"degenerate discretization: edge {eid!r} would get {n} cells (< 4)")
        edge_nx[eid] = n
        edge_dx[eid] = l / n

    vslot = {v: i for i, v in enumerate(g.vertices)}
    n_nodes = len(g.vertices)
    edge_idx: dict[str, np.ndarray] = {}
    node_x = [0.0] * len(g.vertices)
    node_edge: list[str] = [""] * len(g.vertices)
    for v in g.vertices:
        eid, _ = g.incident(v)[0]
        e = g.edges[eid]
        node_edge[vslot[v]] = eid
        node_x[vslot[v]] = 0.0 if e.ends[0] == v else e.length
    for eid in sorted(g.edges):
        e = g.edges[eid]
        n = edge_nx[eid]
        dx = edge_dx[eid]
        interior = np.arange(n_nodes, n_nodes + n - 1)
        n_nodes += n - 1
        idx = np.concatenate(([vslot[e.ends[0]]], interior, [vslot[e.ends[1]]]))
        edge_idx[eid] = idx
        node_x.extend((np.arange(1, n) * dx).tolist())
        node_edge.extend([eid] * (n - 1))

    dt0 = cfl * min(edge_dx.values())
    nt = int(math.ceil(T / dt0 - 1e-12))
    dt = T / nt

    node_x_arr = np.asarray(node_x)
    node_d0 = np.empty(n_nodes)
    for eid in sorted(g.edges):
        d0, slope = g.distance_on_edge(eid, g.gamma0)
        idx = edge_idx[eid]
        node_d0[idx] = d0 + slope * node_x_arr[idx]

    grid = Grid(
        graph=g,
        dt=dt,
        nt=nt,
        T=T,
        cfl=cfl,
        n_nodes=n_nodes,
        vslot=vslot,
        edge_idx=edge_idx,
        edge_nx=edge_nx,
        edge_dx=edge_dx,
        node_x=node_x_arr,
        node_edge=node_edge,
        node_d0=node_d0,
        leaf_slots={v: vslot[v] for v in g.gamma},
    )
    for v in g.internal_vertices:
        nbrs, weights, dxs = [], [], []
        for eid, _ in g.incident(v):
            e = g.edges[eid]
            idx = edge_idx[eid]
            nbrs.append(idx[1] if e.ends[0] == v else idx[-2])
            weights.append(1.0 / edge_dx[eid])
            dxs.append(edge_dx[eid])
        grid.internal.append(
            (vslot[v], np.asarray(nbrs), np.asarray(weights), 2.0 / sum(dxs))
        )
    return grid


# ---------------------------------------------------------------------------
# coefficients
# ---------------------------------------------------------------------------

# Coefficient callables receive (edge_id, x_chart, d_gamma0, t) with array x/d.
CoefficientFn = Callable[[str, np.ndarray, np.ndarray, float], np.ndarray]

_VERTEX_MATCH_TOL = 1e-8


def _sample_static(grid: Grid, fn) -> np.ndarray:
    """Sample a time-independent coefficient at every node.

    Vertices are sampled from each incident edge chart; the values must agree
    (the coefficient is continuous at vertices in all shipped experiments).
    """
    g = grid.graph
    out = np.zeros(grid.n_nodes)
    seen = np.zeros(grid.n_nodes, dtype=bool)
    scale = 0.0
    for eid in sorted(g.edges):
        idx = grid.edge_idx[eid]
        x = grid.node_x[idx].copy()
        x[0], x[-1] = 0.0, g.edges[eid].length
        vals = np.asarray(fn(eid, x, grid.node_d0[idx], 0.0), dtype=float)
        if vals.ndim == 0:
            vals = np.full(idx.shape, float(vals))
        scale = max(scale, float(np.max(np.abs(vals))) if vals.size else 0.0)
        clash = seen[idx]
        if clash.any():
            old = out[idx][clash]
            new = vals[clash]
            if np.max(np.abs(old - new)) > _VERTEX_MATCH_TOL * max(1.0, scale):
                raise GraphError(
                    f"coefficient disagrees across edges at a vertex of {eid!r}; "
                    "vertex values must match within tolerance"
                )
        out[idx] = vals
        seen[idx] = True
    return out


@dataclass
class Coefficients:
    """Sampled potential q (per node) and cubic coefficient a (per node x time)."""

    q: np.ndarray
    a: np.ndarray | None  # shape (nt + 1, n_nodes) or None

    @classmethod
    def sample(cls, grid: Grid, q: CoefficientFn | float | None, a: CoefficientFn | float | None):
        if q is None:
            qv = np.zeros(grid.n_nodes)
        elif isinstance(q, (int, float)):
            qv = np.full(grid.n_nodes, float(q))
        else:
            qv = _sample_static(grid, q)
        if a is None:
            av = None
        elif isinstance(a, (int, float)):
            av = np.full((grid.nt + 1, grid.n_nodes), float(a))
        else:
            av = np.empty((grid.nt + 1, grid.n_nodes))
            g = grid.graph
            charts = {}
            for eid in sorted(g.edges):
                idx = grid.edge_idx[eid]
                x = grid.node_x[idx].copy()
                x[0], x[-1] = 0.0, g.edges[eid].length
                charts[eid] = (idx, x, grid.node_d0[idx])
            for n in range(grid.nt + 1):
                t = n * grid.dt
                for eid, (idx, x, d) in charts.items():
                    av[n, idx] = a(eid, x, d, t)
        return cls(q=qv, a=av)

    @classmethod
    def zero(cls, grid: Grid):
        return cls(q=np.zeros(grid.n_nodes), a=None)


def expression_coefficient(fn: Callable[[np.ndarray, np.ndarray, float], np.ndarray]) -> CoefficientFn:
    """Adapt f(x, d, t) -> values to the (edge, x, d, t) coefficient signature."""

    def wrapped(eid, x, d, t):
        return fn(x, d, t)

    return wrapped


# ---------------------------------------------------------------------------
# boundary signals
# ---------------------------------------------------------------------------


@dataclass
class BoundarySignal:
    """Time series attached to a subset of leaves, sampled on the solver grid."""

    dt: float
    samples: dict[str, np.ndarray]
    diagnostics: dict | None = None

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.samples.values()))) if self.samples else 0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_samples) * self.dt

    def leaf(self, v: str) -> np.ndarray:
        return self.samples[v]

    def get(self, v: str, nt: int):
        arr = self.samples.get(v)
        if arr is None:
            return None
        if len(arr) != nt + 1:
            raise ValueError(f"signal at {v!r} has {len(arr)} samples, grid wants {nt + 1}")
        return arr

    @classmethod
    def zeros(cls, dt: float, nt: int, leaves) -> "BoundarySignal":
        return cls(dt=dt, samples={v: np.zeros(nt + 1) for v in leaves})

    def copy(self) -> "BoundarySignal":
        return BoundarySignal(self.dt, {k: v.copy() for k, v in self.samples.items()})

    def conj(self) -> "BoundarySignal":
        return BoundarySignal(self.dt, {k: np.conj(v) for k, v in self.samples.items()})

    @property
    def real(self) -> "BoundarySignal":
        return BoundarySignal(self.dt, {k: np.real(v).copy() for k, v in self.samples.items()})

    @property
    def imag(self) -> "BoundarySignal":
        return BoundarySignal(self.dt, {k: np.imag(v).copy() for k, v in self.samples.items()})

    def is_real(self, tol: float = 0.0) -> bool:
        return all(
            not np.iscomplexobj(v) or np.max(np.abs(v.imag)) <= tol for v in self.samples.values()
        )

    def __add__(self, other: "BoundarySignal") -> "BoundarySignal":
        if abs(self.dt - other.dt) > 1e-15:
            raise ValueError("signal sample spacings differ")
        keys = set(self.samples) | set(other.samples)
        out = {}
        for k in keys:
            x = self.samples.get(k)
            y = other.samples.get(k)
            out[k] = (0 if x is None else x) + (0 if y is None else y)
        return BoundarySignal(self.dt, out)

    def __sub__(self, other: "BoundarySignal") -> "BoundarySignal":
        return self + (-1.0) * other

    def __rmul__(self, c) -> "BoundarySignal":
        return BoundarySignal(self.dt, {k: c * v for k, v in self.samples.items()})

    def __mul__(self, c) -> "BoundarySignal":
        return self.__rmul__(c)

    def norm(self) -> float:
        if not self.samples:
            return 0.0
        return max(float(np.max(np.abs(v))) for v in self.samples.values())

    def reversed(self) -> "BoundarySignal":
        return BoundarySignal(self.dt, {k: v[::-1].copy() for k, v in self.samples.items()})

    def check_control_shape(self) -> None:
        """Controls must vanish near t = 0 (quiescent start)."""
        scale = self.norm()
        if scale == 0.0:
            return
        for k, v in self.samples.items():
            if abs(v[0]) > 1e-9 * scale or abs(v[1]) > 1e-6 * scale:
                raise ValueError(f"boundary control at {k!r} does not vanish near t=0")


def linear_combination(terms) -> BoundarySignal:
    """Deterministic sum of (coeff, signal) pairs in the given order."""
    terms = list(terms)
    if not terms:
        raise ValueError("empty combination")
    dt = terms[0][1].dt
    keys = sorted({k for _, s in terms for k in s.samples})
    n = terms[0][1].n_samples
    any_complex = any(np.iscomplexobj(s.samples[k]) for _, s in terms for k in s.samples) or any(
        isinstance(c, complex) for c, _ in terms
    )
    out = {k: np.zeros(n, dtype=complex if any_complex else float) for k in keys}
    for c, s in terms:
        for k, v in s.samples.items():
            out[k] = out[k] + c * v
    return BoundarySignal(dt, out)


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


@dataclass
class WaveField:
    """Recorded space-time field; rows are stored time levels over the flat node set.

    Vertex continuity is exact by construction: incident edges share the
    vertex's single storage slot.  When requested, `vel` holds the centered
    time derivative (u^{n+1} - u^{n-1}) / (2 dt) at each stored level, computed
    at the solver's fine step regardless of the recording stride.
    """

    grid: Grid
    data: np.ndarray  # (n_stored, n_nodes)
    steps: np.ndarray  # stored step indices
    vel: np.ndarray | None = None

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.grid.dt

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.data)

    def edge_array(self, eid: str) -> np.ndarray:
        return self.data[:, self.grid.edge_idx[eid]]

    def at_vertex(self, v: str) -> np.ndarray:
        return self.data[:, self.grid.vslot[v]]

    def row(self, t: float) -> np.ndarray:
        n = self.grid.time_index(t)
        pos = np.searchsorted(self.steps, n)
        if pos >= len(self.steps) or self.steps[pos] != n:
            raise ValueError(f"time {t} was not recorded")
        return self.data[pos]

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.data)))

    def time_reversed(self) -> "WaveField":
        vel = None if self.vel is None else -self.vel[::-1].copy()
        return WaveField(
            self.grid, self.data[::-1].copy(), (self.grid.nt - self.steps)[::-1].copy(), vel
        )


# ---------------------------------------------------------------------------
# core stepper
# ---------------------------------------------------------------------------


def _evolve(
    grid: Grid,
    coeffs: Coefficients,
    f: BoundarySignal | None,
    F: np.ndarray | None,
    *,
    cubic: bool,
    record_every: int = 1,
    record_velocity: bool = False,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    neumann_leaves: frozenset[str] = frozenset(),
    guard: float = 1e12,
    trace_leaves: tuple[str, ...] = (),
):
    g = grid.graph
    nt, dt = grid.nt, grid.dt
    dt2 = dt * dt

    boundary: dict[int, np.ndarray] = {}
    is_complex = False
    if f is not None:
        for v in g.gamma:
            arr = f.get(v, nt)
            if arr is not None and v not in neumann_leaves:
                boundary[grid.vslot[v]] = arr
                is_complex = is_complex or np.iscomplexobj(arr)
    if F is not None:
        is_complex = is_complex or np.iscomplexobj(F)
    if init is not None:
        is_complex = is_complex or any(np.iscomplexobj(x) for x in init)
    dtype = complex if is_complex else float

    if cubic and is_complex:
        raise SolverError("the cubic solver is real-valued; complex probing goes through linearization")

    u_prev = np.zeros(grid.n_nodes, dtype=dtype)
    u_cur = np.zeros(grid.n_nodes, dtype=dtype)
    q = coeffs.q
    a = coeffs.a if cubic else None

    edge_meta = [
        (grid.edge_idx[eid], grid.edge_dx[eid] ** -2, grid.edge_idx[eid][1:-1])
        for eid in sorted(g.edges)
    ]
    neumann_meta = []
    for v in neumann_leaves:
        eid, _ = g.incident(v)[0]
        e = g.edges[eid]
        idx = grid.edge_idx[eid]
        inner = idx[1] if e.ends[0] == v else idx[-2]
        neumann_meta.append((grid.vslot[v], inner, grid.edge_dx[eid] ** -2))

    if init is not None:
        u0, v0 = init
        u_cur[:] = u0
        lap = np.zeros(grid.n_nodes, dtype=dtype)
        for idx, inv_dx2, interior in edge_meta:
            ue = u0[idx]
            lap[interior] = (ue[:-2] - 2.0 * ue[1:-1] + ue[2:]) * inv_dx2
        for slot, nbrs, wts, lump in grid.internal:
            lap[slot] = lump * np.sum((u0[nbrs] - u0[slot]) * wts)
        for vslot, inner, inv_dx2 in neumann_meta:
            lap[vslot] = 2.0 * (u0[inner] - u0[vslot]) * inv_dx2
        u_next0 = u0 + dt * v0 + 0.5 * dt2 * (lap - q * u0)
        for slot, arr in boundary.items():
            u_next0[slot] = arr[1]
        for v in g.gamma:
            if grid.vslot[v] not in boundary and v not in neumann_leaves:
                u_next0[grid.vslot[v]] = 0.0
        u_prev, u_cur = u_cur, u_next0
        start_step = 1
    else:
        for slot, arr in boundary.items():
            u_cur[slot] = arr[1] if nt >= 1 else 0.0
        start_step = 1

    n_stored = (nt // record_every + 1) if record_every > 0 else 0
    vel = None
    if record_every > 0:
        data = np.empty((n_stored, grid.n_nodes), dtype=dtype)
        steps = np.empty(n_stored, dtype=int)
        if record_velocity:
            vel = np.zeros((n_stored, grid.n_nodes), dtype=dtype)
            if init is not None:
                vel[0] = init[1]
        if init is not None:
            first = init[0]
        else:
            first = np.zeros(grid.n_nodes, dtype=dtype)
        data[0] = first
        steps[0] = 0
        stored = 1
        if nt >= 1 and 1 % record_every == 0:
            data[stored] = u_cur
            steps[stored] = 1
            stored += 1
    else:
        data = steps = None
        stored = 0

    traces = None
    if trace_leaves:
        traces = {}
        for v in trace_leaves:
            eid, _ = g.incident(v)[0]
            e = g.edges[eid]
            idx = grid.edge_idx[eid]
            if e.ends[0] == v:
                stencil = (idx[0], idx[1], idx[2])
            else:
                stencil = (idx[-1], idx[-2], idx[-3])
            coeff = 0.5 / grid.edge_dx[eid]
            series = np.zeros(nt + 1, dtype=dtype)
            traces[v] = (stencil, coeff, series)
        for v, (stn, c, series) in traces.items():
            for arr, n in ((u_prev, 0), (u_cur, 1)):
                if n <= nt:
                    series[n] = (-3.0 * arr[stn[0]] + 4.0 * arr[stn[1]] - arr[stn[2]]) * c

    guard_ratio = grid.dt / min(grid.edge_dx.values())
    u_next = np.empty(grid.n_nodes, dtype=dtype)

    for n in range(start_step, nt):
        # interior stencil
        np.multiply(u_cur, 2.0, out=u_next)
        u_next -= u_prev
        rhs = -q * u_cur
        if F is not None:
            rhs += F[n]
        if a is not None:
            rhs -= a[n] * (u_cur * u_cur * u_cur)
        lap = np.zeros(grid.n_nodes, dtype=dtype)
        for idx, inv_dx2, interior in edge_meta:
            ue = u_cur[idx]
            lap[interior] = (ue[:-2] - 2.0 * ue[1:-1] + ue[2:]) * inv_dx2
        for slot, nbrs, wts, lump in grid.internal:
            lap[slot] = lump * np.sum((u_cur[nbrs] - u_cur[slot]) * wts)
        for vslot, inner, inv_dx2 in neumann_meta:
            lap[vslot] = 2.0 * (u_cur[inner] - u_cur[vslot]) * inv_dx2
        u_next += dt2 * (lap + rhs)

        # Dirichlet leaves
        for v in g.gamma:
            slot = grid.vslot[v]
            if v in neumann_leaves:
                continue
            arr = boundary.get(slot)
            u_next[slot] = arr[n + 1] if arr is not None else 0.0

        sup = float(np.max(np.abs(u_next)))
        if not math.isfinite(sup) or sup > guard:
            if cubic:
                raise BlowupError(
                    f"nonlinear solution left the small-data regime (sup|u|={sup:.3e} "
                    f"exceeds guard {guard:.3e} at t={(n + 1) * dt:.4f})"
                )
            raise InstabilityError(
                f"instability detected (sup|u|={sup:.3e}); CFL ratio dt/min_dx = {guard_ratio:.4f}"
            )

        if vel is not None and n % record_every == 0:
            # centered derivative of the stored level n, at the fine step
            vel[n // record_every] = (u_next - u_prev) / (2.0 * dt)

        u_prev, u_cur, u_next = u_cur, u_next, u_prev

        if traces is not None:
            for v, (stn, c, series) in traces.items():
                series[n + 1] = (-3.0 * u_cur[stn[0]] + 4.0 * u_cur[stn[1]] - u_cur[stn[2]]) * c
        if record_every > 0 and (n + 1) % record_every == 0:
            data[stored] = u_cur
            steps[stored] = n + 1
            stored += 1

    fieldout = None
    if record_every > 0:
        if vel is not None and nt % record_every == 0 and nt >= 1:
            vel[nt // record_every] = (u_cur - u_prev) / dt  # one-sided at the record's end
        fieldout = WaveField(
            grid, data[:stored], steps[:stored], None if vel is None else vel[:stored]
        )
    traceout = None
    if traces is not None:
        traceout = BoundarySignal(dt, {v: traces[v][2] for v in trace_leaves})
    return fieldout, traceout


# ---------------------------------------------------------------------------
# public solves
# ---------------------------------------------------------------------------


def solve_linear(
    grid: Grid,
    coeffs: Coefficients,
    f: BoundarySignal | None,
    F: np.ndarray | None = None,
    *,
    record_every: int = 1,
    record_velocity: bool = False,
    init=None,
    neumann_leaves: frozenset[str] = frozenset(),
    guard: float = 1e12,
) -> WaveField:
    """Forward linear solve (complex data allowed).  F is an optional interior source
    already sampled as (nt+1, n_nodes)."""
    if f is not None:
        f.check_control_shape()
    field, _ = _evolve(
        grid,
        Coefficients(coeffs.q, None),
        f,
        F,
        cubic=False,
        record_every=record_every,
        record_velocity=record_velocity,
        init=init,
        neumann_leaves=neumann_leaves,
        guard=guard,
    )
    return field


def solve_semilinear(
    grid: Grid,
    coeffs: Coefficients,
    f: BoundarySignal,
    *,
    record_every: int = 1,
    guard: float = 10.0,
) -> WaveField:
    """Forward solve with the explicit cubic term; real data only, guarded blow-up."""
    if not f.is_real():
        raise SolverError("the cubic solver is real-valued; complex probing goes through linearization")
    f.check_control_shape()
    if coeffs.a is None:
        return solve_linear(grid, coeffs, f, record_every=record_every, guard=guard)
    field, _ = _evolve(
        grid, coeffs, f, None, cubic=True, record_every=record_every, guard=guard
    )
    return field


def solve_backward(
    grid: Grid,
    coeffs: Coefficients,
    f0: BoundarySignal,
    *,
    record_every: int = 1,
    guard: float = 1e12,
) -> WaveField:
    """Linear solve with zero conditions at t = T, driven by f0 on the leaves.

    Implemented by evolving the time-reversed data forward and reversing the
    result, which is exact because q does not depend on t.
    """
    rev = f0.reversed()
    field = solve_linear(grid, coeffs, rev, record_every=record_every, guard=guard)
    return field.time_reversed()


def dtn(
    grid: Grid,
    coeffs: Coefficients,
    f: BoundarySignal,
    *,
    guard: float | None = None,
    leaves: tuple[str, ...] | None = None,
) -> BoundarySignal:
    """Boundary-output map: derivative of the solution at each controlled leaf,
    taken along the edge in the direction away from the leaf (3-point one-sided).

    Runs the cubic solver when the coefficients carry `a`, else the linear one.
    No field is stored, only the boundary stencils.
    """
    g = grid.graph
    if leaves is None:
        leaves = g.controlled
    cubic = coeffs.a is not None
    if cubic and not f.is_real():
        raise SolverError("the cubic solver is real-valued; complex probing goes through linearization")
    f.check_control_shape()
    _, trace = _evolve(
        grid,
        coeffs,
        f,
        None,
        cubic=cubic,
        record_every=0,
        guard=guard if guard is not None else (10.0 if cubic else 1e12),
        trace_leaves=tuple(leaves),
    )
    return trace


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------


def energy(field: WaveField, q: np.ndarray, t: float) -> float:
    """Discrete energy (1/2) sum over edges of trapz(|u_t|^2 + |u_x|^2 + q|u|^2).

    u_t uses the centered fine-step derivative recorded with the field when
    available; otherwise centered differences between neighbouring stored
    levels (one-sided at the record's ends).  u_x uses second-order
    differences per edge.
    """
    grid = field.grid
    n = grid.time_index(t)
    pos = int(np.searchsorted(field.steps, n))
    if pos >= len(field.steps) or field.steps[pos] != n:
        raise ValueError(f"time {t} not recorded in the field")
    u = field.data[pos]
    if field.vel is not None:
        ut = field.vel[pos]
    elif 0 < pos < len(field.steps) - 1:
        dt_pair = (field.steps[pos + 1] - field.steps[pos - 1]) * grid.dt
        ut = (field.data[pos + 1] - field.data[pos - 1]) / dt_pair
    elif pos == 0 and len(field.steps) > 1:
        ut = (field.data[1] - field.data[0]) / ((field.steps[1] - field.steps[0]) * grid.dt)
    elif pos == len(field.steps) - 1 and len(field.steps) > 1:
        ut = (field.data[-1] - field.data[-2]) / ((field.steps[-1] - field.steps[-2]) * grid.dt)
    else:
        ut = np.zeros_like(u)

    total = 0.0
    for eid in sorted(grid.graph.edges):
        idx = grid.edge_idx[eid]
        dx = grid.edge_dx[eid]
        ue = u[idx]
        ux = np.gradient(ue, dx, edge_order=2)
        dens = np.abs(ut[idx]) ** 2 + np.abs(ux) ** 2 + q[idx] * np.abs(ue) ** 2
        total += float(np.trapezoid(dens, dx=dx))
    return 0.5 * total


def energy_midpoint(field: WaveField, q: np.ndarray, pos: int) -> float:
    """Shifted-product leapfrog energy between stored levels pos and pos+1.

    E = (1/2)||(u^{n+1} - u^n)/dt||^2 + (1/2) a(u^{n+1}, u^n), with a the
    stiffness form including q.  Exactly conserved (to round-off) by the
    leapfrog scheme for homogeneous boundary data; requires record_every=1.
    """
    grid = field.grid
    if pos + 1 >= len(field.steps) or field.steps[pos + 1] - field.steps[pos] != 1:
        raise ValueError("midpoint energy needs consecutive stored levels")
    ua, ub = field.data[pos], field.data[pos + 1]
    dt = grid.dt
    total = 0.0
    for eid in sorted(grid.graph.edges):
        idx = grid.edge_idx[eid]
        dx = grid.edge_dx[eid]
        va, vb = ua[idx], ub[idx]
        kin = np.abs((vb - va) / dt) ** 2
        dva = np.diff(va) / dx
        dvb = np.diff(vb) / dx
        stiff_grad = float(np.sum(np.real(dva * np.conj(dvb))) * dx)
        stiff_q = float(np.trapezoid(q[idx] * np.real(va * np.conj(vb)), dx=dx))
        total += float(np.trapezoid(kin, dx=dx)) + stiff_grad + stiff_q
    return 0.5 * total


def boundary_derivative(field: WaveField, leaves=None) -> BoundarySignal:
    """One-sided 3-point derivative at leaves, away from the leaf, for every
    stored level of a record_every=1 field."""
    grid = field.grid
    g = grid.graph
    if leaves is None:
        leaves = g.controlled
    if len(field.steps) != grid.nt + 1:
        raise ValueError("boundary_derivative needs a record_every=1 field")
    out = {}
    for v in leaves:
        eid, _ = g.incident(v)[0]
        e = g.edges[eid]
        idx = grid.edge_idx[eid]
        dx = grid.edge_dx[eid]
        if e.ends[0] == v:
            s0, s1, s2 = idx[0], idx[1], idx[2]
        else:
            s0, s1, s2 = idx[-1], idx[-2], idx[-3]
        out[v] = (-3.0 * field.data[:, s0] + 4.0 * field.data[:, s1] - field.data[:, s2]) / (2 * dx)
    return BoundarySignal(grid.dt, out)


def kirchhoff_residual(field: WaveField, t: float) -> dict[str, float]:
    """Sum of one-sided outward derivatives over incident edges, per internal vertex."""
    grid = field.grid
    g = grid.graph
    u = field.row(t)
    out = {}
    for v in g.internal_vertices:
        acc = 0.0
        for eid, _ in g.incident(v):
            e = g.edges[eid]
            idx = grid.edge_idx[eid]
            dx = grid.edge_dx[eid]
            if e.ends[0] == v:
                d = (-3.0 * u[idx[0]] + 4.0 * u[idx[1]] - u[idx[2]]) / (2 * dx)
            else:
                d = (-3.0 * u[idx[-1]] + 4.0 * u[idx[-2]] - u[idx[-3]]) / (2 * dx)
            acc += d
        out[v] = abs(acc)
    return out
