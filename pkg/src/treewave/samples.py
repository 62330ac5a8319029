"""Recovered-sample containers and coverage masks.

Recovered values live on per-edge space-time bands (trapezoids whose upper
and lower boundaries are characteristic lines).  Coverage tracks the union of
bands on each edge plus the scattered samples inside them; values inside a
band are linearly interpolated from the samples, with a nearest-neighbour
fallback near the band rim.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .graph import Band


class CoverageError(ValueError):
    pass


@dataclass
class RecoveredSample:
    edge: str
    x: float
    t: float
    value: float
    err: float
    plan_id: str


class Coverage:
    """Union of per-edge bands plus the samples recovered inside them.

    With a graph attached, a continuity halo extends each covered vertex onto
    the first `halo` of every incident edge: the coefficient is continuous at
    vertices, so values there are read across the vertex from the covered
    side.  This realizes the recover-by-continuity step at band seams.
    """

    def __init__(self, graph=None, halo: float = 0.0):
        self.bands: dict[str, list[Band]] = {}
        self._pts: dict[str, list[tuple[float, float, float]]] = {}
        self._interp: dict[str, tuple] = {}
        self.graph = graph
        self.halo = halo

    def attach(self, graph, halo: float) -> None:
        self.graph = graph
        self.halo = max(self.halo, halo)

    def add_band(self, band: Band) -> None:
        self.bands.setdefault(band.edge, []).append(band)

    def add_sample(self, s: RecoveredSample) -> None:
        self._pts.setdefault(s.edge, []).append((s.x, s.t, s.value))
        self._interp.pop(s.edge, None)

    def has_band(self, edge: str) -> bool:
        return bool(self.bands.get(edge))

    def _plain_covers(self, edge: str, x: float, t: float, tol: float = 1e-9) -> bool:
        return any(b.contains(x, t, tol=tol) for b in self.bands.get(edge, ()))

    def _halo_anchor(self, edge: str, x: float, t: float):
        """(other_edge, chart position of the shared vertex) whose band covers
        the vertex at time t, when (edge, x) sits within the halo of it."""
        if self.graph is None or self.halo <= 0.0 or edge not in self.graph.edges:
            return None
        e = self.graph.edges[edge]
        for v, xv in ((e.ends[0], 0.0), (e.ends[1], e.length)):
            if abs(x - xv) > self.halo:
                continue
            for eid2, _w in self.graph.incident(v):
                if eid2 == edge:
                    continue
                e2 = self.graph.edges[eid2]
                x2 = 0.0 if e2.ends[0] == v else e2.length
                if self._plain_covers(eid2, x2, t, tol=1e-9) and self._pts.get(eid2):
                    return eid2, x2
        return None

    def covers(self, edge: str, x: float, t: float, tol: float = 1e-9) -> bool:
        if self._plain_covers(edge, x, t, tol=tol):
            return True
        return self._halo_anchor(edge, x, t) is not None

    def covers_mask(self, edge: str, x: np.ndarray, t: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        out = np.zeros(np.broadcast(x, t).shape, dtype=bool)
        for b in self.bands.get(edge, ()):
            inside = (t >= b.t_lo(x) - tol) & (t <= b.t_hi(x) + tol)
            inside &= (x >= b.x_lo - tol) & (x <= b.x_hi + tol)
            out |= inside
        if self.graph is not None and self.halo > 0.0 and not np.all(out):
            xb = np.broadcast_to(x, out.shape)
            tb = np.broadcast_to(t, out.shape)
            for idx in np.argwhere(~out):
                i = tuple(idx)
                if self._halo_anchor(edge, float(xb[i]), float(tb[i])) is not None:
                    out[i] = True
        return out

    def _interpolator(self, edge: str):
        cached = self._interp.get(edge)
        if cached is not None:
            return cached
        pts = self._pts.get(edge)
        if not pts:
            raise CoverageError(f"no recovered samples on edge {edge!r}")
        arr = np.asarray(pts, dtype=float)
        xy, vals = arr[:, :2], arr[:, 2]
        lin = None
        if len(pts) >= 4:
            try:
                from scipy.interpolate import LinearNDInterpolator

                lin = LinearNDInterpolator(xy, vals)
            except Exception:
                lin = None
        from scipy.interpolate import NearestNDInterpolator

        near = NearestNDInterpolator(xy, vals)
        self._interp[edge] = (lin, near, xy)
        return self._interp[edge]

    def values(self, edge: str, x: np.ndarray, t: np.ndarray, max_gap: float | None = None) -> np.ndarray:
        """Interpolated recovered values at covered points.

        Raises CoverageError (listing offending points) when a queried point is
        outside every band of the edge, or when `max_gap` is set and the point
        is farther than that from every sample.
        """
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast(x, t).shape
        xb = np.broadcast_to(x, shape).astype(float).ravel()
        tb = np.broadcast_to(t, shape).astype(float).ravel()
        plain = np.zeros(len(xb), dtype=bool)
        for b in self.bands.get(edge, ()):
            inside = (tb >= b.t_lo(xb) - 1e-6) & (tb <= b.t_hi(xb) + 1e-6)
            inside &= (xb >= b.x_lo - 1e-6) & (xb <= b.x_hi + 1e-6)
            plain |= inside
        vals = np.empty(len(xb))
        bad = []
        for i in np.nonzero(~plain)[0]:
            anchor = self._halo_anchor(edge, float(xb[i]), float(tb[i]))
            if anchor is None:
                bad.append(i)
            else:
                eid2, x2 = anchor
                vals[i] = float(self._interp_values(eid2, np.array([x2]), np.array([tb[i]]))[0])
        if bad:
            listing = ", ".join(f"(x={xb[i]:.4f}, t={tb[i]:.4f})" for i in bad[:5])
            raise CoverageError(
                f"{len(bad)} point(s) on edge {edge!r} lie outside the recovered "
                f"region; first offenders: {listing}"
            )
        if plain.any():
            vals[plain] = self._interp_values(edge, xb[plain], tb[plain], max_gap=max_gap)
        return vals.reshape(shape)

    def _interp_values(self, edge: str, xq: np.ndarray, tq: np.ndarray, max_gap: float | None = None) -> np.ndarray:
        lin, near, xy = self._interpolator(edge)
        q = np.stack([xq, tq], axis=1)
        if max_gap is not None:
            d2 = ((q[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2).min(axis=1)
            if np.any(d2 > max_gap**2):
                k = int(np.argmax(d2))
                raise CoverageError(
                    f"recovered samples too sparse near (x={q[k,0]:.4f}, t={q[k,1]:.4f}) on {edge!r}"
                )
        if lin is not None:
            vals = lin(q)
            hole = np.isnan(vals)
            if hole.any():
                vals[hole] = near(q[hole])
        else:
            vals = near(q)
        return np.asarray(vals, dtype=float)


@dataclass
class RecoveredSamples:
    """Point cloud of recovered coefficient values plus the coverage mask."""

    samples: list[RecoveredSample] = field(default_factory=list)
    coverage: Coverage = field(default_factory=Coverage)

    def add(self, s: RecoveredSample, *, check_band: bool = True) -> None:
        if check_band and not self.coverage.covers(s.edge, s.x, s.t, tol=1e-6):
            raise CoverageError(
                f"sample at (x={s.x:.4f}, t={s.t:.4f}) on {s.edge!r} lies outside its "
                "declared recovery band"
            )
        self.samples.append(s)
        self.coverage.add_sample(s)

    def extend(self, other: "RecoveredSamples") -> None:
        for b in (band for bands in other.coverage.bands.values() for band in bands):
            self.coverage.add_band(b)
        for s in other.samples:
            self.samples.append(s)
            self.coverage.add_sample(s)

    def edges(self) -> list[str]:
        return sorted({s.edge for s in self.samples})

    def errors_against(self, truth) -> dict[str, dict[str, float]]:
        """Per-edge error stats of recovered values against truth(edge, x, t)."""
        out = {}
        for eid in self.edges():
            rel, absd = [], []
            for s in self.samples:
                if s.edge != eid:
                    continue
                tv = float(truth(s.edge, s.x, s.t))
                absd.append(abs(s.value - tv))
                rel.append(abs(s.value - tv) / max(abs(tv), 1e-12))
            out[eid] = {
                "n": len(rel),
                "median_rel": float(np.median(rel)),
                "max_abs": float(np.max(absd)),
                "median_abs": float(np.median(absd)),
            }
        return out

    def median_rel_error(self, truth) -> float:
        rel = [
            abs(s.value - float(truth(s.edge, s.x, s.t))) / max(abs(float(truth(s.edge, s.x, s.t))), 1e-12)
            for s in self.samples
        ]
        return float(np.median(rel))

    def to_csv(self, path, domain_bands: dict[str, Band] | None = None) -> None:
        """Write samples as CSV; when the guaranteed-domain bands are given, an
        extra column flags samples inside that (smaller) region."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            header = ["edge", "x", "t", "a_hat", "err", "plan_id"]
            if domain_bands is not None:
                header.append("in_guaranteed_domain")
            w.writerow(header)
            for s in sorted(self.samples, key=lambda r: (r.edge, r.t, r.x)):
                row = [s.edge, repr(s.x), repr(s.t), repr(s.value), repr(s.err), s.plan_id]
                if domain_bands is not None:
                    band = domain_bands.get(s.edge)
                    row.append(int(band is not None and band.contains(s.x, s.t, tol=1e-9)))
                w.writerow(row)
