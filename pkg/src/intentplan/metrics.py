"""Evaluation metrics: grid coverage, SL offset area, travel time and PET."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import shapely
from shapely.geometry import LineString, Polygon

from .constraints import VehicleFootprint, box_corners


class MetricError(ValueError):
    pass


@dataclass(frozen=True)
class Coverage:
    planned_cells: int
    real_cells: int
    ratio: float

    def to_dict(self) -> dict:
        return {"planned_cells": self.planned_cells, "real_cells": self.real_cells,
                "ratio": self.ratio}


def coverage_region(real: Sequence[np.ndarray], pad: float = 2.0) -> tuple[float, float, float, float]:
    pts = np.vstack([np.asarray(r, float) for r in real])
    return (float(pts[:, 0].min() - pad), float(pts[:, 1].min() - pad),
            float(pts[:, 0].max() + pad), float(pts[:, 1].max() + pad))


def trace_points(xy: np.ndarray) -> np.ndarray:
    """Vertices of a polyline in grid units plus one point per cell it crosses.

    Each segment is split where it meets a grid line; the midpoint of every
    piece lies in exactly the cell that piece passes through.
    """
    g = np.asarray(xy, float)
    if len(g) < 2:
        return g
    p0, d = g[:-1], np.diff(g, axis=0)
    seg, par = [], []
    for ax in (0, 1):
        a, b = p0[:, ax], p0[:, ax] + d[:, ax]
        lo = np.floor(np.minimum(a, b)) + 1
        hi = np.ceil(np.maximum(a, b)) - 1
        n = np.maximum(hi - lo + 1, 0).astype(np.int64)
        idx = np.repeat(np.arange(len(d)), n)
        k = lo[idx] + (np.arange(n.sum()) - np.repeat(np.cumsum(n) - n, n))
        seg.append(idx)
        par.append((k - a[idx]) / d[idx, ax])
    seg = np.concatenate(seg + [np.arange(len(d)), np.arange(len(d))])
    par = np.concatenate(par + [np.zeros(len(d)), np.ones(len(d))])
    order = np.lexsort((par, seg))
    seg, par = seg[order], par[order]
    same = seg[1:] == seg[:-1]
    mid = 0.5 * (par[1:] + par[:-1])[same]
    s = seg[1:][same]
    return np.vstack([g, p0[s] + mid[:, None] * d[s]])


def covered_cells(trajs: Sequence[np.ndarray], cell: float, region, trace: bool = True) -> set:
    """Grid cells touched by the trajectories.

    With ``trace`` every cell a polyline passes through counts; otherwise
    only cells holding a sample point.
    """
    x0, y0, x1, y1 = region
    nx, ny = (x1 - x0) / cell, (y1 - y0) / cell
    cells = set()
    for xy in trajs:
        g = (np.asarray(xy, float) - [x0, y0]) / cell
        if trace:
            g = trace_points(g)
        inside = (g[:, 0] >= 0) & (g[:, 0] <= nx) & (g[:, 1] >= 0) & (g[:, 1] <= ny)
        cells.update(map(tuple, np.floor(g[inside]).astype(np.int64)))
    return cells


def metric_coverage(planned: Sequence[np.ndarray], real: Sequence[np.ndarray], cell: float = 0.5,
                    pad: float = 2.0, trace: bool = True) -> Coverage:
    """Cells of a ``cell``-sized grid touched by each set, and their ratio.

    The grid spans the bounding box of the real trajectories padded by
    ``pad``. Trajectories are read as polylines so fast ones do not skip
    cells between samples.
    """
    if cell <= 0:
        raise MetricError("cell must be positive")
    if not planned or not real:
        raise MetricError("empty trajectory set")
    region = coverage_region(real, pad)
    p = covered_cells(planned, cell, region, trace)
    r = covered_cells(real, cell, region, trace)
    if not r:
        raise MetricError("real set covers no cells")
    return Coverage(len(p), len(r), len(p) / len(r))


def metric_sl_offset(s, l, total_length: float) -> float:
    """``integral |l| d(s / total_length)`` by the trapezoidal rule."""
    s = np.asarray(s, float)
    l = np.asarray(l, float)
    if len(s) < 2:
        return 0.0
    return float(np.trapezoid(np.abs(l), s / total_length))


def _inside(polygon: Polygon, x, y) -> np.ndarray:
    return shapely.contains_xy(polygon, np.asarray(x, float), np.asarray(y, float)) | \
        shapely.intersects_xy(polygon.exterior, np.asarray(x, float), np.asarray(y, float))


def _crossing_time(polygon: Polygon, t0, p0, t1, p1) -> float:
    seg = LineString([p0, p1])
    hit = seg.intersection(polygon.exterior)
    if hit.is_empty:
        return 0.5 * (t0 + t1)
    pts = [np.asarray(g.coords[0]) for g in getattr(hit, "geoms", [hit])]
    d = min(np.hypot(*(q - np.asarray(p0))) for q in pts)
    L = np.hypot(*(np.asarray(p1) - np.asarray(p0)))
    return float(t0 + (t1 - t0) * (d / L if L > 0 else 0.0))


def metric_travel_time(t, x, y, polygon) -> float:
    """Time between entering and leaving ``polygon``.

    Crossing instants are interpolated linearly between samples.

    Raises:
        MetricError: if the trajectory never enters or never leaves.
    """
    polygon = polygon if isinstance(polygon, Polygon) else Polygon(polygon)
    t, x, y = (np.asarray(v, float) for v in (t, x, y))
    inside = _inside(polygon, x, y)
    if not inside.any() or inside[0]:
        raise MetricError("trajectory never enters the polygon")
    if inside[-1]:
        raise MetricError("trajectory never leaves the polygon")
    i = int(np.argmax(inside))
    j = len(inside) - 1 - int(np.argmax(inside[::-1]))
    t_in = _crossing_time(polygon, t[i - 1], (x[i - 1], y[i - 1]), t[i], (x[i], y[i]))
    t_out = _crossing_time(polygon, t[j], (x[j], y[j]), t[j + 1], (x[j + 1], y[j + 1]))
    return t_out - t_in


def conflict_zone(left_xy: np.ndarray, straight_xy: np.ndarray, left_width: float,
                  straight_width: float) -> Polygon:
    """Overlap of the two path corridors dilated by half the vehicle widths."""
    a = LineString(left_xy).buffer(0.5 * left_width, cap_style="flat")
    b = LineString(straight_xy).buffer(0.5 * straight_width, cap_style="flat")
    zone = a.intersection(b)
    if zone.is_empty:
        raise MetricError("paths do not overlap")
    if zone.geom_type != "Polygon":
        zone = max(zone.geoms, key=lambda g: g.area)
    return zone


def _overlaps(zone: Polygon, x, y, h, fp: VehicleFootprint) -> np.ndarray:
    corners = box_corners(x, y, h, fp.length, fp.width)
    polys = shapely.polygons(corners)
    return shapely.intersects(polys, zone)


def occupancy_interval(t, x, y, heading, zone: Polygon, footprint: VehicleFootprint,
                       tol: float = 1e-4) -> tuple[float, float]:
    """First and last instants the vehicle footprint overlaps ``zone``.

    Sample-level transitions are refined by bisection on the linearly
    interpolated pose.
    """
    t, x, y = (np.asarray(v, float) for v in (t, x, y))
    h = np.unwrap(np.asarray(heading, float))
    occ = _overlaps(zone, x, y, h, footprint)
    if not occ.any():
        raise MetricError("vehicle never occupies the conflict zone")

    def at(tq):
        return bool(_overlaps(zone, np.interp(tq, t, x), np.interp(tq, t, y),
                              np.interp(tq, t, h), footprint))

    def refine(lo, hi, target):
        # at(lo) != target, at(hi) == target
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if at(mid) == target:
                hi = mid
            else:
                lo = mid
        return hi

    i = int(np.argmax(occ))
    j = len(occ) - 1 - int(np.argmax(occ[::-1]))
    t_in = t[0] if i == 0 else refine(t[i - 1], t[i], True)
    if j == len(occ) - 1:
        t_out = t[-1]
    else:
        # walk backwards from the first free sample after j
        lo, hi = t[j + 1], t[j]
        while lo - hi > tol:
            mid = 0.5 * (lo + hi)
            if at(mid):
                hi = mid
            else:
                lo = mid
        t_out = hi
    return float(t_in), float(t_out)


def pet_from_intervals(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Entry of the later vehicle minus exit of the earlier one."""
    # ties on exit fall back to entry so the result is order-free
    first, second = sorted((tuple(a), tuple(b)), key=lambda iv: (iv[1], iv[0]))
    return float(second[0] - first[1])


def metric_pet(left, straight, zone: Polygon, left_fp: VehicleFootprint,
               straight_fp: VehicleFootprint) -> float:
    """Post-encroachment time between two vehicles in ``zone``.

    ``left``/``straight`` expose ``abs_t`` or ``t`` plus ``x``, ``y``,
    ``heading``.
    """
    def interval(v, fp):
        t = v.abs_t if hasattr(v, "abs_t") else v.t
        return occupancy_interval(t, v.x, v.y, v.heading, zone, fp)

    return pet_from_intervals(interval(left, left_fp), interval(straight, straight_fp))


def summary(values: Sequence[float]) -> dict:
    arr = np.asarray([v for v in values if v is not None and np.isfinite(v)], float)
    if arr.size == 0:
        return {"n": 0, "mean": None, "std": None}
    return {"n": int(arr.size), "mean": float(arr.mean()), "std": float(arr.std())}
