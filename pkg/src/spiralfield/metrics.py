"""Evaluation helpers and the layout comparison experiments."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controller import MpcConfig, RobotState, profile_time, track_path
from .field_graph import DistanceCache, build_graph, snap
from .geometry import FieldLayout, SpiralSpec, build_spiral, coverage_stats, heading_at, sample_path
from .planner import plan_tour, snap_targets


def _point_polyline_distance(points: np.ndarray, line: np.ndarray, chunk: int = 512) -> np.ndarray:
    if len(line) == 1:
        return np.hypot(*(points - line[0]).T)
    a = line[:-1]
    ab = line[1:] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom > 0, denom, 1.0)
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        p = points[lo : lo + chunk, None, :]
        t = np.clip(np.einsum("pij,ij->pi", p - a, ab) / denom, 0.0, 1.0)
        diff = p - (a + t[..., None] * ab)
        out[lo : lo + chunk] = np.sqrt(np.min(np.einsum("pij,pij->pi", diff, diff), axis=1))
    return out


def ape_rmse(executed, reference) -> float:
    """RMS distance from each executed position to the nearest point of the reference path."""
    ex = np.atleast_2d(np.asarray(executed, dtype=float))[:, :2]
    ref = np.atleast_2d(np.asarray(reference, dtype=float))[:, :2]
    if len(ex) == 0 or len(ref) == 0:
        raise ValueError("ape_rmse needs non-empty inputs")
    d = _point_polyline_distance(ex, ref)
    return float(np.sqrt(np.mean(d * d)))


def linear_fit(xs, ys) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def reduction_pct(baseline: float, value: float) -> float:
    return 100.0 * (baseline - value) / baseline


def row_spacing(layout: FieldLayout) -> float:
    return layout.spec.s if isinstance(layout.spec, SpiralSpec) else layout.spec.row_spacing


def field_box(layout: FieldLayout) -> tuple[float, float, float, float]:
    """Path bounds widened by half a row spacing, the strip each row occupies."""
    xmin, ymin, xmax, ymax = layout.bounds()
    h = row_spacing(layout) / 2
    return xmin - h, ymin - h, xmax + h, ymax + h


def sample_waypoints(layout: FieldLayout, count: int, rng: np.random.Generator) -> np.ndarray:
    """Points uniform by length over the straight crop segments (turns excluded)."""
    segs = layout.straight_segments
    lengths = np.array([s.length for s in segs])
    idx = rng.choice(len(segs), size=count, p=lengths / lengths.sum())
    offs = rng.uniform(0.0, 1.0, size=count)
    return np.array([segs[i].point_at(o * segs[i].length) for i, o in zip(idx, offs)])


@dataclass
class LayoutRun:
    name: str
    distances: list[float]
    times: list[float]

    @property
    def mean_distance(self) -> float:
        return float(np.mean(self.distances))

    @property
    def mean_time(self) -> float:
        return float(np.mean(self.times))


@dataclass
class WaypointExperimentResult:
    runs: dict[str, LayoutRun]
    baseline: str
    candidate: str

    @property
    def distance_reduction(self) -> float:
        return reduction_pct(self.runs[self.baseline].mean_distance, self.runs[self.candidate].mean_distance)

    @property
    def time_reduction(self) -> float:
        return reduction_pct(self.runs[self.baseline].mean_time, self.runs[self.candidate].mean_time)


def run_waypoint_batches(
    layout: FieldLayout,
    waypoints: np.ndarray,
    batch_size: int = 5,
    cfg: MpcConfig | None = None,
    executor: str = "profile",
    spacing: float = 0.5,
) -> LayoutRun:
    """Plan and execute consecutive batches; the robot starts each batch where the last ended.

    ``executor`` is ``"profile"`` (speed-profile kinematics) or ``"mpc"``
    (closed-loop tracking, much slower).
    """
    if executor not in ("profile", "mpc"):
        raise ValueError(f"unknown executor {executor!r}")
    cfg = cfg or MpcConfig()
    xmin, ymin, xmax, ymax = field_box(layout)
    pts = np.asarray(waypoints, dtype=float)
    outside = (pts[:, 0] < xmin) | (pts[:, 0] > xmax) | (pts[:, 1] < ymin) | (pts[:, 1] > ymax)
    if outside.any():
        i = int(np.flatnonzero(outside)[0])
        raise ValueError(f"waypoint {i} at {tuple(pts[i])} lies outside the field")
    graph = build_graph(layout, spacing)
    cache = DistanceCache(graph)
    here = snap(graph, layout.start)
    dists, times = [], []
    for lo in range(0, len(pts), batch_size):
        targets = snap_targets(graph, pts[lo : lo + batch_size])
        tour = plan_tour(graph, here, targets, cache=cache)
        poly = tour.polyline(graph)
        if executor == "profile":
            dists.append(tour.total_length)
            times.append(profile_time(poly, cfg))
        else:
            p0 = poly[0]
            heading = math.atan2(*(poly[min(1, len(poly) - 1)] - p0)[::-1]) if len(poly) > 1 else 0.0
            res = track_path(poly, RobotState(p0[0], p0[1], heading), cfg)
            dists.append(res.distance)
            times.append(res.duration)
        here = tour.order[-1]
    return LayoutRun(layout.kind, dists, times)


def waypoint_experiment(
    layouts: dict[str, FieldLayout],
    waypoints: np.ndarray,
    batch_size: int = 5,
    baseline: str = "linear",
    candidate: str = "spiral",
    **kw,
) -> WaypointExperimentResult:
    runs = {}
    for name, lay in layouts.items():
        run = run_waypoint_batches(lay, waypoints, batch_size, **kw)
        run.name = name
        runs[name] = run
    return WaypointExperimentResult(runs, baseline, candidate)


def coverage_experiment(
    layouts: dict[str, FieldLayout],
    cfg: MpcConfig | None = None,
    sample_spacing: float = 0.05,
    tracks: dict | None = None,
) -> list[dict]:
    """Drive each full coverage path with the controller and tabulate the outcome.

    Pass a dict as ``tracks`` to collect the per-layout tracking results.
    """
    cfg = cfg or MpcConfig()
    rows = []
    for name, lay in layouts.items():
        pts, _ = sample_path(lay, sample_spacing)
        x0 = RobotState(pts[0, 0], pts[0, 1], heading_at(lay, 0.0))
        res = track_path(pts, x0, cfg)
        if tracks is not None:
            tracks[name] = res
        stats = coverage_stats(lay)
        rows.append(
            {
                "layout": name,
                "path_length": lay.total_path_length,
                "distance": res.distance,
                "time": res.duration,
                "ape_rmse": res.ape_rmse,
                "turns_90": stats["turn_count_by_angle"].get(90, 0),
                "turns_180": stats["turn_count_by_angle"].get(180, 0),
            }
        )
    return rows


@dataclass
class ScalingResult:
    loop_counts: list[int]
    mean_distance: list[float]
    mean_time: list[float]
    slope: float
    intercept: float
    r2: float
    time_slope: float
    time_r2: float


def scaling_ablation(
    loop_counts=(7, 9, 13, 17, 21),
    spacing: float = 0.75,
    n_waypoints: int = 500,
    batch_size: int = 5,
    seed: int = 0,
    cfg: MpcConfig | None = None,
) -> ScalingResult:
    """Waypoint protocol on spirals with ``loops`` passes per side, d = (loops - 1) * spacing."""
    dist, tim = [], []
    for loops in loop_counts:
        lay = build_spiral(SpiralSpec(spacing, (loops - 1) * spacing))
        pts = sample_waypoints(lay, n_waypoints, np.random.default_rng(seed))
        run = run_waypoint_batches(lay, pts, batch_size, cfg)
        dist.append(run.mean_distance)
        tim.append(run.mean_time)
    slope, intercept, r2 = linear_fit(loop_counts, dist)
    tslope, _, tr2 = linear_fit(loop_counts, tim)
    return ScalingResult(list(loop_counts), dist, tim, slope, intercept, r2, tslope, tr2)
