"""Command-line front end.

Exit codes: 0 success, 2 usage or configuration error, 3 runtime guard tripped.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .controller import TRAJECTORY_HEADER, MpcConfig, TrackingDiverged
from .field_graph import build_graph, snap
from .fleet import METHODS, DeadlockError, FleetConfig, allocation_experiment, batch_cv
from .geometry import LinearSpec, SpiralSpec, build_linear, build_spiral, layout_from_dict, layout_to_dict
from .metrics import coverage_experiment, sample_waypoints, scaling_ablation, waypoint_experiment
from .output import write_csv, write_json
from .perception import CameraModel, perception_experiment
from .planner import plan_tour, snap_targets

OUT_ENV = "SPIRALFIELD_OUT"
EXPERIMENTS = ("coverage", "waypoints", "allocation", "scaling", "ablation-robots", "perception")

DEFAULT_SCENARIO = {
    "seed": 0,
    "spiral": {"s": 0.75, "d": 11.5, "tramlines_per_axis": 2},
    "linear": {"rows": 16, "row_length": 11.5, "row_spacing": 0.75, "min_turn_radius": 0.5},
    "graph_spacing": 0.5,
    "controller": {},
    "waypoints": {"count": 500, "batch_size": 5},
    "fleet": {
        "robots": 3,
        "speed": 1.0,
        "r_s": 0.5,
        "W": 2.0,
        "method": "both",
        "batch_sizes": [5, 9, 13, 17, 21],
        "batches_per_size": 20,
        "robot_counts": [2, 3, 4],
        "pool_size": 500,
    },
    "scaling": {"loop_counts": [7, 9, 13, 17, 21]},
    "perception": {"sigmas": [0.0, 1.0, 2.0, 4.0, 8.0], "frames": 500, "camera": {}},
}


class UsageError(Exception):
    pass


def _merge(base: dict, over: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise UsageError(f"unknown scenario key {where}{k!r}")
        if isinstance(base[k], dict) and base[k] and isinstance(v, dict):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


@dataclass
class Scenario:
    data: dict
    out_dir: Path

    @classmethod
    def load(cls, path: str | None, out_dir: Path, overrides: dict | None = None) -> "Scenario":
        data = copy.deepcopy(DEFAULT_SCENARIO)
        if path:
            try:
                with open(path, encoding="utf-8") as fh:
                    raw = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise UsageError(f"cannot read scenario {path}: {exc}") from exc
            data = _merge(data, raw)
        for dotted, value in (overrides or {}).items():
            if value is None:
                continue
            node = data
            *head, last = dotted.split(".")
            for k in head:
                node = node[k]
            node[last] = value
        if not isinstance(data.get("seed"), int):
            raise UsageError("scenario seed must be an integer")
        return cls(data, out_dir)

    def spiral(self):
        return build_spiral(SpiralSpec(**self.data["spiral"]))

    def linear(self, turn: str = "u_turn"):
        return build_linear(LinearSpec(turn_style=turn, **self.data["linear"]))

    def mpc(self) -> MpcConfig:
        return MpcConfig.from_dict(self.data["controller"])

    def fleet_config(self) -> FleetConfig:
        f = self.data["fleet"]
        method = "greedy" if f["method"] == "both" else f["method"]
        return FleetConfig(robots=f["robots"], speed=f["speed"], r_s=f["r_s"], W=f["W"], method=method)

    def fleet_methods(self) -> tuple[str, ...]:
        m = self.data["fleet"]["method"]
        if m == "both":
            return METHODS
        if m not in METHODS:
            raise UsageError(f"fleet method must be one of {METHODS} or 'both'")
        return (m,)


# ---------------------------------------------------------------- commands


def cmd_gen(args) -> int:
    if args.kind == "spiral":
        if args.s is None or args.d is None:
            raise UsageError("spiral layouts need --s and --d")
        lay = build_spiral(SpiralSpec(args.s, args.d, tramlines_per_axis=args.tramlines))
    else:
        if args.rows is None or args.row_length is None:
            raise UsageError("linear layouts need --rows and --row-length")
        turn = {"u": "u_turn", "omega": "omega_turn"}[args.turn]
        lay = build_linear(LinearSpec(args.rows, args.row_length, args.s if args.s is not None else 0.75, turn))
    out = Path(args.output) if args.output else _out_dir(args) / f"layout_{args.kind}.json"
    write_json(out, layout_to_dict(lay))
    n_straight = len(lay.straight_segments)
    print(f"{lay.kind} layout: {n_straight} straight segments, path {lay.total_path_length:.2f} m -> {out}")
    return 0


def _load_layout(path: str):
    try:
        with open(path, encoding="utf-8") as fh:
            return layout_from_dict(json.load(fh))
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read layout {path}: {exc}") from exc


def cmd_graph(args) -> int:
    lay = _load_layout(args.layout)
    g = build_graph(lay, args.spacing)
    out = _out_dir(args)
    write_csv(
        out / "graph_vertices.csv",
        ("id", "x", "y", "tramline", "lane"),
        ((v, x, y, v in g.tramline_vertices, int(g.lane_of[v])) for v, (x, y) in enumerate(g.points)),
    )
    write_csv(out / "graph_edges.csv", ("from", "to", "weight"), g.edges())
    print(f"graph: {g.n_vertices} vertices, {g.n_edges()} edges, {len(g.lanes)} lanes -> {out}")
    return 0


def _parse_points(text: str) -> list[tuple[float, float]]:
    try:
        return [tuple(float(c) for c in p.split(",")) for p in text.split(";") if p.strip()]
    except ValueError as exc:
        raise UsageError(f"bad point list {text!r}; expected 'x,y;x,y'") from exc


def cmd_plan(args) -> int:
    lay = _load_layout(args.layout)
    g = build_graph(lay, args.spacing)
    start = snap(g, _parse_points(args.start)[0])
    targets = snap_targets(g, _parse_points(args.targets))
    tour = plan_tour(g, start, targets)
    out = Path(args.output) if args.output else _out_dir(args) / "tour.json"
    write_json(out, tour.to_dict(g))
    print(f"tour over {len(tour.order)} targets: {tour.total_length:.2f} m -> {out}")
    return 0


def exp_coverage(sc: Scenario, args) -> str:
    layouts = {"spiral": sc.spiral(), "linear_u": sc.linear("u_turn"), "linear_omega": sc.linear("omega_turn")}
    tracks: dict = {}
    rows = coverage_experiment(layouts, sc.mpc(), tracks=tracks)
    cols = ("layout", "path_length", "distance", "time", "ape_rmse", "turns_90", "turns_180")
    write_csv(sc.out_dir / "coverage.csv", cols, ([r[c] for c in cols] for r in rows))
    dt = sc.mpc().dt
    for name, res in tracks.items():
        write_csv(sc.out_dir / f"trajectory_{name}.csv", TRAJECTORY_HEADER, res.rows(dt))
    if args.figures:
        from .plotting import plot_layouts

        plot_layouts(layouts, sc.out_dir / "coverage.png", tracks)
    by = {r["layout"]: r for r in rows}
    gap = 100 * (by["spiral"]["distance"] - by["linear_u"]["distance"]) / by["linear_u"]["distance"]
    return (
        f"coverage: spiral {by['spiral']['distance']:.1f} m, linear U {by['linear_u']['distance']:.1f} m, "
        f"linear omega {by['linear_omega']['distance']:.1f} m (spiral vs U {gap:+.1f}%)"
    )


def exp_waypoints(sc: Scenario, args) -> str:
    spiral, linear = sc.spiral(), sc.linear("u_turn")
    wp = sc.data["waypoints"]
    pts = sample_waypoints(spiral, wp["count"], np.random.default_rng(sc.data["seed"]))
    res = waypoint_experiment({"spiral": spiral, "linear": linear}, pts, wp["batch_size"], cfg=sc.mpc(), spacing=sc.data["graph_spacing"])
    rows = []
    for name, run in res.runs.items():
        for b, (d, t) in enumerate(zip(run.distances, run.times)):
            rows.append((name, b, d, t))
    write_csv(sc.out_dir / "waypoints_batches.csv", ("layout", "batch_id", "distance", "time"), rows)
    lin, spi = res.runs["linear"], res.runs["spiral"]
    write_csv(
        sc.out_dir / "waypoints_summary.csv",
        (
            "linear_mean_distance",
            "spiral_mean_distance",
            "distance_reduction_pct",
            "linear_mean_time",
            "spiral_mean_time",
            "time_reduction_pct",
        ),
        [(lin.mean_distance, spi.mean_distance, res.distance_reduction, lin.mean_time, spi.mean_time, res.time_reduction)],
    )
    if args.figures:
        from .plotting import plot_waypoint_boxplots

        plot_waypoint_boxplots(
            {n: r.distances for n, r in res.runs.items()},
            {n: r.times for n, r in res.runs.items()},
            sc.out_dir / "waypoints.png",
        )
    return (
        f"waypoints: linear {lin.mean_distance:.1f} m, spiral {spi.mean_distance:.1f} m, "
        f"distance -{res.distance_reduction:.1f}%, time -{res.time_reduction:.1f}%"
    )


def _allocation(sc: Scenario, args, robot_counts, methods, stem: str) -> str:
    f = sc.data["fleet"]
    lay = sc.spiral()
    g = build_graph(lay, sc.data["graph_spacing"])
    runs = allocation_experiment(
        lay,
        g,
        robot_counts=robot_counts,
        batch_sizes=f["batch_sizes"],
        batches_per_size=f["batches_per_size"],
        methods=methods,
        seed=sc.data["seed"],
        base=sc.fleet_config(),
        pool_size=f["pool_size"],
    )
    per_run, summary = [], []
    for run in runs:
        mt = run.metrics
        for b, (bt, z) in enumerate(zip(mt.batch_times, mt.counts)):
            per_run.append((b, run.method, run.m, run.batch_size, bt, ";".join(map(str, z)), batch_cv(z)))
        summary.append(
            {"method": run.method, "m": run.m, "batch_size": run.batch_size, "avg_batch_time": mt.avg_batch_time, "mean_cv": mt.mean_cv}
        )
    write_csv(sc.out_dir / f"{stem}_runs.csv", ("batch_id", "method", "m", "batch_size", "BT_b", "Z", "CV_b"), per_run)
    cols = ("method", "m", "batch_size", "avg_batch_time", "mean_cv")
    write_csv(sc.out_dir / f"{stem}_summary.csv", cols, ([r[c] for c in cols] for r in summary))
    if args.figures:
        from .plotting import plot_allocation

        plot_allocation(summary, sc.out_dir / f"{stem}.png")
    parts = []
    for r in summary:
        parts.append(f"{r['method'][0].upper()}{r['m']}@{r['batch_size']}={r['avg_batch_time']:.1f}s")
    return f"{stem}: " + " ".join(parts)


def exp_allocation(sc: Scenario, args) -> str:
    return _allocation(sc, args, [sc.data["fleet"]["robots"]], sc.fleet_methods(), "allocation")


def exp_ablation_robots(sc: Scenario, args) -> str:
    return _allocation(sc, args, sc.data["fleet"]["robot_counts"], ("greedy",), "ablation_robots")


def exp_scaling(sc: Scenario, args) -> str:
    loops = sc.data["scaling"]["loop_counts"]
    wp = sc.data["waypoints"]
    res = scaling_ablation(loops, sc.data["spiral"]["s"], wp["count"], wp["batch_size"], sc.data["seed"], sc.mpc())
    write_csv(
        sc.out_dir / "scaling.csv",
        ("loops", "mean_distance", "mean_time"),
        zip(res.loop_counts, res.mean_distance, res.mean_time),
    )
    write_csv(
        sc.out_dir / "scaling_fit.csv",
        ("metric", "slope", "intercept", "r2"),
        [("distance", res.slope, res.intercept, res.r2), ("time", res.time_slope, None, res.time_r2)],
    )
    if args.figures:
        from .plotting import plot_scaling

        plot_scaling(res.loop_counts, res.mean_distance, res.mean_time, (res.slope, res.intercept, res.r2), sc.out_dir / "scaling.png")
    return f"scaling: slope {res.slope:.3f} m/loop, R2 {res.r2:.4f}"


def exp_perception(sc: Scenario, args) -> str:
    p = sc.data["perception"]
    try:
        cam = CameraModel.from_dict(p["camera"])
    except TypeError as exc:
        raise UsageError(f"bad camera config: {exc}") from exc
    res = perception_experiment(sc.spiral(), cam, p["sigmas"], p["frames"], sc.data["seed"])
    frames, summary = [], []
    for sigma in res.sigmas:
        run_eps = res.running_epsilon(sigma)
        for i, ((dth, dlx), (st, sp), eps) in enumerate(zip(res.errors[sigma], res.scenes[sigma], run_eps)):
            frames.append((sigma, i, dth, dlx, st, sp, eps))
        e = res.errors[sigma]
        summary.append((sigma, res.epsilon(sigma), float(e[:, 0].mean()), float(e[:, 1].mean()), res.scene_accuracy(sigma)))
    write_csv(
        sc.out_dir / "perception_frames.csv",
        ("sigma", "frame_id", "dtheta", "dLx", "scene_true", "scene_pred", "epsilon_running"),
        frames,
    )
    write_csv(
        sc.out_dir / "perception_summary.csv",
        ("sigma", "epsilon", "mean_dtheta", "mean_dLx", "scene_accuracy"),
        summary,
    )
    if args.figures:
        from .plotting import plot_epsilon

        plot_epsilon(res.sigmas, [r[1] for r in summary], sc.out_dir / "perception.png")
    return "perception: " + ", ".join(f"sigma {r[0]:g} eps {r[1]:.4f}" for r in summary)


RUNNERS = {
    "coverage": exp_coverage,
    "waypoints": exp_waypoints,
    "allocation": exp_allocation,
    "scaling": exp_scaling,
    "ablation-robots": exp_ablation_robots,
    "perception": exp_perception,
}


def cmd_experiment(args) -> int:
    if args.name not in RUNNERS:
        raise UsageError(f"unknown experiment {args.name!r}; choose from {', '.join(EXPERIMENTS)}")
    out = _out_dir(args)
    overrides = {"seed": args.seed, "fleet.robots": args.m, "fleet.batches_per_size": args.batches_per_size}
    sc = Scenario.load(args.scenario, out, overrides)
    try:
        line = RUNNERS[args.name](sc, args)
    except (DeadlockError, TrackingDiverged) as exc:
        diag = out / f"{args.name}_diagnostics.json"
        write_json(diag, {"error": str(exc), "state": getattr(exc, "state", None), "scenario": sc.data})
        print(f"error: {exc}; diagnostics in {diag}", file=sys.stderr)
        return 3
    print(line)
    return 0


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or "results")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spiralfield", description="Square-spiral field layouts, planning and experiments.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./results)")

    g = sub.add_parser("gen", parents=[common], help="generate a layout file")
    g.add_argument("--kind", choices=("spiral", "linear"), required=True)
    g.add_argument("--s", type=float, help="row spacing in metres")
    g.add_argument("--d", type=float, help="spiral side length in metres")
    g.add_argument("--rows", type=int)
    g.add_argument("--row-length", type=float)
    g.add_argument("--turn", choices=("u", "omega"), default="u")
    g.add_argument("--tramlines", type=int, default=2, help="tramlines per axis (spiral)")
    g.add_argument("-o", "--output", help="layout file path")
    g.set_defaults(func=cmd_gen)

    gr = sub.add_parser("graph", parents=[common], help="export the waypoint graph of a layout")
    gr.add_argument("layout")
    gr.add_argument("--spacing", type=float, default=0.5)
    gr.set_defaults(func=cmd_graph)

    pl = sub.add_parser("plan", parents=[common], help="order targets into a rule-respecting tour")
    pl.add_argument("layout")
    pl.add_argument("--start", required=True, help="x,y")
    pl.add_argument("--targets", required=True, help="x,y;x,y;...")
    pl.add_argument("--spacing", type=float, default=0.5)
    pl.add_argument("-o", "--output")
    pl.set_defaults(func=cmd_plan)

    e = sub.add_parser("experiment", parents=[common], help="run a named experiment")
    e.add_argument("name", help=", ".join(EXPERIMENTS))
    e.add_argument("--scenario", help="scenario JSON file; flags override it")
    e.add_argument("--seed", type=int)
    e.add_argument("--m", type=int, help="robot count for allocation")
    e.add_argument("--batches-per-size", type=int)
    e.add_argument("--figures", action="store_true", help="also render PNG figures")
    e.set_defaults(func=cmd_experiment)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
