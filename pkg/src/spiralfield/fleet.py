"""Multi-robot batch simulation with Greedy and Hungarian allocation.

Robots are points that follow A* routes on the field graph at constant speed.
A shared collision layer makes robots yield on the tramline corridor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .field_graph import DistanceCache, FieldGraph, snap
from .geometry import FieldLayout

METHODS = ("greedy", "hungarian")


class DeadlockError(RuntimeError):
    def __init__(self, message: str, state: dict):
        super().__init__(message)
        self.state = state


@dataclass
class Robot:
    id: int
    vertex: int  # last vertex reached
    speed: float = 1.0
    r_s: float = 0.5
    route: list[int] = field(default_factory=list)  # vertices still to reach, in order
    edge_progress: float = 0.0  # metres travelled along the edge vertex -> route[0]
    queue: list[int] = field(default_factory=list)  # assigned targets after the current one
    goal: int | None = None
    wait_steps: int = 0

    def __post_init__(self):
        if self.r_s <= 0:
            raise ValueError("safety radius must be positive")
        if self.speed <= 0:
            raise ValueError("speed must be positive")

    @property
    def status(self) -> str:
        if self.wait_steps > 0:
            return "waiting"
        return "moving" if self.goal is not None else "idle"


@dataclass
class BatchTask:
    targets: tuple[int, ...]
    released_at: int = 0

    def __post_init__(self):
        if not self.targets:
            raise ValueError("batch must contain at least one target")


@dataclass
class AllocationResult:
    assignment: dict[int, list[int]]
    method: str
    deferred: list[int] = field(default_factory=list)


@dataclass
class RunMetrics:
    batch_times: list[float]
    counts: list[list[int]]  # Z[b][r]
    path_lengths: list[float]  # metres driven per batch, all robots
    min_tramline_gap: float = math.inf

    @property
    def cv_per_batch(self) -> list[float | None]:
        return [batch_cv(z) for z in self.counts]

    @property
    def avg_batch_time(self) -> float:
        return float(np.mean(self.batch_times)) if self.batch_times else 0.0

    @property
    def mean_cv(self) -> float:
        return mean_cv(self.counts)


def batch_cv(counts: Sequence[int]) -> float | None:
    """Population std over mean of per-robot target counts; None when nothing was served."""
    z = np.asarray(counts, dtype=float)
    mu = z.mean()
    if mu <= 0:
        return None
    return float(z.std() / mu)


def mean_cv(counts: Iterable[Sequence[int]]) -> float:
    vals = [c for c in (batch_cv(z) for z in counts) if c is not None]
    return float(np.mean(vals)) if vals else 0.0


# ---------------------------------------------------------------- allocation


def greedy_assign(
    robots: Sequence[Robot],
    free_targets: set[int],
    graph: FieldGraph,
    cache: DistanceCache | None = None,
    locked_lanes: dict[int, int] | None = None,
) -> dict[int, int]:
    """Next target for every idle robot, claimed in ascending id order.

    A claimed target leaves ``free_targets`` at once and locks its lane for
    the claimant.  Robots with nothing reachable stay idle.
    """
    cache = cache or DistanceCache(graph)
    locked = {} if locked_lanes is None else locked_lanes
    claims: dict[int, int] = {}
    for r in sorted(robots, key=lambda r: r.id):
        if r.goal is not None or not free_targets:
            continue
        best, best_d = None, math.inf
        for t in sorted(free_targets):
            lane = int(graph.lane_of[t])
            if lane >= 0 and locked.get(lane, r.id) != r.id:
                continue
            d = cache.distance(r.vertex, t)
            if d < best_d:
                best, best_d = t, d
        if best is None:
            continue
        claims[r.id] = best
        free_targets.discard(best)
        lane = int(graph.lane_of[best])
        if lane >= 0:
            locked[lane] = r.id
    return claims


def solve_assignment(cost: np.ndarray) -> tuple[list[tuple[int, int]], float]:
    """Optimal partial one-to-one assignment; +inf entries are forbidden.

    The matrix is padded square with a sentinel larger than any finite total,
    so sentinel picks mean "unassigned".
    """
    C = np.asarray(cost, dtype=float)
    n_r, n_c = C.shape
    finite = C[np.isfinite(C)]
    sentinel = (float(np.abs(finite).sum()) + 1.0) * 2.0 if finite.size else 1.0
    size = max(n_r, n_c)
    P = np.full((size, size), sentinel)
    P[:n_r, :n_c] = np.where(np.isfinite(C), C, sentinel)
    rows, cols = linear_sum_assignment(P)
    pairs = [(int(i), int(j)) for i, j in zip(rows, cols) if i < n_r and j < n_c and np.isfinite(C[i, j])]
    return pairs, float(sum(C[i, j] for i, j in pairs))


def hungarian_assign(
    robots: Sequence[Robot],
    batch: BatchTask | Sequence[int],
    graph: FieldGraph,
    cache: DistanceCache | None = None,
    capacity: int | None = None,
) -> AllocationResult:
    """Batch allocation by optimal assignment, then nearest-neighbour sequencing.

    Each robot row is replicated ``capacity`` times (default: batch size) so
    one robot can receive several targets.  Targets no robot can reach are
    deferred.
    """
    cache = cache or DistanceCache(graph)
    targets = list(batch.targets if isinstance(batch, BatchTask) else batch)
    robots = sorted(robots, key=lambda r: r.id)
    cap = len(targets) if capacity is None else int(capacity)
    base = np.array([[cache.distance(r.vertex, t) for t in targets] for r in robots])
    cost = np.repeat(base, cap, axis=0)
    pairs, _ = solve_assignment(cost)
    assignment: dict[int, list[int]] = {r.id: [] for r in robots}
    taken = set()
    for i, j in pairs:
        assignment[robots[i // cap].id].append(targets[j])
        taken.add(j)
    deferred = [t for j, t in enumerate(targets) if j not in taken]
    for r in robots:
        assignment[r.id] = nearest_neighbour_order(r.vertex, assignment[r.id], cache)
    return AllocationResult(assignment, "hungarian", deferred)


def nearest_neighbour_order(start: int, targets: Iterable[int], cache: DistanceCache) -> list[int]:
    left = sorted(set(targets))
    order = []
    here = start
    while left:
        nxt = min(left, key=lambda t: (cache.distance(here, t), t))
        order.append(nxt)
        left.remove(nxt)
        here = nxt
    return order


# ------------------------------------------------------------ collision layer


def collision_layer(
    predicted: dict[int, np.ndarray],
    remaining: dict[int, float],
    on_tramline: dict[int, bool],
    r_s: float,
) -> set[int]:
    """Ids of robots that must wait this step.

    For every pair on or entering the tramline whose predicted centres are
    closer than 2*r_s, the robot with the longer remaining route waits; equal
    lengths make the higher id wait.
    """
    ids = sorted(i for i in predicted if on_tramline.get(i, False))
    waits: set[int] = set()
    for a_i, a in enumerate(ids):
        for b in ids[a_i + 1 :]:
            if float(np.linalg.norm(predicted[a] - predicted[b])) < 2 * r_s:
                ra, rb = remaining[a], remaining[b]
                waits.add(b if rb >= ra else a)
    return waits


# ---------------------------------------------------------------- simulation


@dataclass
class FleetConfig:
    robots: int = 3
    speed: float = 1.0
    r_s: float = 0.5
    W: float = 2.0
    dt: float = 0.1
    method: str = "greedy"
    hungarian_capacity: int | None = None
    max_batch_time: float = 3600.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.robots < 1:
            raise ValueError("need at least one robot")
        if self.speed <= 0 or self.r_s <= 0 or self.W < 0 or self.dt <= 0:
            raise ValueError("speed, r_s, dt must be positive and W non-negative")


def start_vertices(graph: FieldGraph, layout: FieldLayout, m: int) -> list[int]:
    """Robot start vertices spread evenly along the first tramline."""
    if layout.tramlines:
        a, b = (np.asarray(p, dtype=float) for p in (layout.tramlines[0][0], layout.tramlines[0][-1]))
    else:
        a, b = (np.asarray(p, dtype=float) for p in (layout.start, layout.end))
    cand = sorted(graph.tramline_vertices) or list(range(graph.n_vertices))
    pts = graph.points[cand]
    out = []
    for i in range(m):
        p = a + (i + 1) / (m + 1) * (b - a)
        out.append(cand[int(np.argmin(np.hypot(*(pts - p).T)))])
    return out


class FleetSim:
    """Discrete-time simulation of one robot team over a sequence of batches."""

    def __init__(self, graph: FieldGraph, starts: Sequence[int], cfg: FleetConfig, cache: DistanceCache | None = None):
        self.graph = graph
        self.cfg = cfg
        self.cache = cache or DistanceCache(graph)
        self.robots = [Robot(i, int(v), cfg.speed, cfg.r_s) for i, v in enumerate(starts)]
        self.tram = graph.tramline_vertices
        self.wait_len = int(round(cfg.W / cfg.dt))
        self.trace: list[tuple[int, int, float, float, bool]] = []  # step, robot, x, y, on tramline
        self.step_count = 0

    # geometry of a robot along its route
    def position(self, r: Robot) -> np.ndarray:
        p = self.graph.points[r.vertex]
        if not r.route or r.edge_progress <= 0:
            return p
        q = self.graph.points[r.route[0]]
        L = float(np.linalg.norm(q - p))
        return p + (q - p) * min(r.edge_progress / L, 1.0) if L > 0 else p

    def _on_tramline(self, r: Robot, advance: float) -> bool:
        v, route, prog = r.vertex, r.route, r.edge_progress + advance
        k = 0
        while k < len(route):
            L = self._edge_len(v, route[k])
            if prog < L:
                break
            prog -= L
            v = route[k]
            k += 1
        if k >= len(route) or prog <= 0:
            return v in self.tram
        return v in self.tram and route[k] in self.tram

    def _edge_len(self, a: int, b: int) -> float:
        return float(np.linalg.norm(self.graph.points[b] - self.graph.points[a]))

    def _advance_point(self, r: Robot, dist: float) -> np.ndarray:
        v, prog = r.vertex, r.edge_progress + dist
        for w in r.route:
            L = self._edge_len(v, w)
            if prog < L:
                p, q = self.graph.points[v], self.graph.points[w]
                return p + (q - p) * (prog / L)
            prog -= L
            v = w
        return self.graph.points[v]

    def remaining(self, r: Robot) -> float:
        if r.goal is None:
            return 0.0
        rest = -r.edge_progress
        v = r.vertex
        for w in r.route:
            rest += self._edge_len(v, w)
            v = w
        here = r.goal
        for t in r.queue:
            rest += self.cache.distance(here, t)
            here = t
        return rest

    def _set_goal(self, r: Robot, target: int):
        path = self.cache.path(r.vertex, target)
        if path is None:
            raise ValueError(f"target {target} unreachable from vertex {r.vertex}")
        r.goal = target
        r.route = list(path[1:])
        r.edge_progress = 0.0

    def run_batch(self, targets: Sequence[int]) -> tuple[float, list[int], float]:
        """Serve one batch; returns (completion time, per-robot counts, metres driven)."""
        cfg = self.cfg
        pending = set(int(t) for t in targets)
        counts = [0] * len(self.robots)
        driven = 0.0
        locked: dict[int, int] = {}
        for r in self.robots:
            r.goal, r.route, r.queue, r.edge_progress, r.wait_steps = None, [], [], 0.0, 0
        if cfg.method == "hungarian":
            alloc = hungarian_assign(self.robots, list(pending), self.graph, self.cache, cfg.hungarian_capacity)
            if alloc.deferred:
                raise ValueError(f"targets {alloc.deferred} unreachable by every robot")
            for r in self.robots:
                r.queue = list(alloc.assignment[r.id])
        free = set(pending)
        steps = 0
        all_wait = 0
        max_steps = int(math.ceil(cfg.max_batch_time / cfg.dt))
        step_len = cfg.speed * cfg.dt
        while True:
            # hand out work and retire targets reached at zero distance
            changed = True
            while changed:
                changed = False
                if cfg.method == "greedy":
                    for rid, t in greedy_assign(self.robots, free, self.graph, self.cache, locked).items():
                        self._set_goal(self.robots[rid], t)
                for r in self.robots:
                    if r.goal is None and r.queue:
                        self._set_goal(r, r.queue.pop(0))
                    if r.goal is not None and not r.route:
                        pending.discard(r.goal)
                        counts[r.id] += 1
                        lane = int(self.graph.lane_of[r.goal])
                        if locked.get(lane) == r.id:
                            del locked[lane]
                        r.goal = None
                        changed = True
            if not pending:
                break
            if steps >= max_steps:
                raise DeadlockError(
                    f"batch not finished after {cfg.max_batch_time} s", self.state_dump(pending)
                )

            active = [r for r in self.robots if r.goal is not None]
            predicted, remaining, tram = {}, {}, {}
            for r in active:
                moving = r.wait_steps == 0
                predicted[r.id] = self._advance_point(r, step_len if moving else 0.0)
                remaining[r.id] = self.remaining(r)
                tram[r.id] = self._on_tramline(r, 0.0) or self._on_tramline(r, step_len if moving else 0.0)
            for rid in collision_layer(predicted, remaining, tram, cfg.r_s):
                r = self.robots[rid]
                if r.wait_steps == 0:
                    r.wait_steps = self.wait_len
            if active and all(r.wait_steps > 0 for r in active):
                all_wait += 1
                if all_wait * cfg.dt > 10 * cfg.W:
                    raise DeadlockError("all robots waiting for longer than 10 W", self.state_dump(pending))
            else:
                all_wait = 0

            for r in active:
                if r.wait_steps > 0:
                    r.wait_steps -= 1
                    continue
                left = step_len
                while left > 0 and r.route:
                    L = self._edge_len(r.vertex, r.route[0])
                    room = L - r.edge_progress
                    if left < room:
                        r.edge_progress += left
                        driven += left
                        left = 0.0
                    else:
                        driven += room
                        left -= room
                        r.vertex = r.route.pop(0)
                        r.edge_progress = 0.0
            steps += 1
            self.step_count += 1
            for r in self.robots:
                p = self.position(r)
                self.trace.append((self.step_count, r.id, float(p[0]), float(p[1]), self._on_tramline(r, 0.0)))
        return steps * cfg.dt, counts, driven

    def state_dump(self, pending) -> dict:
        return {
            "step": self.step_count,
            "pending": sorted(int(t) for t in pending),
            "robots": [
                {
                    "id": r.id,
                    "vertex": r.vertex,
                    "goal": r.goal,
                    "status": r.status,
                    "wait_steps": r.wait_steps,
                    "route_len": len(r.route),
                    "queue": list(r.queue),
                }
                for r in self.robots
            ],
        }


def min_tramline_gap(trace, n_robots: int) -> float:
    """Smallest centre distance between two robots that share the tramline at one step."""
    best = math.inf
    by_step: dict[int, list[tuple[float, float]]] = {}
    for step, _, x, y, on in trace:
        if on:
            by_step.setdefault(step, []).append((x, y))
    for pts in by_step.values():
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                best = min(best, math.dist(pts[i], pts[j]))
    return best


def sample_batches(pool_vertices: Sequence[int], batch_size: int, n_batches: int, rng: np.random.Generator) -> list[list[int]]:
    """Batches of distinct vertices drawn from a pool without replacement within a batch."""
    uniq = sorted(set(int(v) for v in pool_vertices))
    if batch_size > len(uniq):
        raise ValueError(f"batch size {batch_size} exceeds {len(uniq)} distinct pool targets")
    return [sorted(int(v) for v in rng.choice(uniq, size=batch_size, replace=False)) for _ in range(n_batches)]


def run_batches(
    graph: FieldGraph,
    starts: Sequence[int],
    batches: Sequence[Sequence[int]],
    cfg: FleetConfig,
    cache: DistanceCache | None = None,
) -> RunMetrics:
    sim = FleetSim(graph, starts, cfg, cache)
    times, counts, lengths = [], [], []
    for b in batches:
        t, z, d = sim.run_batch(b)
        times.append(t)
        counts.append(z)
        lengths.append(d)
    return RunMetrics(times, counts, lengths, min_tramline_gap(sim.trace, len(sim.robots)))


@dataclass
class AllocationRun:
    method: str
    m: int
    batch_size: int
    metrics: RunMetrics


def target_pool(layout: FieldLayout, graph: FieldGraph, n: int, seed: int) -> list[int]:
    from .metrics import sample_waypoints
    from .planner import snap_targets

    return snap_targets(graph, sample_waypoints(layout, n, np.random.default_rng([seed, 0])))


def allocation_experiment(
    layout: FieldLayout,
    graph: FieldGraph,
    robot_counts: Sequence[int] = (3,),
    batch_sizes: Sequence[int] = (5, 9, 13, 17, 21),
    batches_per_size: int = 20,
    methods: Sequence[str] = METHODS,
    seed: int = 0,
    base: FleetConfig | None = None,
    pool_size: int = 500,
) -> list[AllocationRun]:
    """Every (method, team size, batch size) cell on identical seeded batches."""
    base = base or FleetConfig()
    cache = DistanceCache(graph)
    pool = target_pool(layout, graph, pool_size, seed)
    runs = []
    for size in batch_sizes:
        batches = sample_batches(pool, size, batches_per_size, np.random.default_rng([seed, 1, size]))
        for m in robot_counts:
            starts = start_vertices(graph, layout, m)
            for method in methods:
                cfg = FleetConfig(**{**vars(base), "robots": m, "method": method})
                runs.append(AllocationRun(method, m, size, run_batches(graph, starts, batches, cfg, cache)))
    return runs
