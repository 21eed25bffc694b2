"""Rule-constrained waypoint graph over a field layout.

Lanes are one-way chains of vertices; every change of lane has to go
through a transfer vertex.  On the spiral the transfer corridor is the
tramline network; on the linear field it is the pair of headlands, and
each row is represented by two opposite one-way lanes over the same
physical sites (a robot cannot turn around between crop rows).
"""

from __future__ import annotations

import heapq
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import FieldLayout, LinearSpec, crossings, to_2d

DEFAULT_SPACING = 0.5


@dataclass(frozen=True)
class Lane:
    id: int
    vertex_ids: tuple[int, ...]
    length: float  # sum of edge weights along the lane

    @property
    def entry(self) -> int:
        return self.vertex_ids[0]

    @property
    def exit(self) -> int:
        return self.vertex_ids[-1]


class PathResult(NamedTuple):
    path: list[int]
    length: float


class FieldGraph:
    """Directed graph with Euclidean edge weights.

    ``site[v]`` identifies the physical location of vertex ``v``; vertices
    sharing a site are interchangeable as visit targets.
    """

    def __init__(self, points, edges, lanes, transfer, kind, site=None):
        self.points = np.asarray(points, dtype=float)
        n = len(self.points)
        adj: list[dict[int, float]] = [dict() for _ in range(n)]
        for a, b in edges:
            if a == b:
                continue
            adj[a][b] = float(math.dist(self.points[a], self.points[b]))
        self.adjacency: list[tuple[tuple[int, float], ...]] = [tuple(sorted(d.items())) for d in adj]
        self.lanes: tuple[Lane, ...] = tuple(lanes)
        self.tramline_vertices: frozenset[int] = frozenset(transfer)
        self.kind = kind
        lane_of = np.full(n, -1, dtype=int)
        for lane in self.lanes:
            for v in lane.vertex_ids:
                if v not in self.tramline_vertices:
                    lane_of[v] = lane.id
        self.lane_of = lane_of
        self.site = np.arange(n) if site is None else np.asarray(site, dtype=int)
        self._aliases: dict[int, list[int]] = {}
        for v, st in enumerate(self.site):
            self._aliases.setdefault(int(st), []).append(v)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def n_vertices(self) -> int:
        return len(self.points)

    def edges(self):
        for a, nbrs in enumerate(self.adjacency):
            for b, w in nbrs:
                yield a, b, w

    def n_edges(self) -> int:
        return sum(len(n) for n in self.adjacency)

    def aliases(self, v: int) -> list[int]:
        """All vertices at the same physical site as ``v`` (sorted, includes ``v``)."""
        return self._aliases[int(self.site[v])]

    def is_transfer(self, v: int) -> bool:
        return v in self.tramline_vertices

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "vertices": [
                {
                    "id": v,
                    "x": float(p[0]),
                    "y": float(p[1]),
                    "tramline": v in self.tramline_vertices,
                    "lane": int(self.lane_of[v]),
                    "site": int(self.site[v]),
                }
                for v, p in enumerate(self.points)
            ],
            "edges": [{"from": a, "to": b, "weight": w} for a, b, w in self.edges()],
            "lanes": [{"id": ln.id, "vertex_ids": list(ln.vertex_ids), "length": ln.length} for ln in self.lanes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FieldGraph":
        verts = sorted(data["vertices"], key=lambda r: r["id"])
        points = [(r["x"], r["y"]) for r in verts]
        transfer = [r["id"] for r in verts if r["tramline"]]
        site = [r.get("site", r["id"]) for r in verts]
        edges = [(e["from"], e["to"]) for e in data["edges"]]
        lanes = [Lane(ln["id"], tuple(ln["vertex_ids"]), float(ln["length"])) for ln in data["lanes"]]
        return cls(points, edges, lanes, transfer, data["kind"], site)


class _Builder:
    def __init__(self):
        self.points: list[tuple[float, float]] = []
        self.edges: list[tuple[int, int]] = []
        self.site: list[int] = []

    def add(self, p, site=None) -> int:
        self.points.append((float(p[0]), float(p[1])))
        v = len(self.points) - 1
        self.site.append(v if site is None else site)
        return v

    def link(self, a, b, both=False):
        self.edges.append((a, b))
        if both:
            self.edges.append((b, a))

    def chain(self, ids, both=False):
        for a, b in zip(ids[:-1], ids[1:]):
            self.link(a, b, both)


def _subdivide(a, b, spacing) -> list[np.ndarray]:
    """Interior points splitting a-b into equal steps no longer than ``spacing``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    m = max(1, int(math.ceil(float(np.hypot(*(b - a))) / spacing - 1e-9)))
    return [a + (b - a) * j / m for j in range(1, m)]


def build_graph(layout: FieldLayout, waypoint_spacing: float = DEFAULT_SPACING) -> FieldGraph:
    if not waypoint_spacing > 0:
        raise ValueError(f"waypoint_spacing must be > 0, got {waypoint_spacing}")
    if layout.kind == "spiral":
        return _spiral_graph(layout, waypoint_spacing)
    return _linear_graph(layout, waypoint_spacing)


def _path_stops(layout: FieldLayout, cuts: Sequence[float], spacing: float) -> list[float]:
    """Arc lengths of path vertices: joints, cuts and evenly spaced fill-ins."""
    marks = sorted(set(float(u) for u in layout.offsets) | set(cuts))
    stops = [marks[0]]
    for a, b in zip(marks[:-1], marks[1:]):
        if b - a < 1e-9:
            continue
        m = max(1, int(math.ceil((b - a) / spacing - 1e-9)))
        stops.extend(a + (b - a) * j / m for j in range(1, m + 1))
    return stops


def _spiral_graph(layout: FieldLayout, spacing: float) -> FieldGraph:
    total = layout.total_path_length
    degenerate = layout.spec.n == 1
    hits: list[tuple[float, int]] = []
    if degenerate:
        cuts = [0.0, total]
    else:
        for li, line in enumerate(layout.tramlines):
            for u in crossings(layout, line[0], line[-1]):
                hits.append((u, li))
        cuts = sorted({round(u, 9) for u, _ in hits})
    stops = _path_stops(layout, cuts, spacing)

    g = _Builder()
    path_ids = [g.add(to_2d(layout, u)) for u in stops]
    stop_arr = np.array(stops)
    cut_vertex = {}
    for u in cuts:
        cut_vertex[u] = path_ids[int(np.argmin(np.abs(stop_arr - u)))]
    junctions = [cut_vertex[u] for u in cuts]

    transfer: set[int] = set(junctions)
    lanes: list[Lane] = []
    pos = {v: i for i, v in enumerate(path_ids)}
    first, last = pos[junctions[0]], pos[junctions[-1]]
    # head and tail pieces hang off the network on one side only; they
    # behave as two-way access spurs rather than lanes
    for lo, hi in ((0, first), (last, len(path_ids) - 1)):
        piece = path_ids[lo : hi + 1]
        transfer.update(piece)
        g.chain(piece, both=True)
    for ja, jb in zip(junctions[:-1], junctions[1:]):
        ids = path_ids[pos[ja] : pos[jb] + 1]
        g.chain(ids)
        length = float(sum(math.dist(g.points[a], g.points[b]) for a, b in zip(ids[:-1], ids[1:])))
        lanes.append(Lane(len(lanes), tuple(ids), length))

    if degenerate:
        g.link(junctions[0], junctions[-1], both=True)
    else:
        _tramline_network(g, layout, hits, cut_vertex, transfer, spacing)

    return FieldGraph(g.points, g.edges, lanes, transfer, "spiral", g.site)


def _tramline_network(g, layout, hits, cut_vertex, transfer, spacing):
    lines = [(np.asarray(l[0], dtype=float), np.asarray(l[-1], dtype=float)) for l in layout.tramlines]
    shared: dict[tuple[float, float], int] = {}

    def key(p):
        return (round(float(p[0]), 9), round(float(p[1]), 9))

    for u, _ in hits:
        v = cut_vertex[round(u, 9)]
        shared[key(g.points[v])] = v
    for i, (a, b) in enumerate(lines):
        # (param along line, vertex id or point)
        marks: list[tuple[float, object]] = []
        ab = b - a
        L2 = float(ab @ ab)

        def param(p):
            return float((np.asarray(p) - a) @ ab) / L2

        for u, li in hits:
            if li == i:
                v = cut_vertex[round(u, 9)]
                marks.append((param(g.points[v]), v))
        marks.append((0.0, a))
        marks.append((1.0, b))
        for j, (c, e) in enumerate(lines):
            if j == i:
                continue
            ce = e - c
            den = ab[0] * ce[1] - ab[1] * ce[0]
            if abs(den) < 1e-15:
                continue
            t = ((c - a)[0] * ce[1] - (c - a)[1] * ce[0]) / den
            w = ((c - a)[0] * ab[1] - (c - a)[1] * ab[0]) / den
            if -1e-9 <= t <= 1 + 1e-9 and -1e-9 <= w <= 1 + 1e-9:
                marks.append((t, a + t * ab))
        marks.sort(key=lambda m: m[0])
        ids: list[int] = []
        for _, m in marks:
            if isinstance(m, (int, np.integer)):
                v = int(m)
            else:
                k = key(m)
                v = shared.get(k)
                if v is None:
                    v = g.add(m)
                    shared[k] = v
            if ids and (ids[-1] == v or math.dist(g.points[ids[-1]], g.points[v]) < 1e-9):
                continue
            ids.append(v)
        full = [ids[0]]
        for v in ids[1:]:
            for p in _subdivide(g.points[full[-1]], g.points[v], spacing):
                full.append(g.add(p))
            full.append(v)
        transfer.update(full)
        g.chain(full, both=True)


def _linear_graph(layout: FieldLayout, spacing: float) -> FieldGraph:
    spec: LinearSpec = layout.spec
    s, L = spec.row_spacing, spec.row_length
    ox, oy = spec.origin
    r = s / 2
    g = _Builder()
    lanes: list[Lane] = []
    transfer: set[int] = set()

    def arc_points(center, a0, a1):
        m = max(1, int(math.ceil(r * abs(a1 - a0) / spacing - 1e-9)))
        return [
            np.array([center[0] + r * math.cos(a0 + (a1 - a0) * j / m), center[1] + r * math.sin(a0 + (a1 - a0) * j / m)])
            for j in range(1, m)
        ]

    # headland corridors: y = oy + L + r (top), y = oy - r (bottom)
    xs_head = [ox - r + j * s for j in range(spec.rows + 1)]
    heads = {}
    for side, y in (("top", oy + L + r), ("bottom", oy - r)):
        ids = [g.add((xs_head[0], y))]
        for x in xs_head[1:]:
            for p in _subdivide(g.points[ids[-1]], (x, y), spacing):
                ids.append(g.add(p))
            ids.append(g.add((x, y)))
        g.chain(ids, both=True)
        transfer.update(ids)
        heads[side] = {round(g.points[v][0], 9): v for v in ids}

    m = max(1, int(math.ceil(L / spacing - 1e-9)))
    for i in range(spec.rows):
        x = ox + i * s
        ys = [oy + L * j / m for j in range(m + 1)]
        up = [g.add((x, y)) for y in ys]
        down = [g.add((x, y), site=g.site[up[j]]) for j, y in enumerate(ys)][::-1]
        g.chain(up)
        g.chain(down)
        lanes.append(Lane(len(lanes), tuple(up), L))
        lanes.append(Lane(len(lanes), tuple(down), L))
        for side, row_end, row_start, cy, sgn in (
            ("top", up[-1], down[0], oy + L, 1.0),
            ("bottom", down[-1], up[0], oy, -1.0),
        ):
            for dx in (-r, r):
                hv = heads[side][round(x + dx, 9)]
                center = (x + dx, cy)
                a0 = 0.0 if dx < 0 else math.pi
                a1 = a0 + sgn * (1.0 if dx < 0 else -1.0) * math.pi / 2
                inner = [g.add(p) for p in arc_points(center, a0, a1)]
                transfer.update(inner)
                chain = inner + [hv]
                g.link(row_end, chain[0])
                g.chain(chain, both=True)
                g.link(chain[0], row_start)
    return FieldGraph(g.points, g.edges, lanes, transfer, "linear", g.site)


def snap(graph: FieldGraph, p: Sequence[float]) -> int:
    """Nearest vertex to ``p``; ties go to the smallest VertexId."""
    d2 = np.sum((graph.points - np.asarray(p, dtype=float)) ** 2, axis=1)
    return int(np.argmin(d2))  # argmin returns the first minimum


def a_star(graph: FieldGraph, s: int, g: int) -> PathResult | None:
    """Rule-respecting shortest path from ``s`` to ``g``; ``None`` when unreachable.

    Uses f = g + h with h the straight-line distance to the goal.  Equal f
    values pop the smaller VertexId first.
    """
    if s == g:
        return PathResult([s], 0.0)
    pts = graph.points
    gx, gy = pts[g]

    def h(v):
        return math.hypot(pts[v][0] - gx, pts[v][1] - gy)

    best = {s: 0.0}
    parent = {s: -1}
    closed = set()
    heap = [(h(s), s)]
    while heap:
        _, v = heapq.heappop(heap)
        if v in closed:
            continue
        if v == g:
            path = [v]
            while parent[path[-1]] != -1:
                path.append(parent[path[-1]])
            return PathResult(path[::-1], best[g])
        closed.add(v)
        gv = best[v]
        for w, c in graph.adjacency[v]:
            if w in closed:
                continue
            ng = gv + c
            if ng < best.get(w, math.inf):
                best[w] = ng
                parent[w] = v
                heapq.heappush(heap, (ng + h(w), w))
    return None


def rules_distance(graph: FieldGraph, u: int, v: int) -> float:
    res = a_star(graph, u, v)
    return math.inf if res is None else res.length


def dijkstra(graph: FieldGraph, source: int) -> tuple[np.ndarray, np.ndarray]:
    """Single-source distances and predecessor array (-1 for none)."""
    n = graph.n_vertices
    dist = np.full(n, math.inf)
    pred = np.full(n, -1, dtype=int)
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = np.zeros(n, dtype=bool)
    adj = graph.adjacency
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        for w, c in adj[v]:
            nd = d + c
            if nd < dist[w]:
                dist[w] = nd
                pred[w] = v
                heapq.heappush(heap, (nd, w))
    return dist, pred


class DistanceCache:
    """Memoised single-source shortest-path trees over one graph."""

    def __init__(self, graph: FieldGraph, maxsize: int = 4096):
        self.graph = graph
        self.maxsize = maxsize
        self._trees: OrderedDict[int, tuple[np.ndarray, np.ndarray]] = OrderedDict()

    def tree(self, source: int):
        t = self._trees.get(source)
        if t is None:
            t = dijkstra(self.graph, source)
            self._trees[source] = t
            if len(self._trees) > self.maxsize:
                self._trees.popitem(last=False)
        else:
            self._trees.move_to_end(source)
        return t

    def distance(self, u: int, v: int) -> float:
        return float(self.tree(u)[0][v])

    def path(self, u: int, v: int) -> list[int] | None:
        dist, pred = self.tree(u)
        if not math.isfinite(dist[v]):
            return None
        out = [v]
        while out[-1] != u:
            out.append(int(pred[out[-1]]))
        return out[::-1]


def path_length(graph: FieldGraph, path: Sequence[int]) -> float:
    total = 0.0
    for a, b in zip(path[:-1], path[1:]):
        w = dict(graph.adjacency[a]).get(b)
        if w is None:
            raise ValueError(f"no edge {a}->{b}")
        total += w
    return total
