"""Square-spiral and linear field layouts as explicit 2-D paths.

A layout is an ordered chain of :class:`Segment` pieces (straight rows and
circular turn arcs) plus the tramline polylines that cut across it.  The
chain carries a 1-D arc-length parameterisation, so any point of the field
can be mapped onto the path (:func:`to_1d`) and back (:func:`to_2d`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

Point = tuple[float, float]

CHIRALITIES = ("inward-clockwise", "inward-counterclockwise")
TURN_STYLES = ("u_turn", "omega_turn")

_TIE_EPS = 1e-12


@dataclass(frozen=True)
class SpiralSpec:
    """Parameters of a square spiral S(s, d).

    ``tramlines_per_axis`` controls how many straight tramlines cross the
    field along each axis; they are spread evenly and nudged into the gap
    between neighbouring passes so that no tramline runs on top of a row.
    """

    s: float
    d: float
    corner_radius: float | None = None
    origin: Point = (0.0, 0.0)
    chirality: str = "inward-clockwise"
    tramlines_per_axis: int = 2

    def __post_init__(self):
        if not self.s > 0:
            raise ValueError(f"inter-row spacing s must be > 0, got {self.s}")
        if not self.d > 0:
            raise ValueError(f"side length d must be > 0, got {self.d}")
        if self.corner_radius is None:
            object.__setattr__(self, "corner_radius", self.s / 2)
        if self.corner_radius < 0 or self.corner_radius > self.s / 2 + 1e-12:
            raise ValueError(
                f"corner_radius must lie in [0, s/2] = [0, {self.s / 2}], got {self.corner_radius}"
            )
        if self.chirality not in CHIRALITIES:
            raise ValueError(f"unknown chirality {self.chirality!r}")
        if self.tramlines_per_axis < 1:
            raise ValueError("tramlines_per_axis must be >= 1")
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def n(self) -> int:
        """Row count n = floor(d / s) + 1."""
        # guard against 11.5/0.5 style ratios landing a hair under an integer
        return int(math.floor(self.d / self.s + 1e-9)) + 1

    @property
    def straight_count(self) -> int:
        return 2 * self.n - 1


@dataclass(frozen=True)
class LinearSpec:
    rows: int
    row_length: float
    row_spacing: float
    turn_style: str = "u_turn"
    min_turn_radius: float = 0.5
    origin: Point = (0.0, 0.0)

    def __post_init__(self):
        if self.rows < 1:
            raise ValueError(f"rows must be >= 1, got {self.rows}")
        if not self.row_length > 0:
            raise ValueError(f"row_length must be > 0, got {self.row_length}")
        if not self.row_spacing > 0:
            raise ValueError(f"row_spacing must be > 0, got {self.row_spacing}")
        if self.turn_style not in TURN_STYLES:
            raise ValueError(f"unknown turn_style {self.turn_style!r}")
        if self.turn_style == "omega_turn" and self.min_turn_radius < self.row_spacing / 2:
            raise ValueError(
                "omega_turn needs min_turn_radius >= row_spacing/2 "
                f"({self.min_turn_radius} < {self.row_spacing / 2})"
            )
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))


@dataclass(frozen=True)
class Segment:
    """One piece of the layout path.

    Straight pieces only use ``start``/``end``.  Corner arcs additionally
    carry their circle: points are ``center + radius * (cos a, sin a)`` for
    ``a`` running from ``start_angle`` to ``start_angle + sweep``.
    """

    id: int
    kind: str  # "straight" | "corner_arc"
    start: Point
    end: Point
    length: float
    loop_index: int
    center: Point | None = None
    radius: float = 0.0
    start_angle: float = 0.0
    sweep: float = 0.0

    def point_at(self, t: float) -> np.ndarray:
        """Point at local arc length ``t`` in [0, length]."""
        if self.kind == "straight":
            if self.length == 0.0:
                return np.array(self.start, dtype=float)
            a = np.asarray(self.start, dtype=float)
            b = np.asarray(self.end, dtype=float)
            return a + (b - a) * (t / self.length)
        ang = self.start_angle + math.copysign(t / self.radius, self.sweep)
        return np.array(
            [self.center[0] + self.radius * math.cos(ang), self.center[1] + self.radius * math.sin(ang)]
        )

    def heading_at(self, t: float) -> float:
        if self.kind == "straight":
            return math.atan2(self.end[1] - self.start[1], self.end[0] - self.start[0])
        ang = self.start_angle + math.copysign(t / self.radius, self.sweep)
        return wrap_angle(ang + math.copysign(math.pi / 2, self.sweep))

    def closest(self, p: np.ndarray) -> tuple[float, float]:
        """Return ``(distance, local arc length)`` of the nearest point to ``p``."""
        if self.kind == "straight":
            a = np.asarray(self.start, dtype=float)
            b = np.asarray(self.end, dtype=float)
            ab = b - a
            L2 = float(ab @ ab)
            t = 0.0 if L2 == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / L2))
            q = a + t * ab
            return float(np.hypot(*(p - q))), t * self.length
        c = np.asarray(self.center, dtype=float)
        rel = p - c
        ang = math.atan2(rel[1], rel[0])
        # angular offset from start along the sweep direction, folded into [0, 2pi)
        off = ((ang - self.start_angle) * math.copysign(1.0, self.sweep)) % (2 * math.pi)
        span = abs(self.sweep)
        candidates = [0.0, span]
        if off <= span:
            candidates.append(off)
        best = (math.inf, 0.0)
        for a in sorted(candidates):
            t = a * self.radius
            dist = float(np.hypot(*(p - self.point_at(t))))
            if dist < best[0] - _TIE_EPS:
                best = (dist, t)
        return best

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "kind": self.kind,
            "start": list(self.start),
            "end": list(self.end),
            "length": self.length,
            "loop_index": self.loop_index,
        }
        if self.kind == "corner_arc":
            out.update(
                center=list(self.center),
                radius=self.radius,
                start_angle=self.start_angle,
                sweep=self.sweep,
            )
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Segment":
        center = data.get("center")
        return cls(
            id=int(data["id"]),
            kind=data["kind"],
            start=tuple(map(float, data["start"])),
            end=tuple(map(float, data["end"])),
            length=float(data["length"]),
            loop_index=int(data["loop_index"]),
            center=tuple(map(float, center)) if center is not None else None,
            radius=float(data.get("radius", 0.0)),
            start_angle=float(data.get("start_angle", 0.0)),
            sweep=float(data.get("sweep", 0.0)),
        )


@dataclass(frozen=True)
class FieldLayout:
    kind: str  # "spiral" | "linear"
    spec: SpiralSpec | LinearSpec
    segments: tuple[Segment, ...]
    tramlines: tuple[tuple[Point, ...], ...]
    _offsets: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        offs = np.concatenate([[0.0], np.cumsum([seg.length for seg in self.segments])])
        object.__setattr__(self, "_offsets", offs)

    @property
    def total_path_length(self) -> float:
        return float(self._offsets[-1])

    @property
    def offsets(self) -> np.ndarray:
        """Arc length at the start of each segment (plus the total at the end)."""
        return self._offsets

    @property
    def straight_segments(self) -> list[Segment]:
        return [seg for seg in self.segments if seg.kind == "straight"]

    @property
    def start(self) -> np.ndarray:
        return np.asarray(self.segments[0].start, dtype=float)

    @property
    def end(self) -> np.ndarray:
        return np.asarray(self.segments[-1].end, dtype=float)

    def bounds(self) -> tuple[float, float, float, float]:
        """Axis-aligned field bounds ``(xmin, ymin, xmax, ymax)``."""
        if isinstance(self.spec, SpiralSpec):
            ox, oy = self.spec.origin
            return ox, oy, ox + self.spec.d, oy + self.spec.d
        pts = sample_path(self, 0.05)[0]
        return float(pts[:, 0].min()), float(pts[:, 1].min()), float(pts[:, 0].max()), float(pts[:, 1].max())

    def locate(self, u: float) -> tuple[int, float]:
        """Segment index and local offset for arc length ``u``."""
        i = int(np.searchsorted(self._offsets, u, side="right")) - 1
        i = min(max(i, 0), len(self.segments) - 1)
        return i, u - float(self._offsets[i])


def wrap_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    w = math.remainder(a, 2 * math.pi)
    if w <= -math.pi:
        w += 2 * math.pi
    return w


def _frame(origin: Point, mirror: bool):
    ox, oy = origin

    def to_world(p):
        x, y = p
        if mirror:
            x, y = y, x
        return (ox + x, oy + y)

    return to_world


def _straight(idx, a, b, loop):
    return Segment(idx, "straight", a, b, float(math.dist(a, b)), loop)


def _arc(idx, center, radius, start_angle, sweep, loop):
    cx, cy = center
    a = (cx + radius * math.cos(start_angle), cy + radius * math.sin(start_angle))
    e = (cx + radius * math.cos(start_angle + sweep), cy + radius * math.sin(start_angle + sweep))
    return Segment(idx, "corner_arc", a, e, abs(sweep) * radius, loop, center, radius, start_angle, sweep)


def _spiral_corners(spec: SpiralSpec) -> list[Point]:
    """Sharp-corner vertices of the spiral in the local clockwise frame."""
    n, s, d = spec.n, spec.s, spec.d
    dirs = [(0.0, 1.0), (1.0, 0.0), (0.0, -1.0), (-1.0, 0.0)]
    pts = [(0.0, 0.0)]
    for k in range(2 * n - 1):
        length = d if k == 0 else d - ((k - 1) // 2) * s
        dx, dy = dirs[k % 4]
        x, y = pts[-1]
        pts.append((x + dx * length, y + dy * length))
    return pts


def build_spiral(spec: SpiralSpec) -> FieldLayout:
    """Square spiral starting at the south-west corner and winding inward.

    Side lengths run d, d, d, d-s, d-s, d-2s, d-2s, ... which gives the
    2n - 1 straight passes with every pair of parallel neighbours exactly
    ``s`` apart.  Corners are rounded with ``spec.corner_radius``.
    """
    mirror = spec.chirality == "inward-counterclockwise"
    to_world = _frame(spec.origin, mirror)
    corners = [to_world(p) for p in _spiral_corners(spec)]
    r = float(spec.corner_radius)
    m = len(corners) - 1
    unit = []
    for a, b in zip(corners[:-1], corners[1:]):
        L = math.dist(a, b)
        unit.append(((b[0] - a[0]) / L, (b[1] - a[1]) / L))

    segments: list[Segment] = []
    for k in range(m):
        a, b = corners[k], corners[k + 1]
        ux, uy = unit[k]
        trim_a = r if k > 0 else 0.0
        trim_b = r if k < m - 1 else 0.0
        sa = (a[0] + ux * trim_a, a[1] + uy * trim_a)
        sb = (b[0] - ux * trim_b, b[1] - uy * trim_b)
        loop = k // 4
        segments.append(_straight(len(segments), sa, sb, loop))
        if k < m - 1 and r > 0:
            vx, vy = unit[k + 1]
            center = (b[0] - ux * r + vx * r, b[1] - uy * r + vy * r)
            start_angle = math.atan2(-vy, -vx)
            turn = ux * vy - uy * vx  # +1 left, -1 right
            segments.append(_arc(len(segments), center, r, start_angle, math.copysign(math.pi / 2, turn), loop))

    tramlines = _spiral_tramlines(spec, corners)
    return FieldLayout("spiral", spec, tuple(segments), tramlines)


def _gap_midpoint(coords: Sequence[float], target: float, lo: float, hi: float) -> float:
    vals = sorted(set(round(c, 12) for c in coords) | {lo, hi})
    for a, b in zip(vals[:-1], vals[1:]):
        if a <= target <= b:
            return 0.5 * (a + b)
    return target


def _spiral_tramlines(spec: SpiralSpec, corners: list[Point]) -> tuple[tuple[Point, ...], ...]:
    if spec.n == 1:
        return ((corners[0], corners[-1]),)
    ox, oy = spec.origin
    xs = [p[0] for p in corners]
    ys = [p[1] for p in corners]
    K = spec.tramlines_per_axis
    lines = []
    for i in range(1, K + 1):
        frac = i / (K + 1)
        cx = _gap_midpoint(xs, ox + frac * spec.d, ox, ox + spec.d)
        lines.append(((cx, oy), (cx, oy + spec.d)))
    for i in range(1, K + 1):
        frac = i / (K + 1)
        cy = _gap_midpoint(ys, oy + frac * spec.d, oy, oy + spec.d)
        lines.append(((ox, cy), (ox + spec.d, cy)))
    return tuple(lines)


def _turn_arcs_local(style: str, s: float, R: float) -> list[tuple[Point, float, float, float]]:
    """Arcs (center, radius, start_angle, sweep) turning from (0,0) heading +y
    into (s,0) heading -y, in a frame where the next row lies at +x."""
    if style == "u_turn":
        return [((s / 2, 0.0), s / 2, math.pi, -math.pi)]
    h = math.sqrt(4 * R * R - (R + s / 2) ** 2)
    phi = math.atan2(h, R + s / 2)
    return [
        ((-R, 0.0), R, 0.0, phi),
        ((s / 2, h), R, math.pi + phi, -(math.pi + 2 * phi)),
        ((s + R, 0.0), R, math.pi - phi, phi),
    ]


def build_linear(spec: LinearSpec) -> FieldLayout:
    """Boustrophedon coverage of ``rows`` parallel north-south rows.

    Row i sits at x = i * row_spacing.  Odd rows are driven southward; row
    ends are joined by a U-turn semicircle or a three-arc omega bulb.
    """
    ox, oy = spec.origin
    s, L = spec.row_spacing, spec.row_length
    segments: list[Segment] = []
    local_arcs = _turn_arcs_local(spec.turn_style, s, spec.min_turn_radius)
    for i in range(spec.rows):
        x = ox + i * s
        a, b = ((x, oy), (x, oy + L)) if i % 2 == 0 else ((x, oy + L), (x, oy))
        segments.append(_straight(len(segments), a, b, i))
        if i == spec.rows - 1:
            break
        top = i % 2 == 0
        for (cx, cy), rad, a0, sw in local_arcs:
            if top:
                center = (x + cx, oy + L + cy)
                segments.append(_arc(len(segments), center, rad, a0, sw, i))
            else:
                # reflect y -> -y about the bottom edge: angles negate, sweeps flip
                center = (x + cx, oy - cy)
                segments.append(_arc(len(segments), center, rad, -a0, -sw, i))
    return FieldLayout("linear", spec, tuple(segments), ())


def to_2d(layout: FieldLayout, u: float) -> np.ndarray:
    """Point on the layout path at arc length ``u``."""
    total = layout.total_path_length
    if u < -1e-9 or u > total + 1e-9:
        raise ValueError(f"arc length {u} outside [0, {total}]")
    u = min(max(u, 0.0), total)
    i, t = layout.locate(u)
    return layout.segments[i].point_at(min(t, layout.segments[i].length))


def heading_at(layout: FieldLayout, u: float) -> float:
    u = min(max(u, 0.0), layout.total_path_length)
    i, t = layout.locate(u)
    return layout.segments[i].heading_at(min(t, layout.segments[i].length))


def to_1d(layout: FieldLayout, p: Sequence[float]) -> float:
    """Arc length of the closest path point to ``p`` (ties -> smaller arc length)."""
    q = np.asarray(p, dtype=float)
    best_d, best_u = math.inf, 0.0
    for seg, off in zip(layout.segments, layout.offsets[:-1]):
        dist, t = seg.closest(q)
        if dist < best_d - _TIE_EPS:
            best_d, best_u = dist, float(off) + t
    return best_u


def coverage_stats(layout: FieldLayout) -> dict:
    """Total path length and turn events grouped by absolute turn angle in degrees.

    A turn event is a maximal run of consecutive arcs; its angle is the net
    heading change, so an omega bulb counts once as a 180 degree turn.
    """
    counts: dict[int, int] = {}
    run = 0.0
    in_turn = False
    prev_heading = None
    for seg in layout.segments:
        if seg.kind == "corner_arc":
            run += seg.sweep
            in_turn = True
            continue
        heading = seg.heading_at(0.0)
        if in_turn:
            _count(counts, run)
        elif prev_heading is not None and seg.length > 0:
            jump = wrap_angle(heading - prev_heading)
            if abs(jump) > 1e-9:
                _count(counts, jump)
        run, in_turn = 0.0, False
        if seg.length > 0:
            prev_heading = heading
    if in_turn:
        _count(counts, run)
    return {"total_length": layout.total_path_length, "turn_count_by_angle": dict(sorted(counts.items()))}


def _count(counts, angle):
    deg = int(round(abs(math.degrees(angle))))
    counts[deg] = counts.get(deg, 0) + 1


def sample_path(layout: FieldLayout, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    """Points along the path at most ``spacing`` apart; segment joints are always kept."""
    pts = [np.asarray(layout.segments[0].start, dtype=float)]
    us = [0.0]
    for seg, off in zip(layout.segments, layout.offsets[:-1]):
        if seg.length <= 0:
            continue
        m = max(1, int(math.ceil(seg.length / spacing - 1e-9)))
        for j in range(1, m + 1):
            t = seg.length * j / m
            pts.append(seg.point_at(t))
            us.append(float(off) + t)
    return np.array(pts), np.array(us)


def crossings(layout: FieldLayout, a: Sequence[float], b: Sequence[float]) -> list[float]:
    """Arc lengths where the path meets the straight segment a-b (sorted, deduplicated)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    hits: list[float] = []
    for seg, off in zip(layout.segments, layout.offsets[:-1]):
        for t in _intersect(seg, a, b):
            hits.append(float(off) + t)
    hits.sort()
    out: list[float] = []
    for u in hits:
        if not out or u - out[-1] > 1e-7:
            out.append(u)
    return out


def _cross2(u, v):
    return u[0] * v[1] - u[1] * v[0]


def _intersect(seg: Segment, a: np.ndarray, b: np.ndarray) -> Iterable[float]:
    ab = b - a
    tol = 1e-9
    if seg.kind == "straight":
        p = np.asarray(seg.start, dtype=float)
        q = np.asarray(seg.end, dtype=float)
        pq = q - p
        den = _cross2(pq, ab)
        if abs(den) < 1e-15:
            return []  # parallel or collinear: not a crossing
        t = _cross2(a - p, ab) / den
        w = _cross2(a - p, pq) / den
        if -tol <= t <= 1 + tol and -tol <= w <= 1 + tol:
            return [min(max(t, 0.0), 1.0) * seg.length]
        return []
    c = np.asarray(seg.center, dtype=float)
    f = a - c
    A = float(ab @ ab)
    B = 2 * float(f @ ab)
    C = float(f @ f) - seg.radius**2
    disc = B * B - 4 * A * C
    if disc <= 1e-14 * A * seg.radius**2:
        return []  # miss or tangent touch
    out = []
    sq = math.sqrt(disc)
    for w in ((-B - sq) / (2 * A), (-B + sq) / (2 * A)):
        if not (-tol <= w <= 1 + tol):
            continue
        pt = a + w * ab
        ang = math.atan2(pt[1] - c[1], pt[0] - c[0])
        off = ((ang - seg.start_angle) * math.copysign(1.0, seg.sweep)) % (2 * math.pi)
        if off > 2 * math.pi - 1e-9:
            off = 0.0
        if off <= abs(seg.sweep) + 1e-9:
            out.append(min(off, abs(seg.sweep)) * seg.radius)
    return out


def spec_to_dict(spec: SpiralSpec | LinearSpec) -> dict:
    if isinstance(spec, SpiralSpec):
        return {
            "s": spec.s,
            "d": spec.d,
            "corner_radius": spec.corner_radius,
            "origin": list(spec.origin),
            "chirality": spec.chirality,
            "tramlines_per_axis": spec.tramlines_per_axis,
        }
    return {
        "rows": spec.rows,
        "row_length": spec.row_length,
        "row_spacing": spec.row_spacing,
        "turn_style": spec.turn_style,
        "min_turn_radius": spec.min_turn_radius,
        "origin": list(spec.origin),
    }


def layout_to_dict(layout: FieldLayout) -> dict:
    """JSON-compatible interchange document (meters, radians)."""
    return {
        "kind": layout.kind,
        "spec": spec_to_dict(layout.spec),
        "total_path_length": layout.total_path_length,
        "segments": [seg.to_dict() for seg in layout.segments],
        "tramlines": [[list(p) for p in line] for line in layout.tramlines],
    }


def layout_from_dict(data: dict) -> FieldLayout:
    kind = data["kind"]
    raw = dict(data["spec"])
    raw["origin"] = tuple(raw.get("origin", (0.0, 0.0)))
    spec = SpiralSpec(**raw) if kind == "spiral" else LinearSpec(**raw)
    segments = tuple(Segment.from_dict(s) for s in data["segments"])
    tramlines = tuple(tuple(tuple(map(float, p)) for p in line) for line in data.get("tramlines", []))
    return FieldLayout(kind, spec, segments, tramlines)
