"""Synthetic crop-row perception: pinhole camera, line fitting and the epsilon score.

Stands in for a learned waypoint regressor.  Ground-truth row points ahead of
the robot are projected into the image, optionally corrupted with pixel noise,
and scored by comparing line fits of the noisy and clean pixels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .controller import RobotState
from .geometry import FieldLayout, heading_at, to_1d, to_2d, wrap_angle

N_WAYPOINTS = 10


@dataclass(frozen=True)
class CameraModel:
    height: float = 0.8
    pitch: float = math.radians(25.0)
    focal: float = 525.0
    principal_point: tuple[float, float] = (320.0, 240.0)
    image_size: tuple[int, int] = (640, 480)

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("camera height must be positive")
        if not 0 < self.pitch < math.pi / 2:
            raise ValueError("pitch must lie in (0, pi/2)")
        if self.focal <= 0:
            raise ValueError("focal length must be positive")

    def axes(self) -> np.ndarray:
        """Camera x (right), y (down), z (optical) axes in the robot frame."""
        c, s = math.cos(self.pitch), math.sin(self.pitch)
        z = np.array([c, 0.0, -s])
        x = np.array([0.0, -1.0, 0.0])
        return np.array([x, np.cross(z, x), z])

    @classmethod
    def from_dict(cls, data: dict) -> "CameraModel":
        d = dict(data)
        if "pitch_deg" in d:
            d["pitch"] = math.radians(d.pop("pitch_deg"))
        for k in ("principal_point", "image_size"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class WaypointPrediction:
    pixels: np.ndarray  # (10, 2) as (u, v)
    scene_class: str

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=float)
        if px.shape != (N_WAYPOINTS, 2):
            raise ValueError(f"expected {N_WAYPOINTS} pixel pairs, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)


@dataclass(frozen=True)
class LineFit:
    theta_dev: float  # degrees from the vertical image axis, unsigned
    Lx: float | None  # column where the line meets the bottom border
    residual: float  # sum of squared orthogonal distances


def scene_class_of(heading_change: float, threshold: float = math.radians(15)) -> str:
    if heading_change > threshold:
        return "left_bend"
    if heading_change < -threshold:
        return "right_bend"
    return "straight"


def ground_truth_waypoints(
    layout: FieldLayout,
    robot: RobotState,
    lookahead: float = 3.0,
    near: float = 0.75,
) -> tuple[np.ndarray, str]:
    """Ten evenly spaced row points ``near``..``lookahead`` metres ahead along the path.

    The robot is associated with its closest path point.  Points past the
    path end repeat the final point.  The scene class is the sign of the net
    heading change across the lookahead window.
    """
    xmin, ymin, xmax, ymax = layout.bounds()
    if not (xmin - 1e-9 <= robot.x <= xmax + 1e-9 and ymin - 1e-9 <= robot.y <= ymax + 1e-9):
        raise ValueError("robot outside field bounds")
    total = layout.total_path_length
    u0 = to_1d(layout, (robot.x, robot.y))
    us = np.minimum(u0 + np.linspace(near, lookahead, N_WAYPOINTS), total)
    pts = np.array([to_2d(layout, u) for u in us])
    change = wrap_angle(heading_at(layout, min(u0 + lookahead, total)) - heading_at(layout, u0))
    return pts, scene_class_of(change)


def _to_robot_frame(robot: RobotState, points: np.ndarray) -> np.ndarray:
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    d = np.asarray(points, dtype=float) - (robot.x, robot.y)
    return np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]])


def project(
    camera: CameraModel,
    robot: RobotState,
    points: np.ndarray,
    scene_class: str = "straight",
    noise: tuple[float, float] = (0.0, 0.0),
    rng: np.random.Generator | None = None,
    clamp: bool = True,
) -> WaypointPrediction:
    """Pinhole projection of ground points (odometry frame) into pixels."""
    local = _to_robot_frame(robot, points)
    rel = np.column_stack([local, np.full(len(local), -camera.height)])
    cam = rel @ camera.axes().T
    ok = cam[:, 2] > 1e-9
    if not ok.any():
        raise ValueError("no point lies in front of the camera")
    cam = cam[ok]
    cx, cy = camera.principal_point
    px = np.column_stack([cx + camera.focal * cam[:, 0] / cam[:, 2], cy + camera.focal * cam[:, 1] / cam[:, 2]])
    if len(px) < N_WAYPOINTS:
        # re-pad dropped points by repeating the last visible one
        px = np.vstack([px, np.repeat(px[-1:], N_WAYPOINTS - len(px), axis=0)])
    su, sv = noise
    if su > 0 or sv > 0:
        rng = rng if rng is not None else np.random.default_rng(0)
        px = px + rng.normal(0.0, 1.0, px.shape) * (su, sv)
    if clamp:
        w, h = camera.image_size
        px = np.column_stack([np.clip(px[:, 0], 0, w), np.clip(px[:, 1], 0, h)])
    return WaypointPrediction(px, scene_class)


def unproject(camera: CameraModel, robot: RobotState, pred: WaypointPrediction | np.ndarray) -> np.ndarray:
    """Intersect pixel rays with the ground plane and return odometry-frame points."""
    px = pred.pixels if isinstance(pred, WaypointPrediction) else np.atleast_2d(np.asarray(pred, dtype=float))
    cx, cy = camera.principal_point
    rays_cam = np.column_stack([(px[:, 0] - cx) / camera.focal, (px[:, 1] - cy) / camera.focal, np.ones(len(px))])
    rays = rays_cam @ camera.axes()  # robot frame
    down = -rays[:, 2]
    if np.any(down <= 1e-12):
        raise ValueError("pixel at or above the horizon has no ground intersection")
    t = camera.height / down
    local = rays[:, :2] * t[:, None]
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    return np.column_stack([robot.x + c * local[:, 0] - s * local[:, 1], robot.y + s * local[:, 0] + c * local[:, 1]])


def fit_line(pred: WaypointPrediction | np.ndarray, image_height: float = 480.0) -> LineFit:
    """Total least-squares line through the pixels."""
    px = pred.pixels if isinstance(pred, WaypointPrediction) else np.asarray(pred, dtype=float)
    if np.ptp(px, axis=0).max() == 0:
        raise ValueError("all pixels identical, line undefined")
    centre = px.mean(axis=0)
    _, sv, vt = np.linalg.svd(px - centre, full_matrices=False)
    du, dv = vt[0]
    residual = float(sv[1] ** 2) if len(sv) > 1 else 0.0
    theta = math.degrees(math.atan2(abs(du), abs(dv)))
    Lx = None
    if theta <= 85.0:
        Lx = float(centre[0] + du * (image_height - centre[1]) / dv)
    return LineFit(theta, Lx, residual)


def epsilon_score(errors: Sequence[tuple[float, float]], maxima: tuple[float, float] | None = None) -> float:
    """One minus the mean of max-normalised angle and intercept errors.

    ``maxima`` defaults to the largest errors in ``errors``; a zero maximum
    makes its term vanish.
    """
    e = np.asarray(errors, dtype=float).reshape(-1, 2)
    if len(e) == 0:
        raise ValueError("epsilon_score needs at least one sample")
    if np.any(e < 0):
        raise ValueError("errors must be non-negative")
    mx = e.max(axis=0) if maxima is None else np.asarray(maxima, dtype=float)
    terms = np.where(mx > 0, e / np.where(mx > 0, mx, 1.0), 0.0)
    return float(1.0 - terms.sum() / (2 * len(e)))


def classify_pixels(camera: CameraModel, robot: RobotState, pred: WaypointPrediction) -> str:
    """Scene class from the turn between the near and far halves of the ground points."""
    try:
        g = unproject(camera, robot, pred)
    except ValueError:
        return "straight"
    a = g[N_WAYPOINTS // 2 - 1] - g[0]
    b = g[-1] - g[N_WAYPOINTS // 2]
    return scene_class_of(wrap_angle(math.atan2(b[1], b[0]) - math.atan2(a[1], a[0])))


def _visible(camera: CameraModel, pred_pixels: np.ndarray) -> bool:
    w, h = camera.image_size
    u, v = pred_pixels[:, 0], pred_pixels[:, 1]
    return bool(np.all((u >= 0) & (u <= w) & (v >= 0) & (v <= h)))


def sample_frames(
    layout: FieldLayout,
    camera: CameraModel,
    n_frames: int,
    rng: np.random.Generator,
    lookahead: float = 3.0,
    max_tries: int = 100_000,
) -> list[tuple[RobotState, np.ndarray, str]]:
    """Robot poses on the path whose crop row projects fully inside the image."""
    total = layout.total_path_length
    frames = []
    for _ in range(max_tries):
        if len(frames) == n_frames:
            break
        u = float(rng.uniform(0.0, total))
        p = to_2d(layout, u)
        robot = RobotState(float(p[0]), float(p[1]), heading_at(layout, u))
        pts, scene = ground_truth_waypoints(layout, robot, lookahead)
        try:
            clean = project(camera, robot, pts, scene, clamp=False)
        except ValueError:
            continue
        if not _visible(camera, clean.pixels) or np.ptp(clean.pixels, axis=0).max() == 0:
            continue
        if fit_line(clean, camera.image_size[1]).Lx is None:
            continue
        frames.append((robot, pts, scene))
    if len(frames) < n_frames:
        raise RuntimeError(f"only {len(frames)} usable frames after {max_tries} draws")
    return frames


@dataclass
class PerceptionResult:
    sigmas: list[float]
    errors: dict[float, np.ndarray]  # per sigma: (frames, 2) of (dtheta, dLx)
    scenes: dict[float, list[tuple[str, str]]]
    maxima: tuple[float, float]

    def epsilon(self, sigma: float) -> float:
        return epsilon_score(self.errors[sigma], self.maxima)

    def running_epsilon(self, sigma: float) -> np.ndarray:
        e = self.errors[sigma]
        mx = np.asarray(self.maxima, dtype=float)
        terms = np.where(mx > 0, e / np.where(mx > 0, mx, 1.0), 0.0).sum(axis=1)
        return 1.0 - np.cumsum(terms) / (2 * np.arange(1, len(e) + 1))

    def scene_accuracy(self, sigma: float) -> float:
        pairs = self.scenes[sigma]
        return sum(a == b for a, b in pairs) / len(pairs)


def perception_experiment(
    layout: FieldLayout,
    camera: CameraModel | None = None,
    sigmas: Sequence[float] = (0.0, 1.0, 2.0, 4.0, 8.0),
    n_frames: int = 500,
    seed: int = 0,
) -> PerceptionResult:
    """Line-fit errors of noisy versus clean projections over a noise sweep.

    The normalising maxima are taken over the whole sweep so scores of
    different noise levels share one scale.  A noisy fit too flat to meet the
    bottom border scores the full image width as its intercept error.
    """
    camera = camera or CameraModel()
    frames = sample_frames(layout, camera, n_frames, np.random.default_rng([seed, 0]))
    height = camera.image_size[1]
    errors, scenes = {}, {}
    for level, sigma in enumerate(sigmas):
        rng = np.random.default_rng([seed, 1, level])
        rows, sc = [], []
        for robot, pts, scene in frames:
            clean = fit_line(project(camera, robot, pts, scene), height)
            noisy_pred = project(camera, robot, pts, scene, (sigma, sigma), rng)
            try:
                noisy = fit_line(noisy_pred, height)
            except ValueError:
                noisy = LineFit(90.0, None, 0.0)
            d_lx = abs(noisy.Lx - clean.Lx) if noisy.Lx is not None else float(camera.image_size[0])
            rows.append((abs(noisy.theta_dev - clean.theta_dev), d_lx))
            sc.append((scene, classify_pixels(camera, robot, noisy_pred)))
        errors[float(sigma)] = np.array(rows)
        scenes[float(sigma)] = sc
    stacked = np.vstack(list(errors.values()))
    maxima = (float(stacked[:, 0].max()), float(stacked[:, 1].max()))
    return PerceptionResult([float(s) for s in sigmas], errors, scenes, maxima)
