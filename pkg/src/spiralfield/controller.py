"""Receding-horizon tracking controller for a unicycle robot.

The horizon problem is solved by Gauss-Newton on the stacked residuals of the
quadratic cost, re-linearising the dynamics about the current nominal control
sequence each iteration and projecting onto the control bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import wrap_angle

SCENE_CLASSES = ("straight", "left_bend", "right_bend")


class TrackingDiverged(RuntimeError):
    """Raised when the robot strays further than the configured limit."""


@dataclass(frozen=True)
class RobotState:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])


@dataclass(frozen=True)
class ControlInput:
    v: float
    omega: float


@dataclass(frozen=True)
class SegmentProfile:
    v_ref: float
    heading_weight: float = 1.0  # multiplier on the heading entry of Q


def default_profiles() -> dict[str, SegmentProfile]:
    bend = SegmentProfile(0.4, 2.0)
    return {"straight": SegmentProfile(0.8, 1.0), "left_bend": bend, "right_bend": bend}


def _check_pd(name: str, m: np.ndarray, size: int) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {m.shape}")
    if not np.allclose(m, m.T):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None
    return m


@dataclass
class MpcConfig:
    N: int = 15
    dt: float = 0.1
    Q: np.ndarray = field(default_factory=lambda: np.diag([10.0, 10.0, 2.0]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.5, 0.5]))
    Qf: np.ndarray | None = None
    v_max: float = 1.0
    omega_max: float = 1.5
    w_vref: float = 1.0
    w_du: float = 0.1
    segment_profiles: dict[str, SegmentProfile] = field(default_factory=default_profiles)
    max_iter: int = 20
    tol: float = 1e-6
    divergence_limit: float = 5.0

    def __post_init__(self):
        if int(self.N) < 1:
            raise ValueError("horizon N must be >= 1")
        self.N = int(self.N)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError("control bounds must be positive")
        if self.w_vref < 0 or self.w_du < 0:
            raise ValueError("penalty weights must be non-negative")
        self.Q = _check_pd("Q", self.Q, 3)
        self.R = _check_pd("R", self.R, 2)
        self.Qf = _check_pd("Qf", 5.0 * self.Q if self.Qf is None else self.Qf, 3)
        missing = set(SCENE_CLASSES) - set(self.segment_profiles)
        if missing:
            raise ValueError(f"segment_profiles missing {sorted(missing)}")
        self.segment_profiles = {
            k: p if isinstance(p, SegmentProfile) else SegmentProfile(**p)
            for k, p in self.segment_profiles.items()
        }

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "dt": self.dt,
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "Qf": self.Qf.tolist(),
            "v_max": self.v_max,
            "omega_max": self.omega_max,
            "w_vref": self.w_vref,
            "w_du": self.w_du,
            "segment_profiles": {k: vars(p).copy() for k, p in self.segment_profiles.items()},
            "max_iter": self.max_iter,
            "tol": self.tol,
            "divergence_limit": self.divergence_limit,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MpcConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown controller keys: {sorted(extra)}")
        return cls(**data)


def segment_profile(scene: str, cfg: MpcConfig) -> SegmentProfile:
    if scene not in SCENE_CLASSES:
        raise ValueError(f"unknown scene class {scene!r}")
    return cfg.segment_profiles[scene]


@dataclass
class ReferenceTrajectory:
    poses: np.ndarray  # (M, 3)
    v_ref: np.ndarray  # (M,)
    scene_class: tuple[str, ...]

    def __post_init__(self):
        self.poses = np.atleast_2d(np.asarray(self.poses, dtype=float))
        self.v_ref = np.asarray(self.v_ref, dtype=float)
        if len(self.poses) == 0:
            raise ValueError("empty reference")
        if not (len(self.poses) == len(self.v_ref) == len(self.scene_class)):
            raise ValueError("reference arrays differ in length")

    def __len__(self) -> int:
        return len(self.poses)

    def window(self, k: int, N: int) -> "ReferenceTrajectory":
        """Poses k..k+N, holding the final pose (with zero speed) past the end."""
        idx = np.arange(k, k + N + 1)
        over = idx >= len(self.poses)
        idx = np.minimum(idx, len(self.poses) - 1)
        v = self.v_ref[idx].copy()
        v[over] = 0.0
        return ReferenceTrajectory(self.poses[idx], v, tuple(self.scene_class[i] for i in idx))


def step_dynamics(x: RobotState, u: ControlInput, dt: float) -> RobotState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return RobotState(
        x.x + dt * u.v * math.cos(x.theta),
        x.y + dt * u.v * math.sin(x.theta),
        x.theta + dt * u.omega,
    )


def _rollout(x0: np.ndarray, U: np.ndarray, dt: float) -> np.ndarray:
    X = np.empty((len(U) + 1, 3))
    X[0] = x0
    for k, (v, w) in enumerate(U):
        th = X[k, 2]
        X[k + 1] = (X[k, 0] + dt * v * math.cos(th), X[k, 1] + dt * v * math.sin(th), wrap_angle(th + dt * w))
    return X


def _errors(X: np.ndarray, poses: np.ndarray) -> np.ndarray:
    e = X - poses
    e[:, 2] = (e[:, 2] + math.pi) % (2 * math.pi) - math.pi
    return e


def _stage_weights(ref: ReferenceTrajectory, cfg: MpcConfig) -> list[np.ndarray]:
    out = []
    for k in range(cfg.N + 1):
        if k == cfg.N:
            out.append(cfg.Qf)
            continue
        q = cfg.Q.copy()
        q[2, 2] *= cfg.segment_profiles[ref.scene_class[k]].heading_weight
        out.append(q)
    return out


def mpc_cost(U, x0, ref: ReferenceTrajectory, cfg: MpcConfig, u_prev=(0.0, 0.0)) -> float:
    """Horizon cost of control sequence ``U`` (shape (N, 2)) from state ``x0``."""
    return mpc_cost_and_gradient(U, x0, ref, cfg, u_prev)[0]


def mpc_cost_and_gradient(U, x0, ref: ReferenceTrajectory, cfg: MpcConfig, u_prev=(0.0, 0.0)):
    """Cost and its exact gradient with respect to ``U`` (adjoint recursion)."""
    U = np.asarray(U, dtype=float).reshape(cfg.N, 2)
    x0 = np.asarray(x0, dtype=float)
    dt = cfg.dt
    X = _rollout(x0, U, dt)
    E = _errors(X, ref.poses[: cfg.N + 1])
    W = _stage_weights(ref, cfg)
    dU = np.diff(np.vstack([np.asarray(u_prev, dtype=float), U]), axis=0)
    dv = U[:, 0] - ref.v_ref[: cfg.N]

    cost = sum(E[k] @ W[k] @ E[k] for k in range(1, cfg.N + 1))
    cost += float(np.einsum("ki,ij,kj->", U, cfg.R, U))
    cost += cfg.w_vref * float(dv @ dv) + cfg.w_du * float(np.sum(dU * dU))

    grad = 2.0 * U @ cfg.R
    grad[:, 0] += 2.0 * cfg.w_vref * dv
    grad += 2.0 * cfg.w_du * dU
    grad[:-1] -= 2.0 * cfg.w_du * dU[1:]
    lam = 2.0 * W[cfg.N] @ E[cfg.N]
    for k in range(cfg.N - 1, -1, -1):
        v, th = U[k, 0], X[k, 2]
        c, s = math.cos(th), math.sin(th)
        grad[k, 0] += dt * (c * lam[0] + s * lam[1])
        grad[k, 1] += dt * lam[2]
        # lam_k = 2 W_k e_k + A_k^T lam_{k+1}
        lam = np.array([lam[0], lam[1], lam[2] + dt * v * (-s * lam[0] + c * lam[1])])
        if k > 0:
            lam = lam + 2.0 * W[k] @ E[k]
    return float(cost), grad


def _residuals(U, x0, ref, cfg, u_prev, chol):
    """Stacked residual vector r with cost = r.r, and its Jacobian in U."""
    N, dt = cfg.N, cfg.dt
    X = _rollout(x0, U, dt)
    E = _errors(X, ref.poses[: N + 1])
    # state sensitivities dX[k]/dU[j] for j < k
    S = np.zeros((N + 1, N, 3, 2))
    for k in range(1, N + 1):
        v, th = U[k - 1, 0], X[k - 1, 2]
        c, s = math.cos(th), math.sin(th)
        A = np.array([[1.0, 0.0, -dt * v * s], [0.0, 1.0, dt * v * c], [0.0, 0.0, 1.0]])
        S[k, : k - 1] = np.einsum("ij,bjk->bik", A, S[k - 1, : k - 1])
        S[k, k - 1] = [[dt * c, 0.0], [dt * s, 0.0], [0.0, dt]]
    rs, Js = [], []
    for k in range(1, N + 1):
        Lt = chol[k].T
        rs.append(Lt @ E[k])
        Js.append(np.einsum("ij,bjk->ibk", Lt, S[k]).reshape(3, 2 * N))
    LRt = np.linalg.cholesky(cfg.R).T
    eye = np.eye(2 * N)
    for k in range(N):
        rs.append(LRt @ U[k])
        Js.append(LRt @ eye[2 * k : 2 * k + 2])
    sv = math.sqrt(cfg.w_vref)
    rs.append(sv * (U[:, 0] - ref.v_ref[:N]))
    Js.append(sv * eye[0::2])
    sd = math.sqrt(cfg.w_du)
    prev = np.vstack([np.asarray(u_prev, dtype=float), U[:-1]])
    rs.append(sd * (U - prev).ravel())
    D = eye.copy()
    D[2:, :-2] -= eye[2:, 2:]
    Js.append(sd * D)
    return np.concatenate(rs), np.vstack(Js)


@dataclass
class MpcSolution:
    u0: ControlInput
    controls: np.ndarray
    predicted: list[RobotState]
    cost: float
    cost_history: list[float]


def solve_mpc(
    x0: RobotState,
    ref: ReferenceTrajectory,
    cfg: MpcConfig,
    u_init: np.ndarray | None = None,
    u_prev: Sequence[float] = (0.0, 0.0),
) -> MpcSolution:
    if len(ref) < cfg.N + 1:
        raise ValueError(f"reference has {len(ref)} poses, horizon needs {cfg.N + 1}")
    lo = np.array([-cfg.v_max, -cfg.omega_max])
    hi = -lo
    U = np.zeros((cfg.N, 2)) if u_init is None else np.clip(np.asarray(u_init, dtype=float), lo, hi)
    xa = x0.as_array()
    chol = [np.linalg.cholesky(w) for w in _stage_weights(ref, cfg)]
    r, J = _residuals(U, xa, ref, cfg, u_prev, chol)
    cost = float(r @ r)
    history = [cost]
    for _ in range(cfg.max_iter):
        H = J.T @ J
        g = J.T @ r
        try:
            step = -np.linalg.solve(H + 1e-9 * np.eye(len(H)), g).reshape(cfg.N, 2)
        except np.linalg.LinAlgError:
            break
        alpha, accepted = 1.0, False
        while alpha > 1e-3:
            cand = np.clip(U + alpha * step, lo, hi)
            r2, J2 = _residuals(cand, xa, ref, cfg, u_prev, chol)
            c2 = float(r2 @ r2)
            if c2 <= cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            break
        decrease = cost - c2
        U, r, J, cost = cand, r2, J2, c2
        history.append(cost)
        if decrease < cfg.tol:
            break
    X = _rollout(xa, U, cfg.dt)
    return MpcSolution(
        ControlInput(float(U[0, 0]), float(U[0, 1])),
        U,
        [RobotState(*p) for p in X],
        cost,
        history,
    )


PIVOT_ANGLE = math.radians(60)
SOFT_TURN = math.radians(2)


def _clean_polyline(points) -> np.ndarray:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if len(P) == 0:
        raise ValueError("empty path")
    keep = np.concatenate([[True], np.hypot(*np.diff(P, axis=0).T) > 1e-12])
    return P[keep]


def edge_classes(points, pivot_angle: float = PIVOT_ANGLE) -> tuple[list[str], np.ndarray]:
    """Scene class of every polyline edge and the signed turn at every interior vertex.

    An edge touching a gentle turn (above 2 degrees, at most ``pivot_angle``)
    is a bend in that turn's direction; sharper corners are left to an
    on-the-spot rotation and do not slow the adjoining edges.
    """
    P = _clean_polyline(points)
    d = np.diff(P, axis=0)
    heads = np.arctan2(d[:, 1], d[:, 0])
    turn = (np.diff(heads) + np.pi) % (2 * np.pi) - np.pi
    classes = ["straight"] * len(d)
    for j, t in enumerate(turn):
        if SOFT_TURN < abs(t) <= pivot_angle:
            c = "left_bend" if t > 0 else "right_bend"
            classes[j] = classes[j + 1] = c
    return classes, turn


def build_reference(points: np.ndarray, cfg: MpcConfig, pivot_angle: float = PIVOT_ANGLE) -> ReferenceTrajectory:
    """Time-parameterise a polyline at the speed profile of its scene classes.

    At corners sharper than ``pivot_angle`` the reference halts and rotates
    on the spot at ``omega_max``.  Each pose's reference speed is the speed
    implied by the step to the next pose.
    """
    P = _clean_polyline(points)
    if len(P) == 1:
        return ReferenceTrajectory(np.array([[P[0, 0], P[0, 1], 0.0]]), [0.0], ("straight",))
    seg = np.diff(P, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    heads = np.arctan2(seg[:, 1], seg[:, 0])
    classes, turn = edge_classes(P, pivot_angle)
    pivots = [(cum[j + 1], j, t) for j, t in enumerate(turn) if abs(t) > pivot_angle]
    total = cum[-1]
    poses: list[tuple[float, float, float]] = []
    scenes: list[str] = []

    def emit(s, i):
        t = (s - cum[i]) / seg_len[i]
        poses.append((P[i, 0] + t * seg[i, 0], P[i, 1] + t * seg[i, 1], heads[i]))
        scenes.append(classes[i])

    s, i, p = 0.0, 0, 0
    emit(s, i)
    while s < total - 1e-12:
        while cum[i + 1] <= s + 1e-12 and i < len(seg) - 1:
            i += 1
        s_new = min(s + cfg.segment_profiles[classes[i]].v_ref * cfg.dt, total)
        if p < len(pivots) and s_new >= pivots[p][0] - 1e-12:
            s_corner, j, t = pivots[p]
            emit(s_corner, j)
            steps = max(1, int(math.ceil(abs(t) / (cfg.omega_max * cfg.dt) - 1e-9)))
            x, y = P[j + 1]
            cls = "left_bend" if t > 0 else "right_bend"
            for k in range(1, steps + 1):
                poses.append((x, y, wrap_angle(heads[j] + t * k / steps)))
                scenes.append(cls)
            s, i, p = s_corner, j + 1, p + 1
            continue
        s = s_new
        while cum[i + 1] < s - 1e-12 and i < len(seg) - 1:
            i += 1
        emit(s, i)
    arr = np.array(poses)
    step = np.hypot(*np.diff(arr[:, :2], axis=0).T) / cfg.dt
    return ReferenceTrajectory(arr, np.append(step, 0.0), tuple(scenes))


@dataclass
class TrackResult:
    trajectory: list[RobotState]
    controls: list[ControlInput]
    reference: ReferenceTrajectory
    ref_index: list[int]
    ape_rmse: float
    duration: float
    distance: float

    def rows(self, dt: float):
        """Trajectory log rows: t, x, y, theta, v, omega, ref pose, scene class."""
        for k, st in enumerate(self.trajectory):
            u = self.controls[k] if k < len(self.controls) else ControlInput(0.0, 0.0)
            j = self.ref_index[k]
            rp = self.reference.poses[j]
            yield (k * dt, st.x, st.y, st.theta, u.v, u.omega, rp[0], rp[1], rp[2], self.reference.scene_class[j])


TRAJECTORY_HEADER = ("t", "x", "y", "theta", "v", "omega", "ref_x", "ref_y", "ref_theta", "scene_class")


def track_path(
    layout_path: np.ndarray,
    x0: RobotState,
    cfg: MpcConfig | None = None,
    settle_steps: int = 30,
    settle_tol: float = 0.02,
) -> TrackResult:
    """Closed-loop receding-horizon tracking of a polyline from ``x0``."""
    from .metrics import ape_rmse

    cfg = cfg or MpcConfig()
    path = np.asarray(layout_path, dtype=float)
    if path.size == 0:
        raise ValueError("empty path")
    ref = build_reference(path, cfg)
    if len(ref) == 1:
        ref = ReferenceTrajectory(np.array([[*ref.poses[0, :2], x0.theta]]), [0.0], ref.scene_class)
    state = x0
    traj, controls, idx = [x0], [], [0]
    U = None
    u_prev = (0.0, 0.0)
    M = len(ref)
    k = 0
    extra = 0
    while k < M - 1 or extra < settle_steps:
        if k >= M - 1:
            if math.dist((state.x, state.y), ref.poses[-1, :2]) < settle_tol:
                break
            extra += 1
        win = ref.window(k, cfg.N)
        warm = None if U is None else np.vstack([U[1:], U[-1:]])
        sol = solve_mpc(state, win, cfg, u_init=warm, u_prev=u_prev)
        U = sol.controls
        u = sol.u0
        state = step_dynamics(state, u, cfg.dt)
        k += 1
        j = min(k, M - 1)
        err = math.dist((state.x, state.y), ref.poses[j, :2])
        if err > cfg.divergence_limit:
            raise TrackingDiverged(f"position error {err:.2f} m at step {k} exceeds {cfg.divergence_limit} m")
        traj.append(state)
        controls.append(u)
        idx.append(j)
        u_prev = (u.v, u.omega)
    xy = np.array([(s.x, s.y) for s in traj])
    distance = float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if len(xy) > 1 else 0.0
    return TrackResult(
        traj,
        controls,
        ref,
        idx,
        ape_rmse(xy, ref.poses[:, :2]),
        (len(traj) - 1) * cfg.dt,
        distance,
    )


def profile_time(points: np.ndarray, cfg: MpcConfig | None = None, pivot_angle: float = PIVOT_ANGLE) -> float:
    """Traversal time of a polyline at the controller's speed profile.

    Edges are driven at the reference speed of their scene class and corners
    sharper than ``pivot_angle`` cost a rotation on the spot at omega_max.
    """
    cfg = cfg or MpcConfig()
    P = _clean_polyline(points)
    if len(P) < 2:
        return 0.0
    classes, turn = edge_classes(P, pivot_angle)
    L = np.hypot(*np.diff(P, axis=0).T)
    v = np.array([cfg.segment_profiles[c].v_ref for c in classes])
    pivot = np.abs(turn[np.abs(turn) > pivot_angle])
    return float(np.sum(L / v) + np.sum(pivot) / cfg.omega_max)
