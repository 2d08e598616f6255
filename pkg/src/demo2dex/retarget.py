"""Kinematic retargeting of recorded hand frames onto a robot hand.

Each recorded frame carries five fingertip positions and a palm normal; the
solver finds joint angles that place the robot's corresponding fingertips at
the recorded positions while aligning the palm plane and staying close to the
previous frame's solution:

    min over q of  w_f * sum_i ||tip_i(q) - target_i||^2
                 + w_o * angle(palm_normal(q), recorded_normal)^2
                 + w_s * ||q - q_prev||^2

The squared palm angle keeps the objective smooth at zero. Joint limits are
box constraints handled by the solver.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .geometry import unit_vector_angle
from .hand import FKResult, HandModel
from .spline import JerkMinSpline

HAND_FRAME_DIM = 18  # five fingertips (15) plus palm normal (3)
HUMAN_FINGERS = 5


class RetargetError(ValueError):
    pass


@dataclass(frozen=True)
class RetargetWeights:
    fingertip: float = 1.0
    palm: float = 0.1
    smooth: float = 0.05

    def __post_init__(self):
        if self.fingertip <= 0:
            raise RetargetError("fingertip weight must be positive")
        if self.palm < 0 or self.smooth < 0:
            raise RetargetError("palm and smoothness weights must be nonnegative")


@dataclass
class FrameResult:
    q: np.ndarray
    objective: float
    converged: bool
    mean_tip_error: float
    iterations: int


def split_hand_frame(h):
    """(fingertip positions (5, 3), palm normal (3,)) from one 18-vector."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (HAND_FRAME_DIM,):
        raise RetargetError(f"hand frame must have shape ({HAND_FRAME_DIM},), got {h.shape}")
    tips = h[:15].reshape(5, 3)
    normal = h[15:]
    n = np.linalg.norm(normal)
    if n < 1e-9:
        raise RetargetError("palm normal in hand frame is zero")
    return tips, normal / n


def _mapped_targets(model: HandModel, tips: np.ndarray):
    """Pairs of (fingertip site, target position) for fingers the hand maps."""
    out = []
    for finger, site in sorted(model.correspondence.items()):
        if finger < 0 or finger >= HUMAN_FINGERS:
            raise RetargetError(f"correspondence finger index {finger} out of range")
        out.append((site, tips[finger]))
    return out


def _objective_terms(model, q, targets, normal_h, q_prev, w):
    fkres = model.fk(q)
    grad = np.zeros(model.dof)
    e_f = 0.0
    tip_err = 0.0
    site_by_name = {s.name: s for s in model.fingertip_sites}
    for site_name, target in targets:
        site = site_by_name[site_name]
        p = fkres.site_pos[site_name]
        r = p - target
        e_f += float(r @ r)
        tip_err += float(np.linalg.norm(r))
        jac = model.point_jacobian(fkres, site.link, p)
        grad += 2.0 * w.fingertip * (jac.T @ r)
    e_o = 0.0
    if w.palm > 0.0:
        n_r, dn = model.palm_normal_jacobian(fkres)
        cos_t = float(np.clip(n_r @ normal_h, -1.0, 1.0))
        sin_t = float(np.linalg.norm(np.cross(n_r, normal_h)))
        theta = float(np.arctan2(sin_t, cos_t))
        e_o = theta * theta
        # d(theta^2)/dq = -2 (theta / sin theta) * d(cos theta)/dq, smooth at 0
        factor = theta / sin_t if sin_t > 1e-8 else 1.0
        grad += w.palm * (-2.0 * factor) * (dn.T @ normal_h)
    dq = q - q_prev
    e_s = float(dq @ dq)
    grad += 2.0 * w.smooth * dq
    f = w.fingertip * e_f + w.palm * e_o + w.smooth * e_s
    return f, grad, tip_err / max(len(targets), 1)


def retarget_frame(
    model: HandModel,
    h_frame,
    q_prev,
    weights: RetargetWeights = RetargetWeights(),
    max_iter: int = 200,
    grad_tol: float = 1e-8,
    restarts: int = 2,
    restart_threshold: float = 3e-3,
) -> FrameResult:
    """Solve one frame. `q_prev` is both the warm start and the smoothing anchor."""
    tips, normal_h = split_hand_frame(h_frame)
    q_prev = np.asarray(q_prev, dtype=np.float64)
    if q_prev.shape != (model.dof,):
        raise RetargetError(f"q_prev must have shape ({model.dof},)")
    targets = _mapped_targets(model, tips)
    bounds = list(zip(model.limits_lo, model.limits_hi))

    def fun(q):
        f, g, _ = _objective_terms(model, q, targets, normal_h, q_prev, weights)
        return f, g

    def solve_from(q0):
        res = minimize(
            fun,
            model.clamp(q0),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": max_iter, "ftol": 1e-16, "gtol": grad_tol, "maxfun": 4000},
        )
        _, _, tip_err = _objective_terms(model, res.x, targets, normal_h, q_prev, weights)
        return FrameResult(
            q=res.x,
            objective=float(res.fun),
            converged=bool(res.success) or res.status == 1,
            mean_tip_error=tip_err,
            iterations=int(res.nit),
        )

    best = solve_from(q_prev)
    attempt = 0
    while best.mean_tip_error > restart_threshold and attempt < restarts:
        # deterministic restart seeded by the target content and attempt index
        digest = hashlib.sha256(np.ascontiguousarray(h_frame).tobytes() + bytes([attempt])).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        q0 = model.limits_lo + rng.random(model.dof) * (model.limits_hi - model.limits_lo)
        cand = solve_from(q0)
        if cand.objective < best.objective:
            best = cand
        attempt += 1
    return best


@dataclass
class SequenceResult:
    q_path: np.ndarray  # (T, D)
    frame_results: list[FrameResult]
    warnings: list[str] = field(default_factory=list)


def retarget_sequence(
    model: HandModel,
    hand_frames,
    weights: RetargetWeights = RetargetWeights(),
    **frame_kwargs,
) -> SequenceResult:
    """Frame-by-frame solve with warm starting.

    The first frame starts from mid-range and has no predecessor, so its
    smoothness term is dropped; later frames anchor to the previous solution.
    """
    frames = np.asarray(hand_frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != HAND_FRAME_DIM:
        raise RetargetError(f"hand frames must have shape (T, {HAND_FRAME_DIM})")
    q_prev = model.mid_range()
    first = RetargetWeights(weights.fingertip, weights.palm, 0.0)
    q_path = np.empty((frames.shape[0], model.dof))
    results = []
    warnings = []
    for t in range(frames.shape[0]):
        w_t = first if t == 0 else weights
        res = retarget_frame(model, frames[t], q_prev, w_t, **frame_kwargs)
        if not res.converged:
            warnings.append(f"frame {t}: solver stopped before convergence")
        q_path[t] = res.q
        results.append(res)
        q_prev = res.q
    return SequenceResult(q_path=q_path, frame_results=results, warnings=warnings)


# -- control conversion -----------------------------------------------------------


@dataclass
class ActuatorModel:
    """Per-joint plant used to turn desired trajectories into PD position targets.

    The ideal massless plant (all zeros) needs no feedforward, so targets equal
    the sampled trajectory. With joint inertia/damping or gravity-loaded links,
    the inverse dynamics torque is folded into the target: a = q + tau_ff / kp.
    """

    kp: np.ndarray
    kd: np.ndarray
    inertia: float = 0.0
    damping: float = 0.0
    gravity: bool = False
    gravity_vec: tuple[float, float, float] = (0.0, 0.0, -9.81)

    def feedforward(self, model: HandModel, q, qd, qdd) -> np.ndarray:
        tau = self.inertia * qdd + self.damping * qd
        if self.gravity:
            # the actuator cancels what gravity exerts, hence the sign
            tau = tau - model.gravity_torques(model.fk(q), self.gravity_vec)
        return tau


def fit_smooth_trajectory(q_path: np.ndarray, fps: float) -> JerkMinSpline:
    q_path = np.asarray(q_path, dtype=np.float64)
    if q_path.ndim != 2 or q_path.shape[0] < 4:
        raise RetargetError("need at least four frames to fit a trajectory")
    if fps <= 0:
        raise RetargetError("fps must be positive")
    times = np.arange(q_path.shape[0]) / fps
    return JerkMinSpline.fit(times, q_path)


def to_control_sequence(
    spline: JerkMinSpline,
    model: HandModel,
    plant: ActuatorModel,
    frequency: float,
) -> np.ndarray:
    """Sample the trajectory at `frequency` Hz and convert to PD position targets."""
    if frequency <= 0:
        raise RetargetError("control frequency must be positive")
    kp = np.asarray(plant.kp, dtype=np.float64)
    if np.any(kp <= 0):
        raise RetargetError("actuator kp must be positive for target conversion")
    t0, t1 = spline.times[0], spline.times[-1]
    n = int(round((t1 - t0) * frequency)) + 1
    ts = t0 + np.arange(n) / frequency
    ts = np.minimum(ts, t1)
    q = spline.value(ts)
    qd = spline.velocity(ts)
    qdd = spline.acceleration(ts)
    a = np.empty_like(q)
    for k in range(n):
        tau = plant.feedforward(model, q[k], qd[k], qdd[k])
        a[k] = q[k] + tau / kp
    return np.clip(a, model.limits_lo, model.limits_hi)


@dataclass
class ControlPlan:
    """Retargeted joint path, its smooth interpolant, and the sampled controls."""

    q_path: np.ndarray  # (T, D) solver output at demo frames
    spline: JerkMinSpline
    a_primary: np.ndarray  # (S, D) PD position targets at the control rate
    frequency: float
    fps: float
    pt: list | None = None  # replayed primary trajectory, filled by the replay stage

    MAX_STEP = 0.5  # sup-norm bound on adjacent retargeted frames, rad or m

    def __post_init__(self):
        if self.q_path.ndim != 2:
            raise RetargetError("q_path must be (T, D)")
        dq = np.abs(np.diff(self.q_path, axis=0))
        if dq.size and float(dq.max()) > self.MAX_STEP:
            raise RetargetError(
                f"retargeted path jumps by {float(dq.max()):.3f} between frames; "
                f"exceeds the smoothing cap {self.MAX_STEP}"
            )

    def validate_limits(self, model: HandModel) -> None:
        if np.any(self.q_path < model.limits_lo - 1e-9) or np.any(
            self.q_path > model.limits_hi + 1e-9
        ):
            raise RetargetError("retargeted path violates joint limits")

    def to_dict(self) -> dict:
        return {
            "q_path": self.q_path.tolist(),
            "spline": self.spline.to_dict(),
            "a_primary": self.a_primary.tolist(),
            "frequency": self.frequency,
            "fps": self.fps,
        }

    @staticmethod
    def from_dict(data: dict) -> "ControlPlan":
        return ControlPlan(
            q_path=np.asarray(data["q_path"], dtype=np.float64),
            spline=JerkMinSpline.from_dict(data["spline"]),
            a_primary=np.asarray(data["a_primary"], dtype=np.float64),
            frequency=float(data["frequency"]),
            fps=float(data["fps"]),
        )
