"""Contact-phase adaptation: residual grasp optimization around a fixed plan.

The primary trajectory gets the hand near the object but was fit purely
kinematically, so it routinely hovers or collides instead of grasping. This
module wraps the simulator in a small episodic environment whose action is a
bounded residual on the primary per-step joint targets, with a staged reward
(approach, then enclosing grasp, then lift-and-place) and an automatically
derived episode window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .demo import ContactSet, DemoSequence
from .geometry import Pose6, geodesic_angle
from .hand import HandModel
from .retarget import ControlPlan
from .simworld import ReplayStep, SimDivergenceError, SimWorld

DELTA_MAX = 0.2  # residual clamp, normalized units
WRIST_RHO_DEFAULT = (0.05, 0.05, 0.05, 0.3, 0.3, 0.3)
GRACE_STEPS = 60
GOAL_DEVIATION = 0.1  # m; object displacement that marks the manipulation goal
SUCCESS_RADIUS = 0.05  # m at the horizon
DIVERGENCE_PENALTY = -10.0


class AdaptError(ValueError):
    pass


@dataclass(frozen=True)
class RewardConstants:
    epsilon: float = 0.06  # contact-enclosure distance bound
    phi: float = 0.002  # surface proximity that counts as touching
    alpha: tuple[float, float, float] = (10.0, 10.0, 20.0)
    grasp_weights: tuple[float, float] = (0.5, 0.5)


@dataclass(frozen=True)
class MappedContact:
    finger: int  # robot fingertip index
    point_obj: np.ndarray  # contact point in the object frame


def map_contacts(contacts: ContactSet, model: HandModel) -> list[MappedContact]:
    """Resolve recorded contacts onto robot fingertips via the correspondence.

    Human fingers without a counterpart on this hand are dropped; at least one
    contact must survive.
    """
    mapped = []
    for fid, point in zip(contacts.finger_ids, contacts.points):
        site = model.correspondence.get(int(fid))
        if site is None:
            continue
        mapped.append(MappedContact(model.fingertip_order[site], np.asarray(point, dtype=np.float64)))
    if not mapped:
        raise AdaptError("no recorded contact maps onto this hand's fingertips")
    return mapped


# -- action rescaling ------------------------------------------------------------


class ActionRescaler:
    """Maps normalized actions in [-1, 1]^D to joint-space PD targets.

    Wrist coordinates (the first six joints of a floating-base hand) are
    offsets around the current primary target with per-axis half-ranges rho;
    finger coordinates map affinely onto their joint limits. Residuals are
    added in the normalized box, clipped there, then decoded, so executed
    targets can never leave the box no matter what the policy outputs.
    """

    def __init__(self, model: HandModel, wrist_rho=None, delta_max: float = DELTA_MAX):
        self.model = model
        self.n_wrist = 6 if model.floating_base else 0
        rho = np.asarray(
            wrist_rho if wrist_rho is not None else WRIST_RHO_DEFAULT, dtype=np.float64
        )
        if self.n_wrist and rho.shape != (6,):
            raise AdaptError("wrist_rho must have six entries")
        if self.n_wrist and np.any(rho <= 0):
            raise AdaptError("wrist_rho entries must be positive")
        self.rho = rho
        if delta_max <= 0:
            raise AdaptError("delta_max must be positive")
        self.delta_max = float(delta_max)
        self.lo = model.limits_lo.copy()
        self.hi = model.limits_hi.copy()
        self._f = slice(self.n_wrist, model.dof)

    def encode(self, targets: np.ndarray, base: np.ndarray) -> np.ndarray:
        targets = np.asarray(targets, dtype=np.float64)
        base = np.asarray(base, dtype=np.float64)
        a = np.empty_like(targets)
        w = self.n_wrist
        if w:
            a[:w] = (targets[:w] - base[:w]) / self.rho
        lo, hi = self.lo[self._f], self.hi[self._f]
        a[self._f] = 2.0 * (targets[self._f] - lo) / (hi - lo) - 1.0
        return a

    def decode(self, a: np.ndarray, base: np.ndarray) -> np.ndarray:
        a = np.clip(np.asarray(a, dtype=np.float64), -1.0, 1.0)
        base = np.asarray(base, dtype=np.float64)
        out = np.empty_like(a)
        w = self.n_wrist
        if w:
            out[:w] = base[:w] + a[:w] * self.rho
        lo, hi = self.lo[self._f], self.hi[self._f]
        out[self._f] = lo + 0.5 * (a[self._f] + 1.0) * (hi - lo)
        return np.clip(out, self.lo, self.hi)

    def residual(self, base: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """Executed target for a residual action around the primary target."""
        delta = np.clip(np.asarray(delta, dtype=np.float64), -self.delta_max, self.delta_max)
        a = np.clip(self.encode(base, base) + delta, -1.0, 1.0)
        return self.decode(a, base)


# -- episode construction ---------------------------------------------------------


@dataclass
class EpisodeSpec:
    pregrasp_step: int
    goal_step: int
    horizon: int  # absolute control step at which the episode ends
    target_pose: Pose6  # recorded object pose at the horizon
    success_radius: float = SUCCESS_RADIUS
    warnings: list[str] = field(default_factory=list)

    @property
    def length(self) -> int:
        return self.horizon - self.pregrasp_step


def find_goal_frame(demo: DemoSequence, deviation: float = GOAL_DEVIATION) -> tuple[int, list[str]]:
    """First recorded frame whose object position left the start by `deviation`."""
    pos = demo.object_positions()
    dist = np.linalg.norm(pos - pos[0], axis=1)
    idx = np.nonzero(dist >= deviation)[0]
    if idx.size:
        return int(idx[0]), []
    far = int(np.argmax(dist))
    return far, [
        f"object never moves {deviation:.3f} m from its start; using peak deviation frame {far}"
    ]


def select_pregrasp(
    records: list[ReplayStep],
    mapped: list[MappedContact],
    limit: int,
    guide_finger: int = 0,
    mode: str = "nearest",
    threshold: float | None = None,
) -> tuple[int, list[str]]:
    """Pick the episode start among contact-free steps of the primary replay.

    The guide fingertip (by default the first, the opposing digit) is measured
    against its own recorded contact point, carried along with the replayed
    object pose.
    """
    guide_points = [c.point_obj for c in mapped if c.finger == guide_finger]
    if not guide_points:
        raise AdaptError(f"guide finger {guide_finger} has no recorded contact")
    point_obj = guide_points[0]
    limit = min(limit, len(records))
    best, best_d = None, math.inf
    warnings: list[str] = []
    for t in range(limit):
        rec = records[t]
        if rec.contact:
            continue
        c_world = rec.object_pose.apply(point_obj)
        d = float(np.linalg.norm(rec.fingertips[guide_finger] - c_world))
        if mode == "threshold" and threshold is not None and d <= threshold:
            return t, warnings
        # strict improvement beyond a micron: on plateaus of near-equal
        # distance keep the earliest step, leaving settle time before motion
        if d < best_d - 1e-6:
            best, best_d = t, d
    if best is None:
        raise AdaptError("no contact-free step available for pregrasp selection")
    if mode == "threshold" and threshold is not None:
        warnings.append(
            f"no contact-free step within threshold {threshold:.3f} m; "
            f"falling back to nearest (step {best}, {best_d:.3f} m)"
        )
    elif mode not in ("nearest", "threshold"):
        raise AdaptError(f"unknown pregrasp mode '{mode}'")
    return best, warnings


def build_episode(
    demo: DemoSequence,
    plan: ControlPlan,
    records: list[ReplayStep],
    mapped: list[MappedContact],
    guide_finger: int = 0,
    mode: str = "nearest",
    threshold: float | None = None,
    grace_steps: int = GRACE_STEPS,
    goal_deviation: float = GOAL_DEVIATION,
    success_radius: float = SUCCESS_RADIUS,
) -> EpisodeSpec:
    warnings: list[str] = []
    goal_frame, w = find_goal_frame(demo, goal_deviation)
    warnings += w
    scale = plan.frequency / demo.fps
    goal_step = int(round(goal_frame * scale))
    pregrasp, w = select_pregrasp(
        records, mapped, limit=max(goal_step, 1), guide_finger=guide_finger,
        mode=mode, threshold=threshold,
    )
    warnings += w
    if pregrasp >= goal_step:
        raise AdaptError(f"pregrasp step {pregrasp} does not precede the goal step {goal_step}")
    horizon = goal_step + grace_steps
    n_steps = plan.a_primary.shape[0]
    if horizon > n_steps:
        warnings.append(
            f"horizon {horizon} exceeds the {n_steps}-step plan; holding the final target"
        )
    target_frame = min(int(round(horizon / scale)), demo.length - 1)
    target_pose = demo.object_poses[target_frame]
    return EpisodeSpec(
        pregrasp_step=pregrasp,
        goal_step=goal_step,
        horizon=horizon,
        target_pose=target_pose,
        success_radius=success_radius,
        warnings=warnings,
    )


# -- reward ---------------------------------------------------------------------


def compute_reward(
    q: np.ndarray,
    q_target: np.ndarray,
    fingertips: np.ndarray,
    distal_distances: np.ndarray,
    object_pose: Pose6,
    object_z0: float,
    target_pose: Pose6,
    mapped: list[MappedContact],
    consts: RewardConstants,
    d_closest: float | None,
) -> tuple[float, dict[str, float], float]:
    """Staged grasp reward; returns (total, components, updated d_closest).

    d_closest is the running minimum of the summed fingertip-to-contact
    distance, initialized on the first call of an episode (pass None).
    """
    d_sum = 0.0
    enclosed = True
    for c in mapped:
        c_world = object_pose.apply(c.point_obj)
        d = float(np.linalg.norm(fingertips[c.finger] - c_world))
        d_sum += d
        if d > consts.epsilon:
            enclosed = False
    if d_closest is None:
        d_closest = d_sum
    r_approach = max(d_closest - d_sum, 0.0)
    d_closest = min(d_closest, d_sum)

    touching = distal_distances <= consts.phi
    r_con = float(np.count_nonzero(touching))
    nq = float(np.linalg.norm(q))
    nt = float(np.linalg.norm(q_target))
    r_sim = float(q @ q_target / (nq * nt)) if nq > 1e-12 and nt > 1e-12 else 0.0
    w_con, w_sim = consts.grasp_weights
    r_grasp = w_con * r_con + w_sim * r_sim

    hold = bool(touching[0]) and bool(np.any(touching[1:]))
    h = float(object_pose.pos[2] - object_z0)
    if h <= 0.02:
        r_lift = min(2.0, 100.0 * h)
    else:
        ang = geodesic_angle(object_pose.rot, target_pose.rot)
        dist = float(np.linalg.norm(object_pose.pos - target_pose.pos))
        r_lift = 15.0 - min(5.0, 10.0 * ang) - min(5.0, 50.0 * dist)

    a0, a1, a2 = consts.alpha
    total = a0 * r_approach + (a1 * r_grasp if enclosed else 0.0) + (a2 * r_lift if hold else 0.0)
    components = {
        "r_approach": r_approach,
        "r_con": r_con,
        "r_sim": r_sim,
        "r_grasp": r_grasp,
        "r_lift": r_lift,
        "enclosed": float(enclosed),
        "hold": float(hold),
        "d_sum": d_sum,
    }
    return total, components, d_closest


# -- environment -------------------------------------------------------------------


class GraspEnv:
    """Episodic residual-control environment over a prepared simulation state.

    `world_at_pregrasp` must already sit at the episode's first step (the
    pre-episode prefix of the plan replayed once, outside); every reset clones
    it, so resets are cheap and bitwise repeatable.
    """

    def __init__(
        self,
        world_at_pregrasp: SimWorld,
        plan: ControlPlan,
        episode: EpisodeSpec,
        mapped: list[MappedContact],
        rescaler: ActionRescaler,
        consts: RewardConstants = RewardConstants(),
    ):
        self._proto = world_at_pregrasp
        self.plan = plan
        self.episode = episode
        self.mapped = mapped
        self.rescaler = rescaler
        self.consts = consts
        self.model = world_at_pregrasp.model
        n = plan.a_primary.shape[0]
        if episode.horizon > n:
            pad = np.repeat(plan.a_primary[-1:], episode.horizon - n, axis=0)
            self._targets = np.vstack([plan.a_primary, pad])
        else:
            self._targets = plan.a_primary
        self.dim_act = self.model.dof
        self.world: SimWorld | None = None
        self._reset_probe()

    def _reset_probe(self):
        obs = self.reset()
        self.dim_obs = obs.shape[0]

    def reset(self) -> np.ndarray:
        self.world = self._proto.clone()
        self.t = self.episode.pregrasp_step
        self.d_closest: float | None = None
        self.object_z0 = float(self.world.object_pose().pos[2])
        self.diverged = False
        self.last_components: dict[str, float] = {}
        fk = self.model.fk(self.world.q)
        self._last_state = None
        return self._observe(
            self.world.q, self.world.qdot, self.world.object_pose(),
            np.zeros(3), np.zeros(3), self.model.fingertip_positions(fk),
        )

    def _observe(self, q, qdot, obj_pose, v, w, tips) -> np.ndarray:
        deltas = []
        for c in self.mapped:
            deltas.append(obj_pose.apply(c.point_obj) - tips[c.finger])
        frac = (self.t - self.episode.pregrasp_step) / max(self.episode.length, 1)
        return np.concatenate(
            [
                q,
                qdot,
                obj_pose.pos,
                obj_pose.rot.q,
                v,
                w,
                tips.ravel(),
                np.concatenate(deltas),
                obj_pose.pos - self.episode.target_pose.pos,
                [frac],
            ]
        )

    def step(self, action: np.ndarray) -> tuple[np.ndarray, float, bool, dict]:
        if self.world is None:
            raise AdaptError("step() before reset()")
        base = self._targets[self.t]
        executed = self.rescaler.residual(base, action)
        try:
            state = self.world.step(executed)
        except SimDivergenceError:
            self.diverged = True
            obs = np.zeros(self.dim_obs) if hasattr(self, "dim_obs") else None
            return obs, DIVERGENCE_PENALTY, True, {"diverged": True, "executed": executed}
        fk = self.model.fk(state.q)
        distal = np.array([d for _, d, _, _ in self.world.collision_query(fk)])
        reward, comps, self.d_closest = compute_reward(
            state.q,
            base,
            state.fingertips,
            distal,
            state.object_pose,
            self.object_z0,
            self.episode.target_pose,
            self.mapped,
            self.consts,
            self.d_closest,
        )
        self.last_components = comps
        self._last_state = state
        self.t += 1
        done = self.t >= self.episode.horizon
        obs = self._observe(
            state.q, state.qdot, state.object_pose, state.v, state.w, state.fingertips
        )
        info = {"components": comps, "executed": executed, "state": state}
        if done:
            info["success"] = self.success()
        return obs, reward, done, info

    def success(self) -> bool:
        if self.world is None or self.diverged:
            return False
        err = np.linalg.norm(self.world.object_pose().pos - self.episode.target_pose.pos)
        return bool(err <= self.episode.success_radius)
