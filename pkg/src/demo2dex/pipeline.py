"""End-to-end transfer: recording in, executable trajectory and scores out.

Stages: ingest -> retarget -> primary replay -> episode configuration ->
residual training (optional) -> deterministic grasp rollout -> wrist-attached
manipulation tracking -> metrics. Every stage is deterministic for a given
(config, seed), all artifacts are canonical JSON, and a finished run is keyed
by a content hash so reruns are free unless something actually changed.
"""
from __future__ import annotations

import concurrent.futures
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adapt import (
    ActionRescaler,
    GraspEnv,
    RewardConstants,
    build_episode,
    map_contacts,
)
from .demo import DemoSequence, extract_contacts, load_demo
from .geometry import Pose6, Rotation3
from .hand import HandModel, load_hand
from .jsonio import canonical_dumps, dump_json, load_json, sha256_file, sha256_of
from .metrics import (
    MetricReport,
    align_reference,
    encode_semantics,
    ep_er,
    resample_to_frames,
    sr_grasp,
    tsr,
)
from .ppo import TrainConfig, train_residual_policy
from .retarget import (
    ActuatorModel,
    ControlPlan,
    RetargetWeights,
    fit_smooth_trajectory,
    retarget_sequence,
    to_control_sequence,
)
from .simworld import SimConfig, SimWorld, default_gains, replay
from .synthetic import asset_path
from .wrist import WristPlanError, plan_wrist, track_manipulation

VERSION = "0.1.0"
log = logging.getLogger("demo2dex")


class PipelineError(RuntimeError):
    pass


def resolve_hand(spec) -> tuple[HandModel, Path]:
    p = Path(spec)
    if not p.exists():
        p = asset_path("hands", f"{spec}.json")
    if not p.exists():
        raise PipelineError(f"hand '{spec}' is neither a file nor a bundled model")
    return load_hand(p), p


def resolve_demo(spec) -> tuple[DemoSequence, Path]:
    p = Path(spec)
    if not p.exists():
        p = asset_path("demos", f"{spec}.json")
    if not p.exists():
        raise PipelineError(f"recording '{spec}' is neither a file nor a bundled demo")
    return load_demo(p), p


def resolve_config(spec) -> dict:
    p = Path(spec)
    if not p.exists():
        p = asset_path("configs", f"{spec}.json")
    if not p.exists():
        raise PipelineError(f"config '{spec}' is neither a file nor a bundled config")
    return load_json(p)


def sim_config_from(d: dict, model: HandModel) -> SimConfig:
    cfg = SimConfig(**{k: v for k, v in d.items()})
    if cfg.kp is None or cfg.kd is None:
        kp, kd = default_gains(model)
        cfg.kp = kp if cfg.kp is None else np.asarray(cfg.kp, dtype=np.float64)
        cfg.kd = kd if cfg.kd is None else np.asarray(cfg.kd, dtype=np.float64)
    return cfg


@dataclass
class RunResult:
    run_dir: Path
    key: str
    metrics: MetricReport
    grasp_success: bool
    cached: bool
    warnings: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        d = self.metrics.to_dict()
        d["grasp_success"] = self.grasp_success
        return d


def _pose_row(p: Pose6) -> list[float]:
    return [*p.pos.tolist(), *p.rot.q.tolist()]


def _pose_from_row(row) -> Pose6:
    return Pose6(np.asarray(row[:3], dtype=np.float64), Rotation3(np.asarray(row[3:7])))


def _policy_rollout(env: GraspEnv, policy_fn):
    """Deterministic episode; returns (states, executed controls, success, diverged)."""
    obs = env.reset()
    states, executed = [], []
    done = False
    while not done:
        obs, _, done, info = env.step(policy_fn(obs))
        if info.get("diverged"):
            return states, executed, False, True
        states.append(info["state"])
        executed.append(info["executed"])
    return states, executed, env.success(), False


def _compute_report(
    full_poses: list[Pose6],
    grasp_positions: np.ndarray,
    target_pos: np.ndarray,
    dropped: bool,
    diverged: bool,
    demo: DemoSequence,
    frequency: float,
    m_cfg: dict,
) -> MetricReport:
    ref = align_reference(demo.object_poses, demo.fps, len(full_poses), frequency)
    ep, er = ep_er(full_poses, ref)
    held = sr_grasp(
        grasp_positions,
        target_pos,
        radius=float(m_cfg.get("success_radius", 0.05)),
        hold_steps=int(m_cfg.get("hold_steps", 60)),
    )
    follow = (not dropped) and (not diverged)
    s_exec = encode_semantics(resample_to_frames(full_poses, frequency, demo.fps, demo.length))
    s_demo = encode_semantics(demo.object_poses)
    score, sem_ok = tsr(s_exec, s_demo, threshold=float(m_cfg.get("tsr_threshold", 0.3)))
    return MetricReport(
        ep=ep,
        er_deg=er,
        sr_grasp=held,
        sr_follow=follow,
        tsr_score=score,
        tsr_success=sem_ok,
        semantics_executed=s_exec,
        semantics_recorded=s_demo,
    )


def run_transfer(
    config: dict,
    out_dir,
    seed: int | None = None,
    no_rl: bool = False,
    force: bool = False,
) -> RunResult:
    cfg = dict(config)
    seed = int(cfg.get("seed", 0)) if seed is None else int(seed)
    model, hand_path = resolve_hand(cfg["hand"])
    demo, demo_path = resolve_demo(cfg["demo"])
    hand_sha = sha256_file(hand_path)
    demo_sha = sha256_file(demo_path)
    key = sha256_of(
        {
            "config": cfg,
            "hand_sha": hand_sha,
            "demo_sha": demo_sha,
            "seed": seed,
            "no_rl": no_rl,
            "version": VERSION,
        }
    )
    name = cfg.get("name", "run")
    run_dir = Path(out_dir) / f"{name}-seed{seed}{'-norl' if no_rl else ''}"
    manifest_path = run_dir / "manifest.json"
    metrics_path = run_dir / "metrics.json"
    if not force and manifest_path.exists() and metrics_path.exists():
        manifest = load_json(manifest_path)
        if manifest.get("key") == key:
            stored = load_json(metrics_path)
            report = MetricReport.from_dict(stored["metrics"])
            log.info("%s: cached (key %s)", run_dir.name, key[:12])
            return RunResult(
                run_dir=run_dir,
                key=key,
                metrics=report,
                grasp_success=bool(stored["grasp_success"]),
                cached=True,
                warnings=list(stored.get("warnings", [])),
            )
    run_dir.mkdir(parents=True, exist_ok=True)
    warnings: list[str] = []

    # -- retarget ------------------------------------------------------------
    t0 = time.perf_counter()
    r_cfg = cfg.get("retarget", {})
    weights = RetargetWeights(
        fingertip=float(r_cfg.get("fingertip_weight", 1.0)),
        palm=float(r_cfg.get("palm_weight", 0.1)),
        smooth=float(r_cfg.get("smooth_weight", 0.05)),
    )
    seq = retarget_sequence(model, demo.hand, weights)
    warnings += seq.warnings
    spline = fit_smooth_trajectory(seq.q_path, demo.fps)
    frequency = float(cfg.get("control_frequency", demo.fps))
    kp, kd = default_gains(model)
    sim_over = dict(cfg.get("sim", {}))
    plant = ActuatorModel(kp=np.asarray(sim_over.get("kp", kp)), kd=np.asarray(sim_over.get("kd", kd)))
    a_primary = to_control_sequence(spline, model, plant, frequency)
    plan = ControlPlan(
        q_path=seq.q_path, spline=spline, a_primary=a_primary, frequency=frequency, fps=demo.fps
    )
    plan.validate_limits(model)
    mean_tip = float(np.mean([fr.mean_tip_error for fr in seq.frame_results]))
    log.info(
        "%s: retargeted %d frames (mean tip error %.2f mm) in %.1fs",
        run_dir.name, demo.length, 1e3 * mean_tip, time.perf_counter() - t0,
    )

    # -- contacts and primary replay ----------------------------------------
    t0 = time.perf_counter()
    contacts = extract_contacts(demo)
    mapped = map_contacts(contacts, model)
    sim_cfg = sim_config_from(sim_over, model)
    q0 = plan.q_path[0]
    obj0 = demo.object_poses[0]
    world = SimWorld(model, demo.geometry, sim_cfg, q0, obj0)
    records = replay(world, plan.a_primary)
    plan.pt = records

    # -- episode configuration -------------------------------------------------
    p_cfg = cfg.get("pregrasp", {})
    e_cfg = cfg.get("episode", {})
    episode = build_episode(
        demo,
        plan,
        records,
        mapped,
        guide_finger=int(p_cfg.get("guide_finger", 0)),
        mode=p_cfg.get("mode", "nearest"),
        threshold=p_cfg.get("threshold"),
        grace_steps=int(e_cfg.get("grace_steps", 60)),
        goal_deviation=float(e_cfg.get("goal_deviation", 0.1)),
        success_radius=float(e_cfg.get("success_radius", 0.05)),
    )
    warnings += episode.warnings
    log.info(
        "%s: episode steps [%d, %d) around goal %d (replayed in %.1fs)",
        run_dir.name, episode.pregrasp_step, episode.horizon, episode.goal_step,
        time.perf_counter() - t0,
    )

    # -- environment at the pregrasp state -------------------------------------
    world_pre = SimWorld(model, demo.geometry, sim_cfg, q0, obj0)
    for t in range(episode.pregrasp_step):
        world_pre.step(plan.a_primary[t])
    rs_cfg = cfg.get("rescale", {})
    rescaler = ActionRescaler(
        model,
        wrist_rho=rs_cfg.get("wrist_rho"),
        delta_max=float(rs_cfg.get("delta_max", 0.2)),
    )
    rw_cfg = cfg.get("reward", {})
    consts = RewardConstants(
        epsilon=float(rw_cfg.get("epsilon", 0.06)),
        phi=float(rw_cfg.get("phi", 0.002)),
        alpha=tuple(rw_cfg.get("alpha", (10.0, 10.0, 20.0))),
        grasp_weights=tuple(rw_cfg.get("grasp_weights", (0.5, 0.5))),
    )
    env = GraspEnv(world_pre, plan, episode, mapped, rescaler, consts)

    # -- residual training -------------------------------------------------------
    train_result = None
    if no_rl:
        zero = np.zeros(env.dim_act)
        policy_fn = lambda obs: zero
    else:
        t0 = time.perf_counter()
        tr_cfg = TrainConfig.from_dict(cfg.get("rl", {}))
        train_result = train_residual_policy(env, tr_cfg, seed)
        policy_fn = lambda obs: train_result.policy.mean(train_result.obs_norm.normalize(obs))
        log.info(
            "%s: trained %d updates / %d env steps in %.1fs (early stop: %s)",
            run_dir.name, train_result.updates, train_result.env_steps,
            time.perf_counter() - t0, train_result.stopped_early,
        )

    # -- deterministic grasp rollout -----------------------------------------------
    states, executed, grasp_ok, diverged = _policy_rollout(env, policy_fn)
    if diverged:
        warnings.append("grasp rollout diverged; scoring the partial trajectory")

    full_poses: list[Pose6] = [obj0]
    contact_flags: list[bool] = [False]
    for t in range(episode.pregrasp_step):
        full_poses.append(records[t].object_pose)
        contact_flags.append(records[t].contact)
    prefix_len = len(full_poses)
    for s in states:
        full_poses.append(s.object_pose)
        contact_flags.append(s.hand_contact)
    grasp_len = len(states)

    # -- manipulation phase -----------------------------------------------------
    dropped = True
    track = None
    manip_len = 0
    if states and not diverged:
        q_end = states[-1].q
        t_grasp = model.wrist_pose(model.fk(q_end))
        o_grasp = states[-1].object_pose
        try:
            mplan = plan_wrist(
                model, demo, t_grasp, o_grasp, executed[-1], episode.horizon, frequency
            )
            warnings += mplan.warnings
            track = track_manipulation(
                env.world, mplan, drop_steps=int(cfg.get("metrics", {}).get("drop_steps", 30))
            )
            dropped = track.dropped
            for r in track.records:
                full_poses.append(r.object_pose)
                contact_flags.append(r.contact)
            manip_len = len(track.records)
            if track.diverged:
                warnings.append("manipulation tracking diverged; trajectory truncated")
        except WristPlanError as exc:
            warnings.append(str(exc))
            dropped = False  # nothing left to carry, so nothing was dropped

    # -- metrics ------------------------------------------------------------------
    m_cfg = cfg.get("metrics", {})
    grasp_positions = np.array([s.object_pose.pos for s in states]).reshape(-1, 3)
    report = _compute_report(
        full_poses,
        grasp_positions,
        episode.target_pose.pos,
        dropped,
        diverged or (track.diverged if track else False),
        demo,
        frequency,
        m_cfg,
    )

    # -- artifacts ---------------------------------------------------------------
    dump_json(
        {
            "key": key,
            "version": VERSION,
            "seed": seed,
            "no_rl": no_rl,
            "config": cfg,
            "hand": {"source": str(hand_path), "sha256": hand_sha, "name": model.name},
            "demo": {"source": str(demo_path), "sha256": demo_sha, "frames": demo.length},
        },
        manifest_path,
    )
    dump_json(plan.to_dict(), run_dir / "plan.json")
    dump_json(
        {
            "pregrasp_step": episode.pregrasp_step,
            "goal_step": episode.goal_step,
            "horizon": episode.horizon,
            "target_pose": _pose_row(episode.target_pose),
            "success_radius": episode.success_radius,
            "contacts": [
                {"finger": c.finger, "point_obj": c.point_obj.tolist()} for c in mapped
            ],
            "warnings": episode.warnings,
        },
        run_dir / "episode.json",
    )
    if train_result is not None:
        with (run_dir / "training_log.jsonl").open("w") as fh:
            for row in train_result.log:
                fh.write(canonical_dumps(row) + "\n")
        dump_json(train_result.policy_dict(), run_dir / "policy.json")
    dump_json(
        {
            "frequency": frequency,
            "poses": [_pose_row(p) for p in full_poses],
            "contacts": contact_flags,
            "prefix_len": prefix_len,
            "grasp_len": grasp_len,
            "manip_len": manip_len,
            "dropped": dropped,
            "diverged": diverged or (track.diverged if track else False),
            "target_pos": episode.target_pose.pos.tolist(),
            "grasp_success": grasp_ok,
        },
        run_dir / "trajectory.json",
    )
    dump_json(
        {
            "key": key,
            "seed": seed,
            "no_rl": no_rl,
            "grasp_success": grasp_ok,
            "metrics": report.to_dict(),
            "warnings": warnings,
        },
        metrics_path,
    )
    log.info(
        "%s: grasp=%s follow=%s tsr=%.3f ep=%.3f er=%.1f",
        run_dir.name, grasp_ok, report.sr_follow, report.tsr_score, report.ep, report.er_deg,
    )
    return RunResult(
        run_dir=run_dir,
        key=key,
        metrics=report,
        grasp_success=grasp_ok,
        cached=False,
        warnings=warnings,
    )


def evaluate_run(run_dir) -> tuple[MetricReport, bool]:
    """Recompute metrics from stored artifacts and verify them against metrics.json.

    The recording is re-resolved and its content hash checked, so a tampered or
    stale run directory fails loudly instead of quietly re-reporting.
    """
    run_dir = Path(run_dir)
    manifest = load_json(run_dir / "manifest.json")
    demo_src = manifest["demo"]["source"]
    demo, demo_path = resolve_demo(demo_src)
    sha = sha256_file(demo_path)
    if sha != manifest["demo"]["sha256"]:
        raise PipelineError(
            f"recording at {demo_path} no longer matches the manifest hash"
        )
    traj = load_json(run_dir / "trajectory.json")
    full_poses = [_pose_from_row(r) for r in traj["poses"]]
    p, g = traj["prefix_len"], traj["grasp_len"]
    grasp_positions = np.array([po.pos for po in full_poses[p : p + g]]).reshape(-1, 3)
    report = _compute_report(
        full_poses,
        grasp_positions,
        np.asarray(traj["target_pos"], dtype=np.float64),
        bool(traj["dropped"]),
        bool(traj["diverged"]),
        demo,
        float(traj["frequency"]),
        manifest["config"].get("metrics", {}),
    )
    stored = load_json(run_dir / "metrics.json")
    verified = canonical_dumps(stored["metrics"]) == canonical_dumps(report.to_dict())
    return report, verified


# -- multi-seed sweeps ---------------------------------------------------------------


def _run_one(args) -> dict:
    config, out_dir, seed, no_rl, force = args
    res = run_transfer(config, out_dir, seed=seed, no_rl=no_rl, force=force)
    out = res.summary()
    out["seed"] = seed
    out["no_rl"] = no_rl
    out["run_dir"] = str(res.run_dir)
    out["cached"] = res.cached
    return out


def run_sweep(
    config: dict,
    out_dir,
    seeds: list[int],
    no_rl: bool = False,
    force: bool = False,
    workers: int = 1,
) -> list[dict]:
    jobs = [(config, out_dir, s, no_rl, force) for s in seeds]
    if workers <= 1 or len(jobs) == 1:
        return [_run_one(j) for j in jobs]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def aggregate(rows: list[dict]) -> dict:
    """Corpus-level summary over per-run metric rows."""
    if not rows:
        raise PipelineError("nothing to aggregate")
    n = len(rows)
    return {
        "runs": n,
        "sr_grasp": float(np.mean([r["sr_grasp"] for r in rows])),
        "sr_follow": float(np.mean([r["sr_follow"] for r in rows])),
        "tsr_success": float(np.mean([r["tsr_success"] for r in rows])),
        "grasp_success": float(np.mean([r["grasp_success"] for r in rows])),
        "mean_ep": float(np.mean([r["ep"] for r in rows])),
        "mean_er_deg": float(np.mean([r["er_deg"] for r in rows])),
        "mean_tsr_score": float(np.mean([r["tsr_score"] for r in rows])),
    }
