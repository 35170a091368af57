"""Command line entry point.

Exit codes: 0 success, 2 validation failure, 3 divergence.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path


EXIT_OK, EXIT_INVALID, EXIT_DIVERGED = 0, 2, 3


def _scenario(path):
    from .scenario import load_scenario
    return load_scenario(path)


def cmd_scenario_gen(a) -> None:
    from .scenario import ScenarioConfig, make_scenario, save_scenario
    scn = make_scenario(ScenarioConfig(seed=a.seed))
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenario(out, scn)
    print(f"wrote {out} ({scn.num_frames} frames)")


def cmd_targets_extract(a) -> None:
    from .config import load_config
    from .targets import synth_reference
    scn, cfg = _scenario(a.scenario), load_config(a.config)
    tgt = synth_reference(scn, cfg.noise, a.seed)
    tgt.save(a.out)
    print(f"wrote {a.out}: {tgt.num_frames} frames, contact frames per hand {tgt.contact.sum(0).tolist()}")


def cmd_align_run(a) -> None:
    from .alignment import AlignmentProblem, align, interacting_part_joints
    from .config import load_config
    from .targets import HybridTarget
    scn, cfg = _scenario(a.scenario), load_config(a.config)
    tgt = HybridTarget.load(a.target)
    problem = AlignmentProblem.from_target(tgt, scn.skeleton, scn.object_vertices()[0],
                                           interacting_part_joints(scn.skeleton, tgt.contact))
    res = align(problem, cfg.alignment)
    tgt.local_rotations = res.local_rotations
    tgt.joint_positions = res.joint_positions
    tgt.save(a.out)
    if a.trace:
        res.write_trace(a.trace)
    print(f"L_total {res.initial_total:.6g} -> {res.final_total:.6g} (best iteration {res.best_iteration})")


def _setup(a):
    from .config import load_config
    from .rl.env import Reference
    from .targets import HybridTarget
    scn, cfg = _scenario(a.scenario), load_config(a.config)
    tgt = HybridTarget.load(a.target)
    world = scn.world()
    return scn, cfg, tgt, world, Reference.from_target(tgt, world, scn.box_vertices)


def cmd_train(a) -> None:
    from dataclasses import replace

    from .rl.trainer import train
    scn, cfg, tgt, world, ref = _setup(a)
    tc = cfg.trainer
    if a.seed is not None:
        tc = replace(tc, seed=a.seed)
    if a.steps is not None:
        tc = replace(tc, max_env_steps=a.steps)
    reward = cfg.reward
    if a.no_object_reward:
        reward = replace(reward, object_reward=False)

    def progress(row, _agent):
        if not a.quiet:
            print(f"update {row[0]} steps {row[1]} reward {row[2]:.4f}", flush=True)
    _, rows = train(world, ref, tc, reward, checkpoint=a.out, log_path=a.log, progress=progress)
    print(f"wrote {a.out} after {len(rows)} updates")


def cmd_eval(a) -> None:
    from .metrics import GroundTruth, compute_metrics
    from .rl.trainer import load_checkpoint, rollout_policy
    scn, cfg, tgt, world, ref = _setup(a)
    agent, _ = load_checkpoint(a.checkpoint)
    traj = rollout_policy(agent, world, ref, cfg.trainer.horizon, cfg.reward)
    report = compute_metrics(traj, GroundTruth.from_scenario(scn, tgt.contact))
    report.save(a.out)
    if a.trajectory:
        traj.save(a.trajectory)
    print(f"MPJPE {report.mpjpe_all:.1f} mm, T_obj {report.t_obj:.1f} mm, success {report.success}")


def cmd_metrics_export(a) -> None:
    from .metrics import MetricsReport, export_reports
    reports = {Path(p).stem: MetricsReport.load(p) for p in a.reports}
    export_reports(a.out, reports)
    print(f"wrote {a.out} ({len(reports)} rows)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridmimic", description="Desk-scale hybrid motion imitation.")
    sub = p.add_subparsers(dest="group", required=True)

    sc = sub.add_parser("scenario").add_subparsers(dest="cmd", required=True)
    g = sc.add_parser("gen", help="write the scripted desk scenario")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="scenario.yaml")
    g.set_defaults(fn=cmd_scenario_gen)

    tg = sub.add_parser("targets").add_subparsers(dest="cmd", required=True)
    e = tg.add_parser("extract", help="synthesise a hybrid target from a scenario")
    e.add_argument("--scenario", required=True)
    e.add_argument("--config", default="desk")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", default="target.txt")
    e.set_defaults(fn=cmd_targets_extract)

    al = sub.add_parser("align").add_subparsers(dest="cmd", required=True)
    r = al.add_parser("run", help="visual HOI alignment of a target")
    r.add_argument("--scenario", required=True)
    r.add_argument("--target", required=True)
    r.add_argument("--config", default="desk")
    r.add_argument("--out", default="aligned.txt")
    r.add_argument("--trace")
    r.set_defaults(fn=cmd_align_run)

    t = sub.add_parser("train", help="PPO training against a target")
    t.add_argument("--scenario", required=True)
    t.add_argument("--target", required=True)
    t.add_argument("--config", default="desk")
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int, help="override the env-step budget")
    t.add_argument("--no-object-reward", action="store_true", help="drop the 2D object reward (ablation)")
    t.add_argument("--out", default="policy.ckpt")
    t.add_argument("--log", default="train_log.csv")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(fn=cmd_train)

    ev = sub.add_parser("eval", help="roll out a checkpoint and report metrics")
    ev.add_argument("--scenario", required=True)
    ev.add_argument("--target", required=True)
    ev.add_argument("--config", default="desk")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--out", default="metrics.txt")
    ev.add_argument("--trajectory")
    ev.set_defaults(fn=cmd_eval)

    me = sub.add_parser("metrics").add_subparsers(dest="cmd", required=True)
    x = me.add_parser("export", help="merge metric reports into one CSV")
    x.add_argument("reports", nargs="+")
    x.add_argument("--out", default="metrics.csv")
    x.set_defaults(fn=cmd_metrics_export)
    return p


def main(argv=None) -> int:
    from .alignment import NonFiniteLoss
    from .rl.env import SimDiverged
    from .rl.ppo import NonFinite
    from .rl.trainer import DivergedTraining
    from .sim import NonFiniteState

    args = build_parser().parse_args(argv)
    try:
        args.fn(args)
    except (DivergedTraining, SimDiverged, NonFiniteLoss, NonFinite, NonFiniteState) as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, KeyError, FileNotFoundError, OSError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
