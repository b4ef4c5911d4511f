"""Command-line entry point: ``twin-ident <command> [options]``.

Exit codes: 0 success, 1 usage or input error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_from_dict, config_to_dict, load_config
from .dynamics import DivergenceError, simulate_episode
from .fileio import (FormatError, RunManifest, find_episodes, pd_from_dict, pd_to_dict, physics_from_dict,
                     physics_to_dict, read_episode, read_pgm, read_pose_trajectory, read_yaml,
                     write_episode, write_joint_trajectory, write_pgm, write_pose_trajectory, write_yaml)
from .geometry import MeshFormatError, Pose, PoseTrajectory, load_mesh, pose_errors, sample_surface, save_mesh
from .optimize import (JointRecord, ObjectObjective, OptimizationError, identify_object, identify_robot,
                       robot_records_loss, sensitivity)
from .synth import synthesize
from .viewpoint import (CameraIntrinsics, SilhouetteMask, ViewpointObjective, align_viewpoint,
                        default_delta_bounds, delta_between, render_silhouette)

CM = 100.0  # report unit


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# --------------------------------------------------------------------------
# shared helpers
# --------------------------------------------------------------------------


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    return config_from_dict(config_to_dict(cfg))


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(args, cfg: RunConfig, out: Path, inputs, outputs, seeds: Optional[dict] = None) -> None:
    snapshot = out / "config.yaml"
    write_yaml(config_to_dict(cfg), snapshot)
    outputs = [Path(p) for p in outputs] + [snapshot]
    manifest = RunManifest.create(args.command, config_to_dict(cfg), seeds or {"seed": cfg.seed},
                                  __version__, inputs, outputs)
    manifest.write(out / "manifest.json")


def _episodes(paths: Sequence[str]):
    dirs = []
    for p in paths:
        if not Path(p).exists():
            raise UsageError(f"no such file or directory: {p}")
        found = find_episodes(p)
        if not found:
            raise UsageError(f"no episodes found under {p}")
        dirs.extend(found)
    if not dirs:
        raise UsageError("no episodes given")
    return dirs, [read_episode(d) for d in dirs]


def _episode_files(dirs) -> list[Path]:
    files = []
    for d in dirs:
        files += [f for f in sorted(Path(d).iterdir()) if f.is_file()]
    return files


def _mesh_path(args, data_paths: Sequence[str]) -> Path:
    if args.mesh:
        return Path(args.mesh)
    for p in data_paths:
        for candidate in (Path(p) / "mesh.obj", Path(p).parent / "mesh.obj", Path(p).parent.parent / "mesh.obj"):
            if candidate.exists():
                return candidate
    raise UsageError("no mesh given (use --mesh)")


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _cm(x: float) -> str:
    return f"{x * CM:.2f}"


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    mesh, episodes = synthesize(cfg.synth, cfg.seed, cfg.gravity)
    outputs = [out / "mesh.obj"]
    save_mesh(mesh, outputs[0])
    for i, ep in enumerate(episodes):
        outputs += write_episode(ep.record, out / "episodes" / f"ep_{i:03d}")
    inputs = [args.config] if args.config else []
    _finish(args, cfg, out, inputs, outputs)
    print(f"wrote {len(episodes)} episodes to {out / 'episodes'}")
    return 0


def cmd_identify_object(args) -> int:
    cfg = _config(args)
    dirs, records = _episodes(args.episodes)
    mesh_path = _mesh_path(args, args.episodes)
    mesh = load_mesh(mesh_path)
    points = sample_surface(mesh, cfg.object.points, cfg.object.point_seed)
    real = [r.object_trajectory for r in records]
    scenarios = [r.scenario for r in records]
    bounds = cfg.object.bounds()
    physics, result = identify_object(real, scenarios, mesh, points, bounds,
                                      cfg.swarm.build(cfg.seed), cfg.threads)
    objective = ObjectObjective(real, scenarios, mesh, points)
    errors = objective.episode_errors(physics)
    sens = sensitivity(objective, result.best_params, bounds)

    out = _out_dir(args)
    paths = [out / n for n in ("physics.yaml", "trace.csv", "episodes.csv", "sensitivity.csv", "report.txt")]
    write_yaml(physics_to_dict(physics), paths[0])
    result.write_trace(paths[1])
    rows = [[str(d), _cm(a.mean()), _cm(s.mean())] for d, (a, s) in zip(dirs, errors)]
    _write_csv(paths[2], ["episode", "add_cm", "adds_cm"], rows)
    _write_csv(paths[3], ["parameter", "value", "step", "curvature"],
               [[r["parameter"], repr(r["value"]), repr(r["step"]), repr(r["curvature"])] for r in sens])
    mean_add = float(np.mean([a.mean() for a, _ in errors]))
    mean_adds = float(np.mean([s.mean() for _, s in errors]))
    lines = [
        f"episodes: {len(records)}",
        f"friction: {physics.friction:.6g}",
        f"mass: {physics.mass:.6g} kg",
        f"com_offset: ({physics.com_offset[0] * CM:.3f}, {physics.com_offset[1] * CM:.3f}) cm",
        f"loss: {result.best_loss:.6g} m (sum over episodes of mean ADD + ADD-S)",
        f"mean ADD: {_cm(mean_add)} cm",
        f"mean ADD-S: {_cm(mean_adds)} cm",
        f"evaluations: {result.evaluations}",
        "sensitivity (loss curvature per parameter):",
        *(f"  {r['parameter']}: {r['curvature']:.6g}" for r in sens),
    ]
    paths[4].write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    _finish(args, cfg, out, [mesh_path, *_episode_files(dirs)] + ([args.config] if args.config else []), paths)
    return 0


def cmd_identify_robot(args) -> int:
    cfg = _config(args)
    dirs, records = _episodes(args.episodes)
    joints = {r.joint_trajectory.joints for r in records}
    if len(joints) != 1:
        raise UsageError(f"episodes disagree on the number of joints: {sorted(joints)}")
    jr = [JointRecord.from_scenario(r.scenario, r.joint_trajectory) for r in records]
    try:
        bounds = cfg.robot.bounds(joints.pop())
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    pd, results = identify_robot(jr, bounds, cfg.swarm.build(cfg.seed), cfg.threads)
    loss = robot_records_loss(pd, jr)

    out = _out_dir(args)
    paths = [out / "pd.yaml", out / "joints.csv", out / "report.txt"]
    write_yaml(pd_to_dict(pd), paths[0])
    _write_csv(paths[1], ["joint", "kp", "kd", "inertia", "loss_rad"],
               [[j, repr(float(pd.kp[j])), repr(float(pd.kd[j])), repr(float(pd.inertia[j])),
                 repr(results[j].best_loss)] for j in range(pd.joints)])
    for j, res in enumerate(results):
        p = out / f"trace_joint{j}.csv"
        res.write_trace(p)
        paths.append(p)
    lines = [f"episodes: {len(records)}", f"robot loss: {loss:.6g} rad"]
    lines += [f"joint {j}: kp {pd.kp[j]:.6g} kd {pd.kd[j]:.6g} inertia {pd.inertia[j]:.6g}" for j in range(pd.joints)]
    paths[2].write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    _finish(args, cfg, out, _episode_files(dirs) + ([args.config] if args.config else []), paths)
    return 0


def _camera(cfg: RunConfig) -> CameraIntrinsics:
    c = cfg.viewpoint.camera
    return CameraIntrinsics(c.fx, c.fy, c.cx, c.cy, c.width, c.height)


def cmd_align_viewpoint(args) -> int:
    cfg = _config(args)
    if not args.mesh:
        raise UsageError("align-viewpoint needs --mesh")
    for p in [args.mesh, *args.masks]:
        if not Path(p).exists():
            raise UsageError(f"no such file: {p}")
    mesh = load_mesh(args.mesh)
    masks = [read_pgm(p) for p in args.masks]
    camera = _camera(cfg)
    for p, m in zip(args.masks, masks):
        if (m.width, m.height) != (camera.width, camera.height):
            raise UsageError(f"{p} is {m.width}x{m.height} but the camera is {camera.width}x{camera.height}")
    vp = cfg.viewpoint
    if args.coarse:
        coarse = read_pose_trajectory(args.coarse)[0]
    else:
        coarse = Pose.from_rotvec(vp.coarse_rotvec, vp.coarse_translation)
    views = None
    if args.views:
        views = read_pose_trajectory(args.views).poses
        if len(views) != len(masks):
            raise UsageError("--views needs one pose per mask")
    bounds = default_delta_bounds(vp.rotation_bound_deg, vp.translation_bound)
    fine, result = align_viewpoint(masks, mesh, coarse, camera, bounds, cfg.swarm.build(cfg.seed),
                                   views, cfg.threads, vp.max_width)
    native = ViewpointObjective(masks, mesh, coarse, camera, views)
    delta = delta_between(coarse, fine)
    final_loss = native(delta)

    out = _out_dir(args)
    paths = [out / "fine_pose.txt", out / "trace.csv", out / "report.txt"]
    write_pose_trajectory(PoseTrajectory.from_poses([0.0], [fine], "camera"), paths[0])
    result.write_trace(paths[1])
    for i, (m, view) in enumerate(zip(masks, native.views)):
        rendered = render_silhouette(mesh, view @ fine, camera)
        p = out / f"diff_{i}.pgm"
        write_pgm(SilhouetteMask(np.abs(rendered.coverage - m.coverage)), p)
        paths.append(p)
    lines = [
        f"masks: {len(masks)}",
        f"fine quaternion (w x y z): {' '.join(f'{v:.9f}' for v in fine.rotation)}",
        f"fine translation: {' '.join(f'{v:.6f}' for v in fine.translation)} m",
        f"delta rotation: {math.degrees(float(np.linalg.norm(delta[:3]))):.4f} deg",
        f"delta translation: {float(np.linalg.norm(delta[3:])) * 1000:.3f} mm",
        f"search loss: {result.best_loss:.6g}",
        f"final loss at {camera.width}x{camera.height}: {final_loss:.6g}",
    ]
    paths[2].write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    _finish(args, cfg, out, [args.mesh, *args.masks] + ([args.config] if args.config else []), paths)
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    dirs, records = _episodes([args.episode])
    if len(records) != 1:
        raise UsageError("simulate takes a single episode directory")
    rec, d = records[0], dirs[0]
    mesh_path = _mesh_path(args, [args.episode])
    physics, pd = rec.physics, rec.pd
    if args.physics:
        physics = physics_from_dict(read_yaml(args.physics))
    if args.pd:
        pd = pd_from_dict(read_yaml(args.pd))
    if physics is None or pd is None:
        raise UsageError("episode has no ground truth; pass --physics and --pd")
    joints, obj = simulate_episode(rec.scenario, pd, physics, load_mesh(mesh_path))
    out = _out_dir(args)
    paths = [out / "object_poses.txt", out / "joints.txt"]
    write_pose_trajectory(obj, paths[0])
    write_joint_trajectory(joints, paths[1])
    inputs = [mesh_path, *_episode_files([d])] + [p for p in (args.physics, args.pd, args.config) if p]
    _finish(args, cfg, out, inputs, paths)
    print(f"simulated {len(obj)} object poses and {len(joints)} joint samples")
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    for p in (args.real, args.sim, args.mesh):
        if not p or not Path(p).exists():
            raise UsageError(f"no such file: {p}")
    real = read_pose_trajectory(args.real)
    sim = read_pose_trajectory(args.sim).resample_nearest(real.times)
    mesh = load_mesh(args.mesh)
    points = sample_surface(mesh, cfg.eval.points, cfg.eval.point_seed)
    add, adds = pose_errors(real, sim, points)
    out = _out_dir(args)
    paths = [out / "eval.csv", out / "report.txt"]
    _write_csv(paths[0], ["t", "add_cm", "adds_cm"],
               [[repr(float(t)), repr(float(a * CM)), repr(float(s * CM))] for t, a, s in zip(real.times, add, adds)])
    lines = [f"steps: {len(real)}", f"mean ADD: {_cm(add.mean())} cm", f"mean ADD-S: {_cm(adds.mean())} cm"]
    paths[1].write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    _finish(args, cfg, out, [args.real, args.sim, args.mesh] + ([args.config] if args.config else []), paths)
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out-dir", default=".", help="output directory (default: current)")
    common.add_argument("--threads", type=int, help="objective evaluations run in parallel")

    parser = _Parser(prog="twin-ident", description="Simulator-in-the-loop identification of robot-object physics.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate synthetic episodes with ground truth")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("identify-object", parents=[common], help="fit friction, mass and COM offset")
    p.add_argument("episodes", nargs="*", help="episode or dataset directories")
    p.add_argument("--mesh", help="object mesh (OBJ); defaults to mesh.obj next to the episodes")
    p.set_defaults(func=cmd_identify_object)

    p = sub.add_parser("identify-robot", parents=[common], help="fit per-joint PD gains")
    p.add_argument("episodes", nargs="*", help="episode or dataset directories")
    p.set_defaults(func=cmd_identify_robot)

    p = sub.add_parser("align-viewpoint", parents=[common], help="refine a camera pose from silhouette masks")
    p.add_argument("masks", nargs="+", help="reference masks (PGM)")
    p.add_argument("--mesh", help="scene mesh (OBJ)")
    p.add_argument("--coarse", help="pose file with the coarse object-to-camera pose")
    p.add_argument("--views", help="pose file with one extra-camera transform per mask")
    p.set_defaults(func=cmd_align_viewpoint)

    p = sub.add_parser("simulate", parents=[common], help="replay an episode with given physics")
    p.add_argument("episode", help="episode directory")
    p.add_argument("--mesh", help="object mesh (OBJ)")
    p.add_argument("--physics", help="object physics YAML (default: ground truth sidecar)")
    p.add_argument("--pd", help="PD parameter YAML (default: ground truth sidecar)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", parents=[common], help="ADD / ADD-S between two pose trajectories")
    p.add_argument("real", help="reference pose trajectory")
    p.add_argument("sim", help="simulated pose trajectory")
    p.add_argument("--mesh", required=True, help="object mesh (OBJ)")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except (DivergenceError, OptimizationError, ArithmeticError, FloatingPointError) as exc:
        print(f"twin-ident: numeric failure: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, FormatError, MeshFormatError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"twin-ident: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
