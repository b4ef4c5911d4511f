"""Synthetic Control-Hit-Slide episodes with known physics."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SynthSection
from .dynamics import (GRAVITY, HitSpec, JointTrajectory, ObjectPhysics, PDParams, Scenario,
                       simulate_episode)
from .fileio import EpisodeRecord
from .geometry import PoseTrajectory, TriMesh, box_mesh, quat_from_rotvec, quat_multiply

# struck side: outward normal of the face in the body frame
_FACES = ((-1.0, 0.0), (1.0, 0.0), (0.0, -1.0), (0.0, 1.0))


@dataclass(eq=False)
class SyntheticEpisode:
    record: EpisodeRecord
    clean_object: PoseTrajectory
    clean_joints: JointTrajectory


def synth_mesh(cfg: SynthSection) -> TriMesh:
    return box_mesh(cfg.box_size)


def ground_truth(cfg: SynthSection) -> tuple[ObjectPhysics, PDParams]:
    p = cfg.physics
    return (ObjectPhysics(p.friction, p.mass, tuple(p.com_offset)),
            PDParams(cfg.pd.kp, cfg.pd.kd, cfg.pd.inertia))


def _min_jerk(s: np.ndarray) -> np.ndarray:
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s * s)


def random_controls(rng: np.random.Generator, steps: int, joints: int):
    """Smooth point-to-point joint targets over the first 60% of the control stage."""
    q0 = rng.uniform(-0.5, 0.5, joints)
    goal = q0 + rng.uniform(-0.6, 0.6, joints)
    s = _min_jerk(np.arange(1, steps + 1) / (0.6 * steps))
    return q0, q0 + s[:, None] * (goal - q0)


def random_hit(rng: np.random.Generator, cfg: SynthSection) -> HitSpec:
    half = 0.5 * np.asarray(cfg.box_size[:2], dtype=float)
    nx, ny = _FACES[rng.integers(len(_FACES))]
    tangent = np.array([-ny, nx])
    along = rng.uniform(-1.0, 1.0) * cfg.contact_spread * np.abs(tangent) @ half
    contact = np.array([nx, ny]) * half + tangent * along
    tilt = math.radians(rng.uniform(-cfg.direction_spread_deg, cfg.direction_spread_deg))
    c, s = math.cos(tilt), math.sin(tilt)
    push = (-(c * nx - s * ny), -(s * nx + c * ny))  # body frame, into the face
    speed = rng.uniform(*cfg.ee_speed)
    return HitSpec(tuple(contact), push, speed, cfg.ee_effective_mass)


def _to_world(direction, yaw: float) -> tuple[float, float]:
    c, s = math.cos(yaw), math.sin(yaw)
    d = (c * direction[0] - s * direction[1], s * direction[0] + c * direction[1])
    n = math.hypot(*d)
    return d[0] / n, d[1] / n


def random_scenario(rng: np.random.Generator, cfg: SynthSection, gravity: float = GRAVITY) -> Scenario:
    joints = len(cfg.pd.kp)
    q0, controls = random_controls(rng, cfg.control_steps, joints)
    wx, wy = cfg.workspace
    pose = (rng.uniform(-wx, wx), rng.uniform(-wy, wy), rng.uniform(-math.pi, math.pi))
    hit = random_hit(rng, cfg)
    hit = HitSpec(hit.contact_point, _to_world(hit.direction, pose[2]), hit.ee_speed, hit.ee_effective_mass)
    return Scenario(
        controls=controls, dt=cfg.dt, hit=hit, hit_step=cfg.control_steps, object_pose=pose,
        initial_joints=q0, duration=cfg.duration, record_stride=cfg.record_stride,
        gravity=gravity, restitution=cfg.restitution, friction_dir=cfg.friction_dir,
    )


def add_pose_noise(traj: PoseTrajectory, rng: np.random.Generator, translation: float,
                   rotation: float) -> PoseTrajectory:
    """Perturb every pose. ``translation`` (m) and ``rotation`` (rad) are RMS
    magnitudes of the 3-D offset, so each axis gets ``sigma / sqrt(3)``."""
    k = len(traj)
    t = traj.translations + rng.normal(0.0, translation / math.sqrt(3), (k, 3))
    rv = rng.normal(0.0, rotation / math.sqrt(3), (k, 3))
    q = np.array([quat_multiply(quat_from_rotvec(r), q) for r, q in zip(rv, traj.quaternions)])
    return PoseTrajectory(traj.times, q, t, traj.frame)


def synthesize(cfg: SynthSection, seed: int, gravity: float = GRAVITY) -> tuple[TriMesh, list[SyntheticEpisode]]:
    mesh = synth_mesh(cfg)
    physics, pd = ground_truth(cfg)
    physics.check_against(mesh)
    streams = np.random.SeedSequence(seed).spawn(cfg.episodes)
    out = []
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        sc = random_scenario(rng, cfg, gravity)
        joints, obj = simulate_episode(sc, pd, physics, mesh)
        noisy_obj, noisy_joints = obj, joints
        if cfg.noise.translation > 0 or cfg.noise.rotation_deg > 0:
            noisy_obj = add_pose_noise(obj, rng, cfg.noise.translation, math.radians(cfg.noise.rotation_deg))
        if cfg.noise.joint > 0:
            q = joints.positions + rng.normal(0.0, cfg.noise.joint, joints.positions.shape)
            noisy_joints = JointTrajectory(joints.times, q, joints.velocities)
        note = f"episode {i}, seed {seed}"
        rec = EpisodeRecord(sc, noisy_obj, noisy_joints, "synthetic", note, physics, pd)
        out.append(SyntheticEpisode(rec, obj, joints))
    return mesh, out
