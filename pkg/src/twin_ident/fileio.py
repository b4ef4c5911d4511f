"""Plain-text and PGM file formats, episode directories and run manifests.

All numbers are written with ``repr`` so every file re-reads to bitwise-equal
arrays.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .dynamics import HitSpec, JointTrajectory, ObjectPhysics, PDParams, Scenario
from .geometry import PoseTrajectory
from .viewpoint import SilhouetteMask

POSE_HEADER = "# t[s] qw qx qy qz tx[m] ty[m] tz[m]"
JOINT_HEADER = "# t[s] q[rad]... qd[rad/s]..."
PROVENANCES = ("synthetic", "recorded")


class FormatError(ValueError):
    pass


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def _read_rows(path, width: Optional[int] = None) -> tuple[list[str], np.ndarray]:
    header, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                header.append(s[1:].strip())
                continue
            try:
                row = [float(tok) for tok in s.split()]
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from None
            if width is not None and len(row) != width:
                raise FormatError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            if rows and len(row) != len(rows[0]):
                raise FormatError(f"{path}:{lineno}: inconsistent column count")
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: no samples")
    return header, np.array(rows)


def _header_value(header: list[str], key: str) -> Optional[str]:
    for h in header:
        for tok in h.split():
            if tok.startswith(key + "="):
                return tok[len(key) + 1 :]
    return None


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


def write_pose_trajectory(traj: PoseTrajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{POSE_HEADER} frame={traj.frame}\n")
        for t, q, x in zip(traj.times, traj.quaternions, traj.translations):
            fh.write(_fmt([t, *q, *x]) + "\n")


def read_pose_trajectory(path) -> PoseTrajectory:
    header, rows = _read_rows(path, width=8)
    frame = _header_value(header, "frame") or "world"
    return PoseTrajectory(rows[:, 0], rows[:, 1:5], rows[:, 5:8], frame)


def write_joint_trajectory(traj: JointTrajectory, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"{JOINT_HEADER} joints={traj.joints}\n")
        for t, q, qd in zip(traj.times, traj.positions, traj.velocities):
            fh.write(_fmt([t, *q, *qd]) + "\n")


def read_joint_trajectory(path) -> JointTrajectory:
    header, rows = _read_rows(path)
    j = _header_value(header, "joints")
    joints = int(j) if j is not None else (rows.shape[1] - 1) // 2
    if rows.shape[1] != 1 + 2 * joints:
        raise FormatError(f"{path}: expected {1 + 2 * joints} columns for {joints} joints")
    return JointTrajectory(rows[:, 0], rows[:, 1 : 1 + joints], rows[:, 1 + joints :])


# --------------------------------------------------------------------------
# masks
# --------------------------------------------------------------------------


def write_pgm(mask: SilhouetteMask, path) -> None:
    """Binary PGM (P5, maxval 255); coverage scaled linearly."""
    data = np.round(mask.coverage * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path) -> SilhouetteMask:
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: not a binary PGM (P5) file")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: bad PGM header") from None
    if not 0 < maxval < 256:
        raise FormatError(f"{path}: only 8-bit PGM is supported")
    pos += 1  # single whitespace after maxval
    body = raw[pos : pos + w * h]
    if len(body) != w * h:
        raise FormatError(f"{path}: expected {w * h} pixels, found {len(body)}")
    data = np.frombuffer(body, dtype=np.uint8).reshape(h, w)
    return SilhouetteMask(data / float(maxval))


# --------------------------------------------------------------------------
# structured records
# --------------------------------------------------------------------------


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


def physics_to_dict(p: ObjectPhysics) -> dict:
    return {"friction": float(p.friction), "mass": float(p.mass), "com_offset": _floats(p.com_offset)}


def physics_from_dict(d: dict) -> ObjectPhysics:
    return ObjectPhysics(float(d["friction"]), float(d["mass"]), tuple(d.get("com_offset", (0.0, 0.0))))


def pd_to_dict(p: PDParams) -> dict:
    return {"kp": _floats(p.kp), "kd": _floats(p.kd), "inertia": _floats(p.inertia)}


def pd_from_dict(d: dict) -> PDParams:
    return PDParams(d["kp"], d["kd"], d["inertia"])


def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "dt": float(sc.dt),
        "duration": float(sc.duration),
        "record_stride": int(sc.record_stride),
        "hit_step": int(sc.hit_step),
        "hit": {
            "contact_point": _floats(sc.hit.contact_point),
            "direction": _floats(sc.hit.direction),
            "ee_speed": float(sc.hit.ee_speed),
            "ee_effective_mass": float(sc.hit.ee_effective_mass),
        },
        "object_pose": _floats(sc.object_pose),
        "surface_z": float(sc.surface_z),
        "gravity": float(sc.gravity),
        "restitution": float(sc.restitution),
        "friction_dir": sc.friction_dir,
        "rest_speed": float(sc.rest_speed),
        "initial_joints": _floats(sc.initial_joints),
        "initial_joint_velocities": _floats(sc.initial_joint_velocities),
        "controls": _floats(sc.controls),
    }


def scenario_from_dict(d: dict) -> Scenario:
    d = dict(d)
    hit = d.pop("hit")
    hit = HitSpec(tuple(hit["contact_point"]), tuple(hit["direction"]), float(hit["ee_speed"]),
                  float(hit.get("ee_effective_mass", 1.0)))
    d["object_pose"] = tuple(d.get("object_pose", (0.0, 0.0, 0.0)))
    return Scenario(hit=hit, **d)


def write_yaml(data: dict, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False, default_flow_style=None, width=100)


def read_yaml(path) -> dict:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise FormatError(f"{path}: expected a mapping at the top level")
    return data


@dataclass(eq=False)
class EpisodeRecord:
    scenario: Scenario
    object_trajectory: PoseTrajectory
    joint_trajectory: JointTrajectory
    provenance: str = "recorded"
    note: str = ""
    physics: Optional[ObjectPhysics] = None
    pd: Optional[PDParams] = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")
        has_truth = self.physics is not None and self.pd is not None
        if has_truth != (self.provenance == "synthetic"):
            raise ValueError("ground truth must be present exactly for synthetic episodes")

    def equals(self, other: "EpisodeRecord") -> bool:
        return (
            scenario_to_dict(self.scenario) == scenario_to_dict(other.scenario)
            and self.object_trajectory.equals(other.object_trajectory)
            and self.joint_trajectory.equals(other.joint_trajectory)
            and (self.provenance, self.note) == (other.provenance, other.note)
            and self.physics == other.physics
            and self.pd == other.pd
        )


def write_episode(rec: EpisodeRecord, directory) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = [d / "scenario.yaml", d / "object_poses.txt", d / "joints.txt", d / "meta.yaml"]
    write_yaml(scenario_to_dict(rec.scenario), paths[0])
    write_pose_trajectory(rec.object_trajectory, paths[1])
    write_joint_trajectory(rec.joint_trajectory, paths[2])
    write_yaml({"provenance": rec.provenance, "note": rec.note}, paths[3])
    truth = d / "ground_truth.yaml"
    if rec.provenance == "synthetic":
        write_yaml({"physics": physics_to_dict(rec.physics), "pd": pd_to_dict(rec.pd)}, truth)
        paths.append(truth)
    elif truth.exists():
        truth.unlink()
    return paths


def read_episode(directory) -> EpisodeRecord:
    d = Path(directory)
    meta = read_yaml(d / "meta.yaml") if (d / "meta.yaml").exists() else {}
    physics = pd = None
    if (d / "ground_truth.yaml").exists():
        truth = read_yaml(d / "ground_truth.yaml")
        physics = physics_from_dict(truth["physics"])
        pd = pd_from_dict(truth["pd"])
    return EpisodeRecord(
        scenario_from_dict(read_yaml(d / "scenario.yaml")),
        read_pose_trajectory(d / "object_poses.txt"),
        read_joint_trajectory(d / "joints.txt"),
        meta.get("provenance", "recorded"),
        meta.get("note", "") or "",
        physics,
        pd,
    )


def find_episodes(path) -> list[Path]:
    """An episode directory, or a dataset directory holding episode subdirectories."""
    p = Path(path)
    if (p / "scenario.yaml").exists():
        return [p]
    found = sorted(s.parent for s in p.glob("*/scenario.yaml"))
    if not found:
        found = sorted(s.parent for s in p.glob("*/*/scenario.yaml"))
    return found


# --------------------------------------------------------------------------
# run manifests
# --------------------------------------------------------------------------


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seeds: dict
    version: str
    inputs: dict = field(default_factory=dict)  # path -> sha256
    outputs: list = field(default_factory=list)

    @classmethod
    def create(cls, command: str, config: dict, seeds: dict, version: str,
               inputs: Sequence = (), outputs: Sequence = ()) -> "RunManifest":
        digests = {str(p): file_digest(p) for p in sorted(set(str(p) for p in inputs))}
        return cls(command, config, seeds, version, digests, sorted(str(p) for p in outputs))

    def verify_inputs(self) -> list[str]:
        """Paths whose current digest differs from the recorded one."""
        return [p for p, digest in self.inputs.items() if not Path(p).exists() or file_digest(p) != digest]

    def write(self, path) -> None:
        data = {
            "command": self.command,
            "version": self.version,
            "seeds": self.seeds,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
        }
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        d = json.loads(Path(path).read_text())
        return cls(d["command"], d["config"], d["seeds"], d["version"], d.get("inputs", {}), d.get("outputs", []))
