"""Run configuration: one YAML file mapped onto nested dataclasses.

Unknown keys and bad values raise :class:`ConfigError` naming the offending
field path, e.g. ``synth.noise.translation: must be >= 0``.
"""
from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from typing import Optional

import yaml

from .dynamics import FRICTION_DIRS, GRAVITY
from .optimize import OBJECT_PARAM_NAMES, ROBOT_PARAM_NAMES, ParamBounds, SwarmConfig


class ConfigError(ValueError):
    pass


def _check(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _pair(value, path: str) -> tuple[float, float]:
    _check(isinstance(value, (list, tuple)) and len(value) == 2, path, "expected [lower, upper]")
    lo, hi = float(value[0]), float(value[1])
    _check(lo <= hi, path, "lower must not exceed upper")
    return lo, hi


@dataclass
class SwarmSection:
    particles: int = 32
    iterations: int = 150
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    velocity_clamp: float = 0.5
    center_start: bool = True

    def validate(self, path: str) -> None:
        _check(self.particles >= 2, f"{path}.particles", "must be >= 2")
        _check(self.iterations >= 1, f"{path}.iterations", "must be >= 1")
        _check(0 <= self.inertia <= 1, f"{path}.inertia", "must lie in [0, 1]")
        _check(self.cognitive > 0, f"{path}.cognitive", "must be > 0")
        _check(self.social > 0, f"{path}.social", "must be > 0")
        _check(self.velocity_clamp > 0, f"{path}.velocity_clamp", "must be > 0")

    def build(self, seed: int) -> SwarmConfig:
        return SwarmConfig(self.particles, self.iterations, self.inertia, self.cognitive, self.social,
                           self.velocity_clamp, seed, self.center_start)


@dataclass
class PhysicsSection:
    friction: float = 0.3
    mass: float = 0.5
    com_offset: list = field(default_factory=lambda: [0.01, -0.02])

    def validate(self, path: str) -> None:
        _check(self.friction >= 0, f"{path}.friction", "must be >= 0")
        _check(self.mass > 0, f"{path}.mass", "must be > 0")
        _check(len(self.com_offset) == 2, f"{path}.com_offset", "expected two values")


@dataclass
class PDSection:
    kp: list = field(default_factory=lambda: [80.0, 50.0])
    kd: list = field(default_factory=lambda: [12.0, 6.0])
    inertia: list = field(default_factory=lambda: [0.9, 0.4])

    def validate(self, path: str) -> None:
        n = len(self.kp)
        _check(n >= 1, f"{path}.kp", "need at least one joint")
        for name in ("kp", "kd", "inertia"):
            vals = getattr(self, name)
            _check(len(vals) == n, f"{path}.{name}", f"expected {n} values (one per joint)")
            _check(all(float(v) > 0 for v in vals), f"{path}.{name}", "all entries must be > 0")


@dataclass
class NoiseSection:
    translation: float = 0.0  # m, RMS of the 3-D offset
    rotation_deg: float = 0.0  # RMS rotation angle
    joint: float = 0.0  # rad, per-joint std

    def validate(self, path: str) -> None:
        for name in ("translation", "rotation_deg", "joint"):
            _check(getattr(self, name) >= 0, f"{path}.{name}", "must be >= 0")


@dataclass
class SynthSection:
    episodes: int = 20
    box_size: list = field(default_factory=lambda: [0.16, 0.10, 0.06])
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    pd: PDSection = field(default_factory=PDSection)
    noise: NoiseSection = field(default_factory=NoiseSection)
    dt: float = 1e-3
    control_steps: int = 150
    duration: float = 0.5
    record_stride: int = 20
    ee_speed: list = field(default_factory=lambda: [0.3, 0.8])
    ee_effective_mass: float = 1.0
    contact_spread: float = 0.6  # fraction of the struck face used for contacts
    direction_spread_deg: float = 15.0
    workspace: list = field(default_factory=lambda: [0.3, 0.3])  # x, y half-extents of initial poses
    restitution: float = 0.0
    friction_dir: str = "velocity"

    def validate(self, path: str) -> None:
        _check(self.episodes >= 1, f"{path}.episodes", "must be >= 1")
        _check(len(self.box_size) == 3 and all(float(s) > 0 for s in self.box_size),
               f"{path}.box_size", "expected three positive edge lengths")
        _check(self.dt > 0, f"{path}.dt", "must be > 0")
        _check(self.control_steps >= 1, f"{path}.control_steps", "must be >= 1")
        _check(self.duration >= self.control_steps * self.dt, f"{path}.duration",
               "must cover the control stage")
        _check(self.record_stride >= 1, f"{path}.record_stride", "must be >= 1")
        lo, hi = _pair(self.ee_speed, f"{path}.ee_speed")
        _check(lo >= 0, f"{path}.ee_speed", "speeds must be >= 0")
        _check(self.ee_effective_mass > 0, f"{path}.ee_effective_mass", "must be > 0")
        _check(0 <= self.contact_spread <= 1, f"{path}.contact_spread", "must lie in [0, 1]")
        _check(0 <= self.direction_spread_deg < 90, f"{path}.direction_spread_deg", "must lie in [0, 90)")
        _check(len(self.workspace) == 2, f"{path}.workspace", "expected [x, y] half-extents")
        _check(self.restitution >= 0, f"{path}.restitution", "must be >= 0")
        _check(self.friction_dir in FRICTION_DIRS, f"{path}.friction_dir", f"must be one of {FRICTION_DIRS}")


@dataclass
class ObjectSection:
    friction: list = field(default_factory=lambda: [0.05, 1.0])
    mass: list = field(default_factory=lambda: [0.1, 2.0])
    com_x: list = field(default_factory=lambda: [-0.04, 0.04])
    com_y: list = field(default_factory=lambda: [-0.04, 0.04])
    points: int = 512
    point_seed: int = 0

    def validate(self, path: str) -> None:
        for name in OBJECT_PARAM_NAMES:
            _pair(getattr(self, name), f"{path}.{name}")
        _check(self.friction[0] >= 0, f"{path}.friction", "lower bound must be >= 0")
        _check(self.mass[0] > 0, f"{path}.mass", "lower bound must be > 0")
        _check(self.points >= 1, f"{path}.points", "must be >= 1")

    def bounds(self) -> ParamBounds:
        return ParamBounds.from_pairs([getattr(self, n) for n in OBJECT_PARAM_NAMES], OBJECT_PARAM_NAMES)


@dataclass
class RobotSection:
    kp: list = field(default_factory=lambda: [1.0, 300.0])
    kd: list = field(default_factory=lambda: [0.1, 60.0])
    # Motion only fixes the ratios kp/I and kd/I, so the inertia is pinned per joint.
    inertia: list = field(default_factory=lambda: [[0.9, 0.9], [0.4, 0.4]])

    def validate(self, path: str) -> None:
        _pair(self.kp, f"{path}.kp")
        _pair(self.kd, f"{path}.kd")
        _check(self.kp[0] > 0 and self.kd[0] > 0, path, "gain bounds must be > 0")
        _check(len(self.inertia) >= 1, f"{path}.inertia", "need one [lower, upper] pair per joint")
        for j, pair in enumerate(self.inertia):
            lo, _ = _pair(pair, f"{path}.inertia[{j}]")
            _check(lo > 0, f"{path}.inertia[{j}]", "lower bound must be > 0")

    def bounds(self, joints: int) -> list[ParamBounds]:
        if len(self.inertia) != joints:
            raise ConfigError(f"robot.inertia: expected {joints} pairs (one per joint), got {len(self.inertia)}")
        return [ParamBounds.from_pairs([self.kp, self.kd, pair], ROBOT_PARAM_NAMES) for pair in self.inertia]


@dataclass
class CameraSection:
    fx: float = 300.0
    fy: float = 300.0
    cx: float = 160.0
    cy: float = 120.0
    width: int = 320
    height: int = 240

    def validate(self, path: str) -> None:
        _check(self.fx > 0 and self.fy > 0, path, "focal lengths must be > 0")
        _check(self.width >= 1 and self.height >= 1, path, "image size must be positive")
        _check(0 <= self.cx < self.width, f"{path}.cx", "must lie in [0, width)")
        _check(0 <= self.cy < self.height, f"{path}.cy", "must lie in [0, height)")


@dataclass
class ViewpointSection:
    camera: CameraSection = field(default_factory=CameraSection)
    coarse_rotvec: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    coarse_translation: list = field(default_factory=lambda: [0.0, 0.0, 1.0])
    rotation_bound_deg: float = 10.0
    translation_bound: float = 0.05
    max_width: int = 320

    def validate(self, path: str) -> None:
        _check(len(self.coarse_rotvec) == 3, f"{path}.coarse_rotvec", "expected three values")
        _check(len(self.coarse_translation) == 3, f"{path}.coarse_translation", "expected three values")
        _check(0 < self.rotation_bound_deg <= 180, f"{path}.rotation_bound_deg", "must lie in (0, 180]")
        _check(self.translation_bound > 0, f"{path}.translation_bound", "must be > 0")
        _check(self.max_width >= 1, f"{path}.max_width", "must be >= 1")


@dataclass
class EvalSection:
    points: int = 512
    point_seed: int = 0

    def validate(self, path: str) -> None:
        _check(self.points >= 1, f"{path}.points", "must be >= 1")


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    gravity: float = GRAVITY
    swarm: SwarmSection = field(default_factory=SwarmSection)
    synth: SynthSection = field(default_factory=SynthSection)
    object: ObjectSection = field(default_factory=ObjectSection)
    robot: RobotSection = field(default_factory=RobotSection)
    viewpoint: ViewpointSection = field(default_factory=ViewpointSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self, path: str = "") -> None:
        _check(self.threads >= 1, "threads", "must be >= 1")
        _check(self.gravity > 0, "gravity", "must be > 0")


def _convert(value, tp, path: str):
    if dataclasses.is_dataclass(tp):
        return _from_dict(tp, value, path)
    if tp is bool:
        _check(isinstance(value, bool), path, "expected true/false")
        return value
    if tp is int:
        _check(isinstance(value, int) and not isinstance(value, bool), path, "expected an integer")
        return value
    if tp is float:
        _check(isinstance(value, (int, float)) and not isinstance(value, bool), path, "expected a number")
        _check(math.isfinite(value), path, "must be finite")
        return float(value)
    if tp is str:
        _check(isinstance(value, str), path, "expected a string")
        return value
    if tp is list:
        _check(isinstance(value, list), path, "expected a list")
        _check(all(_finite_tree(v) for v in value), path, "expected finite numbers")
        return value
    return value


def _finite_tree(v) -> bool:
    if isinstance(v, list):
        return all(_finite_tree(x) for x in v)
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _from_dict(cls, data, path: str):
    data = {} if data is None else data
    _check(isinstance(data, dict), path or "<root>", "expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}: unknown field")
    kwargs = {}
    for name in names & set(data):
        sub = f"{path}.{name}" if path else name
        kwargs[name] = _convert(data[name], hints[name], sub)
    obj = cls(**kwargs)
    obj.validate(path)
    return obj


def config_from_dict(data: Optional[dict]) -> RunConfig:
    return _from_dict(RunConfig, data, "")


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return config_from_dict(data)


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
