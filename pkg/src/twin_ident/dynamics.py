"""Control-Hit-Slide episode simulator.

Three stages share one clock:

* Control: decoupled per-joint PD dynamics ``I q'' = kp (u - q) - kd q'``.
* Hit: a point-contact impulse from the end effector onto the object.
* Slide: planar Coulomb sliding; the COM decelerates at ``mu g`` and the yaw
  rate changes under the friction torque ``r x (-mu m g e)``.

Everything is integrated with semi-implicit Euler at a fixed step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numba import njit

from .geometry import MassProperties, PoseTrajectory, TriMesh, mass_properties

GRAVITY = 9.81
DEFAULT_REST_SPEED = 1e-6
FRICTION_DIRS = ("velocity", "hit_axis")


class DivergenceError(ArithmeticError):
    """Non-finite simulator state."""

    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"{message} (step {step})")


# --------------------------------------------------------------------------
# parameter and state types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ObjectPhysics:
    friction: float
    mass: float
    com_offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "com_offset", tuple(float(c) for c in self.com_offset))
        if not self.friction >= 0:
            raise ValueError("friction must be >= 0")
        if not self.mass > 0:
            raise ValueError("mass must be > 0")
        if len(self.com_offset) != 2:
            raise ValueError("com_offset is a planar 2-vector")

    def as_vector(self) -> np.ndarray:
        return np.array([self.friction, self.mass, *self.com_offset])

    @classmethod
    def from_vector(cls, x) -> "ObjectPhysics":
        return cls(float(x[0]), float(x[1]), (float(x[2]), float(x[3])))

    def check_against(self, mesh: TriMesh) -> None:
        """COM must stay inside the mesh's planar bounding box."""
        c = mass_properties(mesh).centroid[:2] + np.asarray(self.com_offset)
        lo, hi = mesh.bounds
        if np.any(c < lo[:2]) or np.any(c > hi[:2]):
            raise ValueError(f"center of mass {c} lies outside the mesh footprint")


@dataclass(frozen=True, eq=False)
class PDParams:
    kp: np.ndarray
    kd: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        arrs = [np.array(a, dtype=float).reshape(-1) for a in (self.kp, self.kd, self.inertia)]
        if len({len(a) for a in arrs}) != 1:
            raise ValueError("kp, kd and inertia need one entry per joint")
        if any(np.any(~(a > 0)) for a in arrs):
            raise ValueError("PD parameters must be positive")
        for name, a in zip(("kp", "kd", "inertia"), arrs):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def joints(self) -> int:
        return len(self.kp)

    def joint(self, j: int) -> "PDParams":
        return PDParams(self.kp[j : j + 1], self.kd[j : j + 1], self.inertia[j : j + 1])

    def __eq__(self, other):
        return isinstance(other, PDParams) and all(
            np.array_equal(getattr(self, n), getattr(other, n)) for n in ("kp", "kd", "inertia")
        )


@dataclass(frozen=True, eq=False)
class JointTrajectory:
    times: np.ndarray
    positions: np.ndarray  # (K, J)
    velocities: np.ndarray  # (K, J)

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        q = np.array(self.positions, dtype=float)
        qd = np.array(self.velocities, dtype=float)
        q = q.reshape(len(t), -1)
        qd = qd.reshape(len(t), -1)
        if len(t) < 1:
            raise ValueError("joint trajectory needs at least one sample")
        if q.shape != qd.shape:
            raise ValueError("positions and velocities disagree in shape")
        if np.any(np.diff(t) <= 0):
            raise ValueError("joint trajectory times must be strictly increasing")
        for name, a in (("times", t), ("positions", q), ("velocities", qd)):
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def joints(self) -> int:
        return self.positions.shape[1]

    def __len__(self) -> int:
        return len(self.times)

    def equals(self, other: "JointTrajectory") -> bool:
        return (
            np.array_equal(self.times, other.times)
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.velocities, other.velocities)
        )


@dataclass(frozen=True)
class HitSpec:
    """End-effector strike. ``contact_point`` is in the object body frame,
    ``direction`` in the world frame."""

    contact_point: tuple[float, float]
    direction: tuple[float, float]
    ee_speed: float
    ee_effective_mass: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "contact_point", tuple(float(c) for c in self.contact_point))
        object.__setattr__(self, "direction", tuple(float(c) for c in self.direction))
        if abs(math.hypot(*self.direction) - 1.0) > 1e-9:
            raise ValueError("hit direction must be a unit vector")
        if not self.ee_speed >= 0:
            raise ValueError("ee_speed must be >= 0")
        if not self.ee_effective_mass > 0:
            raise ValueError("ee_effective_mass must be > 0")


@dataclass(frozen=True)
class SlideState:
    x: float
    y: float
    yaw: float
    v: tuple[float, float] = (0.0, 0.0)
    omega: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "v", tuple(float(c) for c in self.v))
        vals = (self.x, self.y, self.yaw, *self.v, self.omega)
        if not all(math.isfinite(c) for c in vals):
            raise DivergenceError("non-finite slide state")
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @property
    def at_rest(self) -> bool:
        return self.v == (0.0, 0.0) and self.omega == 0.0


@dataclass(frozen=True, eq=False)
class Scenario:
    """One Control-Hit-Slide episode.

    ``controls`` holds per-step joint targets; the hit happens at time
    ``hit_step * dt``. Object poses are recorded every ``record_stride``
    integrator steps from ``t = 0`` to ``duration``.
    """

    controls: np.ndarray
    dt: float
    hit: HitSpec
    hit_step: int
    object_pose: tuple[float, float, float] = (0.0, 0.0, 0.0)
    initial_joints: Optional[np.ndarray] = None
    initial_joint_velocities: Optional[np.ndarray] = None
    duration: float = 1.0
    record_stride: int = 1
    surface_z: float = 0.0
    gravity: float = GRAVITY
    restitution: float = 0.0
    friction_dir: str = "velocity"
    rest_speed: float = DEFAULT_REST_SPEED

    def __post_init__(self):
        u = np.array(self.controls, dtype=float)
        if u.ndim == 1:
            u = u[:, None]
        if u.ndim != 2 or len(u) < 1:
            raise ValueError("controls must be a (K, joints) array with K >= 1")
        q0 = np.zeros(u.shape[1]) if self.initial_joints is None else np.array(self.initial_joints, dtype=float)
        qd0 = (
            np.zeros(u.shape[1])
            if self.initial_joint_velocities is None
            else np.array(self.initial_joint_velocities, dtype=float)
        )
        if q0.shape != (u.shape[1],) or qd0.shape != (u.shape[1],):
            raise ValueError("initial joint state does not match the control width")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0 <= self.hit_step <= len(u):
            raise ValueError("hit_step must lie within the control sequence")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        if self.friction_dir not in FRICTION_DIRS:
            raise ValueError(f"friction_dir must be one of {FRICTION_DIRS}")
        if self.duration < self.hit_step * self.dt:
            raise ValueError("duration ends before the hit")
        for a in (u, q0, qd0):
            a.flags.writeable = False
        object.__setattr__(self, "controls", u)
        object.__setattr__(self, "initial_joints", q0)
        object.__setattr__(self, "initial_joint_velocities", qd0)
        object.__setattr__(self, "object_pose", tuple(float(c) for c in self.object_pose))

    @property
    def steps(self) -> int:
        return len(self.controls)

    @property
    def total_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def record_times(self) -> np.ndarray:
        n = np.arange(0, self.total_steps + 1, self.record_stride)
        return n * self.dt

    def with_hit(self, hit: HitSpec) -> "Scenario":
        return replace(self, hit=hit)


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


# --------------------------------------------------------------------------
# control stage
# --------------------------------------------------------------------------


@njit(cache=True)
def _pd_steps(u, q, qd, kp, kd, inertia, dt, pos, vel):
    K, J = u.shape
    for i in range(K):
        for j in range(J):
            acc = (kp[j] * (u[i, j] - q[j]) - kd[j] * qd[j]) / inertia[j]
            qd[j] = qd[j] + acc * dt
            q[j] = q[j] + qd[j] * dt
            pos[i, j] = q[j]
            vel[i, j] = qd[j]


def integrate_pd(controls: np.ndarray, q0: np.ndarray, qd0: np.ndarray, kp: np.ndarray, kd: np.ndarray,
                 inertia: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Semi-implicit Euler for decoupled PD joints on float arrays: ``controls``
    is ``(K, J)``, the rest ``(J,)``. Returns positions and velocities ``(K, J)``;
    non-finite values are left for the caller to detect."""
    K, J = controls.shape
    pos = np.empty((K, J))
    vel = np.empty((K, J))
    _pd_steps(controls, q0.copy(), qd0.copy(), kp, kd, inertia, dt, pos, vel)
    return pos, vel


def simulate_pd(params: PDParams, controls, initial_positions, initial_velocities, dt: float,
                t0: float = 0.0) -> JointTrajectory:
    """Integrate the decoupled PD joints; one sample per control step at ``t0 + (i+1) dt``."""
    u = np.asarray(controls, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    q = np.array(initial_positions, dtype=float).reshape(-1)
    qd = np.array(initial_velocities, dtype=float).reshape(-1)
    if not (u.shape[1] == params.joints == len(q) == len(qd)):
        raise ValueError("joint counts of params, controls and initial state differ")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    as_float = lambda a: np.ascontiguousarray(a, dtype=float)
    pos, vel = integrate_pd(as_float(u), q, qd, as_float(params.kp), as_float(params.kd),
                            as_float(params.inertia), float(dt))
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
        bad = int(np.argmax(~np.isfinite(pos).all(axis=1) | ~np.isfinite(vel).all(axis=1)))
        raise DivergenceError("PD simulation diverged", bad)
    times = t0 + dt * np.arange(1, len(u) + 1)
    return JointTrajectory(times, pos, vel)


def robot_loss(params: PDParams, controls, real: JointTrajectory, initial_positions,
               initial_velocities, dt: float) -> float:
    """Mean over steps of the joint-space distance between simulated and real positions."""
    if len(real) != len(np.asarray(controls)):
        raise ValueError("real trajectory and controls differ in step count")
    sim = simulate_pd(params, controls, initial_positions, initial_velocities, dt)
    d = sim.positions - real.positions
    return float(np.mean(np.sqrt(np.sum(d * d, axis=1))))


# --------------------------------------------------------------------------
# hit
# --------------------------------------------------------------------------


def _rot(yaw: float, v) -> tuple[float, float]:
    c, s = math.cos(yaw), math.sin(yaw)
    return c * v[0] - s * v[1], s * v[0] + c * v[1]


def com_body(physics: ObjectPhysics, props: MassProperties) -> tuple[float, float]:
    return (
        float(props.centroid[0]) + physics.com_offset[0],
        float(props.centroid[1]) + physics.com_offset[1],
    )


def yaw_inertia(physics: ObjectPhysics, props: MassProperties) -> float:
    """Yaw inertia about the (shifted) COM: mass times the unit-density yaw
    inertia plus the parallel-axis term for the COM offset."""
    dx, dy = physics.com_offset
    return physics.mass * (props.yaw_inertia + dx * dx + dy * dy)


def lever_arm(hit: HitSpec, physics: ObjectPhysics, props: MassProperties) -> tuple[float, float]:
    """Body-frame vector from the COM to the contact point."""
    cx, cy = com_body(physics, props)
    return hit.contact_point[0] - cx, hit.contact_point[1] - cy


def hit_impulse(hit: HitSpec, physics: ObjectPhysics, props: MassProperties, yaw: float = 0.0,
                restitution: float = 0.0) -> np.ndarray:
    """Normal impulse of a single-point collision, directed along the hit."""
    ex, ey = hit.direction
    rx, ry = _rot(yaw, lever_arm(hit, physics, props))
    cross = rx * ey - ry * ex
    denom = 1.0 / hit.ee_effective_mass + 1.0 / physics.mass + cross * cross / yaw_inertia(physics, props)
    lam = (1.0 + restitution) * hit.ee_speed / denom
    return np.array([lam * ex, lam * ey])


def apply_impulse(state: SlideState, impulse, hit: HitSpec, physics: ObjectPhysics,
                  props: MassProperties) -> SlideState:
    jx, jy = float(impulse[0]), float(impulse[1])
    rx, ry = _rot(state.yaw, lever_arm(hit, physics, props))
    return SlideState(
        state.x,
        state.y,
        state.yaw,
        (state.v[0] + jx / physics.mass, state.v[1] + jy / physics.mass),
        state.omega + (rx * jy - ry * jx) / yaw_inertia(physics, props),
    )


# --------------------------------------------------------------------------
# slide
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class _SlideModel:
    mu_g: float
    torque_scale: float  # mu * m * g / I_z
    lever: tuple[float, float]
    com: tuple[float, float]
    hit_dir: tuple[float, float]
    by_velocity: bool
    rest_speed: float


def _model(physics, props, hit, g, friction_dir, rest_speed) -> _SlideModel:
    if friction_dir not in FRICTION_DIRS:
        raise ValueError(f"friction_dir must be one of {FRICTION_DIRS}")
    mu_g = physics.friction * g
    return _SlideModel(
        mu_g,
        mu_g * physics.mass / yaw_inertia(physics, props),
        lever_arm(hit, physics, props),
        com_body(physics, props),
        hit.direction,
        friction_dir == "velocity",
        rest_speed,
    )


def _step(x, y, yaw, vx, vy, w, m: _SlideModel, dt):
    """One semi-implicit Euler step.

    Returns the new state plus the fraction of the step after which the object
    came to rest (``None`` while sliding).
    """
    speed = math.hypot(vx, vy)
    if speed == 0.0 and w == 0.0:
        return x, y, yaw, 0.0, 0.0, 0.0, 0.0
    stop = None
    if m.mu_g == 0.0:
        nvx, nvy, nw = vx, vy, w
    elif speed > 0.0:
        if m.by_velocity:
            ex, ey = vx / speed, vy / speed
            along = speed
        else:
            ex, ey = m.hit_dir
            along = vx * ex + vy * ey
        decel = m.mu_g * dt
        if decel >= along:
            # friction cannot push through zero velocity
            stop = max(along, 0.0) / decel
            nvx = nvy = nw = 0.0
        else:
            nvx = vx - decel * ex
            nvy = vy - decel * ey
            lx, ly = _rot(yaw, m.lever)
            nw = w - m.torque_scale * (lx * ey - ly * ex) * dt
            if w != 0.0 and nw * w < 0.0:
                nw = 0.0
    else:
        # spinning in place: no sliding friction force, nothing left to model
        stop = 0.0
        nvx = nvy = nw = 0.0

    if stop is None and math.hypot(nvx, nvy) < m.rest_speed:
        stop = 1.0
        nvx = nvy = nw = 0.0

    cx, cy = _rot(yaw, m.com)
    px, py = x + cx + nvx * dt, y + cy + nvy * dt
    nyaw = wrap_angle(yaw + nw * dt)
    cx, cy = _rot(nyaw, m.com)
    return px - cx, py - cy, nyaw, nvx, nvy, nw, stop


def step_slide(state: SlideState, physics: ObjectPhysics, props: MassProperties, hit: HitSpec,
               g: float, dt: float, friction_dir: str = "velocity",
               rest_speed: float = DEFAULT_REST_SPEED) -> SlideState:
    """Advance the sliding object by one step of ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be > 0")
    m = _model(physics, props, hit, g, friction_dir, rest_speed)
    x, y, yaw, vx, vy, w, _ = _step(state.x, state.y, state.yaw, *state.v, state.omega, m, dt)
    return SlideState(x, y, yaw, (vx, vy), w)


@dataclass(frozen=True, eq=False)
class SlideRun:
    """Result of integrating a slide: the visited states (one row
    ``x, y, yaw, vx, vy, omega`` per step, starting with the initial state) and
    the sub-step time at which the object came to rest (``None`` if it never did)."""

    times: np.ndarray
    states: np.ndarray
    stop_time: Optional[float]

    def com_positions(self, physics: ObjectPhysics, props: MassProperties) -> np.ndarray:
        cx, cy = com_body(physics, props)
        yaw = self.states[:, 2]
        c, s = np.cos(yaw), np.sin(yaw)
        return np.stack(
            [self.states[:, 0] + c * cx - s * cy, self.states[:, 1] + s * cx + c * cy], axis=1
        )


def integrate_slide(state: SlideState, physics: ObjectPhysics, props: MassProperties, hit: HitSpec,
                    g: float, dt: float, max_duration: float, friction_dir: str = "velocity",
                    rest_speed: float = DEFAULT_REST_SPEED) -> SlideRun:
    """Step until rest or ``max_duration``; no impulse is applied here."""
    m = _model(physics, props, hit, g, friction_dir, rest_speed)
    n_max = int(round(max_duration / dt))
    s = (state.x, state.y, state.yaw, state.v[0], state.v[1], state.omega)
    rows = [s]
    stop_time = 0.0 if state.at_rest else None
    for k in range(n_max):
        if stop_time is not None:
            break
        *s, stop = _step(*s, m, dt)
        s = tuple(s)
        if not all(math.isfinite(c) for c in s):
            raise DivergenceError("slide simulation diverged", k)
        rows.append(s)
        if stop is not None:
            stop_time = (k + stop) * dt
    states = np.array(rows)
    return SlideRun(dt * np.arange(len(states)), states, stop_time)


def _lift(states: np.ndarray, times: np.ndarray, z: float) -> PoseTrajectory:
    yaw = states[:, 2]
    quats = np.stack([np.cos(yaw / 2), np.zeros_like(yaw), np.zeros_like(yaw), np.sin(yaw / 2)], axis=1)
    trans = np.stack([states[:, 0], states[:, 1], np.full(len(yaw), z)], axis=1)
    return PoseTrajectory(times, quats, trans)


def simulate_slide(initial: SlideState, physics: ObjectPhysics, props: MassProperties, hit: HitSpec,
                   g: float, dt: float, max_duration: float, z: float = 0.0,
                   restitution: float = 0.0, friction_dir: str = "velocity",
                   rest_speed: float = DEFAULT_REST_SPEED) -> PoseTrajectory:
    """Apply the hit, then slide until rest or ``max_duration``; one pose per step."""
    impulse = hit_impulse(hit, physics, props, initial.yaw, restitution)
    start = apply_impulse(initial, impulse, hit, physics, props)
    run = integrate_slide(start, physics, props, hit, g, dt, max_duration, friction_dir, rest_speed)
    return _lift(run.states, run.times, z)


# --------------------------------------------------------------------------
# whole episode
# --------------------------------------------------------------------------


@dataclass
class EpisodeSimulator:
    """Simulates the object part of a scenario for many candidate physics.

    The control stage does not depend on object physics, so identification
    reuses one instance per episode and only re-runs :meth:`object_trajectory`.
    """

    scenario: Scenario
    mesh: TriMesh
    props: MassProperties = field(init=False)
    z: float = field(init=False)

    def __post_init__(self):
        self.props = mass_properties(self.mesh)
        self.z = self.scenario.surface_z - float(self.mesh.vertices[:, 2].min())

    def object_trajectory(self, physics: ObjectPhysics, hit: Optional[HitSpec] = None) -> PoseTrajectory:
        sc = self.scenario
        hit = sc.hit if hit is None else hit
        x0, y0, yaw0 = sc.object_pose
        state = SlideState(x0, y0, yaw0)
        impulse = hit_impulse(hit, physics, self.props, state.yaw, sc.restitution)
        state = apply_impulse(state, impulse, hit, physics, self.props)
        m = _model(physics, self.props, hit, sc.gravity, sc.friction_dir, sc.rest_speed)

        steps = np.arange(0, sc.total_steps + 1, sc.record_stride)
        out = np.empty((len(steps), 3))
        s = (state.x, state.y, state.yaw, state.v[0], state.v[1], state.omega)
        rest = state.at_rest
        n = sc.hit_step  # global step index of the current state
        for j, target in enumerate(steps):
            if target <= sc.hit_step:
                out[j] = (x0, y0, state.yaw)
                continue
            while n < target and not rest:
                *s, stop = _step(*s, m, sc.dt)
                n += 1
                rest = stop is not None
            if not (math.isfinite(s[0]) and math.isfinite(s[1]) and math.isfinite(s[2])):
                raise DivergenceError("slide simulation diverged", n)
            out[j] = s[:3]
        return _lift(out, steps * sc.dt, self.z)


def simulate_episode(scenario: Scenario, pd: PDParams, physics: ObjectPhysics, mesh: TriMesh,
                     ee_speed_fn: Optional[Callable[[JointTrajectory, int], float]] = None,
                     ) -> tuple[JointTrajectory, PoseTrajectory]:
    """Run Control, Hit and Slide for one scenario.

    ``ee_speed_fn(joints, hit_step)`` optionally replaces the scenario's
    end-effector speed with one derived from the simulated joints.
    """
    joints = simulate_pd(pd, scenario.controls, scenario.initial_joints,
                         scenario.initial_joint_velocities, scenario.dt)
    hit = scenario.hit
    if ee_speed_fn is not None:
        hit = replace(hit, ee_speed=float(ee_speed_fn(joints, scenario.hit_step)))
    obj = EpisodeSimulator(scenario, mesh).object_trajectory(physics, hit)
    return joints, obj
