"""Gradient-free identification: particle swarm search and objective bindings."""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .dynamics import (
    EpisodeSimulator,
    JointTrajectory,
    ObjectPhysics,
    PDParams,
    Scenario,
    integrate_pd,
    simulate_pd,
)
from .geometry import PointCloud, PoseTrajectory, TriMesh, check_aligned, pose_errors

OBJECT_PARAM_NAMES = ("friction", "mass", "com_x", "com_y")
ROBOT_PARAM_NAMES = ("kp", "kd", "inertia")


class OptimizationError(ArithmeticError):
    pass


@dataclass(frozen=True, eq=False)
class ParamBounds:
    """Per-dimension search box. A dimension with ``lower == upper`` is held fixed."""

    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or len(lo) == 0:
            raise ValueError("lower and upper bounds need the same, non-zero length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("bounds must be finite")
        if np.any(lo > hi):
            raise ValueError("every lower bound must be <= its upper bound")
        names = tuple(self.names) or tuple(f"x{i}" for i in range(len(lo)))
        if len(names) != len(lo):
            raise ValueError("one name per dimension")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "names", names)

    @classmethod
    def from_pairs(cls, pairs, names=()) -> "ParamBounds":
        pairs = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(pairs[:, 0], pairs[:, 1], tuple(names))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


@dataclass(frozen=True)
class SwarmConfig:
    particles: int = 32
    iterations: int = 150
    inertia: float = 0.729
    cognitive: float = 1.49445
    social: float = 1.49445
    velocity_clamp: float = 0.5
    seed: int = 0
    center_start: bool = True  # particle 0 starts at the box center (the prior guess)

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("swarm needs at least 2 particles")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 <= self.inertia <= 1:
            raise ValueError("inertia weight must lie in [0, 1]")
        if not (self.cognitive > 0 and self.social > 0):
            raise ValueError("cognitive and social coefficients must be > 0")
        if not self.velocity_clamp > 0:
            raise ValueError("velocity_clamp must be > 0")


@dataclass(eq=False)
class OptResult:
    best_params: np.ndarray
    best_loss: float
    history: list[float]
    best_params_history: list[np.ndarray]
    evaluations: int
    names: tuple[str, ...] = ()

    def write_trace(self, path) -> None:
        """CSV with one row per iteration: iteration, best_loss, best params."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "best_loss", *self.names])
            for i, (loss, x) in enumerate(zip(self.history, self.best_params_history)):
                w.writerow([i, repr(float(loss)), *(repr(float(v)) for v in x)])


def reflect(x: np.ndarray, v: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """Mirror coordinates back into ``[lo, hi]`` and flip the matching velocity
    components. Works for arbitrarily large overshoots."""
    span = hi - lo
    fixed = span == 0
    safe = np.where(fixed, 1.0, span)
    rel = (x - lo) / safe
    period = np.floor(rel / 2.0)
    frac = rel - 2.0 * period  # in [0, 2)
    mirrored = frac > 1.0
    outside = (rel < 0.0) | (rel > 1.0)
    rel = np.where(mirrored, 2.0 - frac, frac)
    new_x = np.where(outside, lo + rel * safe, x)
    new_x = np.clip(new_x, lo, hi)
    new_v = np.where(outside & mirrored, -v, v)
    new_x = np.where(fixed, lo, new_x)
    new_v = np.where(fixed, 0.0, new_v)
    return new_x, new_v


def _latin_hypercube(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    return qmc.LatinHypercube(d=d, seed=rng).random(n)


class _Evaluator:
    """Runs the objective over a batch of particles; caches by exact vector bytes.
    Results come back in particle order, whatever the thread schedule."""

    def __init__(self, objective, threads: int, cache: bool):
        self.objective = objective
        self.threads = max(1, int(threads))
        self.cache: Optional[dict] = {} if cache else None
        self.calls = 0

    def _one(self, x: np.ndarray) -> float:
        try:
            f = float(self.objective(x))
        except (ArithmeticError, ValueError):
            f = math.inf
        return f if math.isfinite(f) else math.inf

    def __call__(self, X: np.ndarray) -> np.ndarray:
        keys = [x.tobytes() for x in X]
        todo = []
        for i, k in enumerate(keys):
            if self.cache is None or k not in self.cache:
                if k not in {keys[j] for j in todo}:
                    todo.append(i)
        rows = [X[i].copy() for i in todo]
        if self.threads > 1 and len(rows) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                vals = list(pool.map(self._one, rows))
        else:
            vals = [self._one(x) for x in rows]
        self.calls += len(rows)
        fresh = {keys[i]: v for i, v in zip(todo, vals)}
        if self.cache is not None:
            self.cache.update(fresh)
            lookup = self.cache
        else:
            lookup = fresh
        return np.array([lookup[k] for k in keys])


def pso_minimize(objective: Callable[[np.ndarray], float], bounds: ParamBounds,
                 config: SwarmConfig = SwarmConfig(), threads: int = 1, cache: bool = True,
                 callback: Optional[Callable[[int, np.ndarray], None]] = None) -> OptResult:
    """Global-best particle swarm minimization over a box.

    Particles start on a seeded Latin hypercube, with particle 0 moved to the box
    center when ``config.center_start`` is set. Out-of-bounds moves are reflected.
    Personal and global bests are updated in particle order after every batch of
    evaluations, so results do not depend on ``threads``. ``callback(iteration,
    positions)`` sees every evaluated batch.
    """
    rng = np.random.default_rng(config.seed)
    lo, hi = bounds.lower, bounds.upper
    span = bounds.span
    d = bounds.dim
    n = config.particles
    vmax = config.velocity_clamp * span
    evaluate = _Evaluator(objective, threads, cache)

    x = lo + _latin_hypercube(n, d, rng) * span
    if config.center_start:
        x[0] = bounds.center
    v = rng.uniform(-1.0, 1.0, (n, d)) * vmax
    x, v = reflect(x, v, lo, hi)
    if callback:
        callback(0, x)
    f = evaluate(x)
    if not np.any(np.isfinite(f)):
        raise OptimizationError("objective is non-finite for every initial particle")
    pbest, pbest_f = x.copy(), f.copy()
    g = int(np.argmin(pbest_f))
    gbest, gbest_f = pbest[g].copy(), float(pbest_f[g])
    history = [gbest_f]
    params_history = [gbest.copy()]

    for it in range(1, config.iterations + 1):
        r1 = rng.random((n, d))
        r2 = rng.random((n, d))
        v = (
            config.inertia * v
            + config.cognitive * r1 * (pbest - x)
            + config.social * r2 * (gbest - x)
        )
        v = np.clip(v, -vmax, vmax)
        x, v = reflect(x + v, v, lo, hi)
        if callback:
            callback(it, x)
        f = evaluate(x)
        for i in range(n):
            if f[i] < pbest_f[i]:
                pbest_f[i] = f[i]
                pbest[i] = x[i]
                if f[i] < gbest_f:
                    gbest_f = float(f[i])
                    gbest = x[i].copy()
        history.append(gbest_f)
        params_history.append(gbest.copy())

    return OptResult(gbest, gbest_f, history, params_history, evaluate.calls, bounds.names)


def random_search(objective: Callable[[np.ndarray], float], bounds: ParamBounds, evaluations: int,
                  seed: int = 0) -> OptResult:
    """Uniform random sampling baseline with the same result type as the swarm."""
    rng = np.random.default_rng(seed)
    best_x, best_f = None, math.inf
    history, params = [], []
    for _ in range(evaluations):
        x = bounds.lower + rng.random(bounds.dim) * bounds.span
        f = float(objective(x))
        if f < best_f:
            best_x, best_f = x, f
        history.append(best_f)
        params.append(best_x)
    return OptResult(best_x, best_f, history, params, evaluations, bounds.names)


def sensitivity(objective: Callable[[np.ndarray], float], x: np.ndarray, bounds: ParamBounds,
                rel_step: float = 1e-3) -> list[dict]:
    """Central-difference curvature of the loss along each parameter at ``x``.

    Steps are a fraction of the bound span and are shrunk to stay inside the box.
    A small curvature flags a weakly identified parameter.
    """
    x = np.asarray(x, dtype=float)
    f0 = float(objective(x))
    rows = []
    for i, name in enumerate(bounds.names):
        h = rel_step * bounds.span[i]
        if h == 0:
            rows.append({"parameter": name, "value": x[i], "step": 0.0, "curvature": float("nan")})
            continue
        h = min(h, max(x[i] - bounds.lower[i], 0), max(bounds.upper[i] - x[i], 0)) or h
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        curv = (float(objective(xp)) - 2 * f0 + float(objective(xm))) / (h * h)
        rows.append({"parameter": name, "value": float(x[i]), "step": float(h), "curvature": curv})
    return rows


# --------------------------------------------------------------------------
# object physics
# --------------------------------------------------------------------------


class ObjectObjective:
    """Sum over episodes of mean (ADD + ADD-S) between recorded and simulated
    object trajectories, as a function of ``(friction, mass, com_x, com_y)``."""

    def __init__(self, real: Sequence[PoseTrajectory], scenarios: Sequence[Scenario], mesh: TriMesh,
                 points: PointCloud):
        if len(real) == 0:
            raise ValueError("need at least one episode")
        if len(real) != len(scenarios):
            raise ValueError("one scenario per recorded trajectory")
        self.real = list(real)
        self.sims = [EpisodeSimulator(sc, mesh) for sc in scenarios]
        self.points = points
        for r, sc in zip(self.real, scenarios):
            if len(r) != len(sc.record_times) or np.max(np.abs(r.times - sc.record_times)) > 1e-6:
                raise ValueError("recorded trajectory is not on the scenario clock")

    def simulate(self, physics: ObjectPhysics) -> list[PoseTrajectory]:
        return [s.object_trajectory(physics) for s in self.sims]

    def episode_errors(self, physics: ObjectPhysics) -> list[tuple[np.ndarray, np.ndarray]]:
        out = []
        for r, sim in zip(self.real, self.simulate(physics)):
            check_aligned(r, sim)
            out.append(pose_errors(r, sim, self.points))
        return out

    def __call__(self, x) -> float:
        physics = ObjectPhysics.from_vector(x)
        return float(sum(np.mean(a + s) for a, s in self.episode_errors(physics)))


def identify_object(real: Sequence[PoseTrajectory], scenarios: Sequence[Scenario], mesh: TriMesh,
                    points: PointCloud, bounds: ParamBounds, config: SwarmConfig = SwarmConfig(),
                    threads: int = 1) -> tuple[ObjectPhysics, OptResult]:
    if bounds.dim != 4:
        raise ValueError("object bounds need 4 dimensions: friction, mass, com_x, com_y")
    if bounds.lower[1] <= 0 or bounds.lower[0] < 0:
        raise ValueError("mass bounds must be positive and friction bounds non-negative")
    bounds = ParamBounds(bounds.lower, bounds.upper, OBJECT_PARAM_NAMES)
    objective = ObjectObjective(real, scenarios, mesh, points)
    result = pso_minimize(objective, bounds, config, threads=threads)
    return ObjectPhysics.from_vector(result.best_params), result


# --------------------------------------------------------------------------
# robot controller
# --------------------------------------------------------------------------


@dataclass
class JointRecord:
    """Controls, initial state and measured response for one episode."""

    controls: np.ndarray
    initial_positions: np.ndarray
    initial_velocities: np.ndarray
    dt: float
    real: JointTrajectory

    @classmethod
    def from_scenario(cls, scenario: Scenario, real: JointTrajectory) -> "JointRecord":
        return cls(scenario.controls, scenario.initial_joints, scenario.initial_joint_velocities,
                   scenario.dt, real)


class JointObjective:
    """Mean absolute joint error of one joint over all episodes, as a function of
    that joint's ``(kp, kd, inertia)``."""

    def __init__(self, records: Sequence[JointRecord], joint: int):
        self.records = records
        self.joint = joint
        j = joint
        self._cases = [
            (np.ascontiguousarray(np.asarray(r.controls, dtype=float)[:, j : j + 1]),
             np.asarray(r.initial_positions, dtype=float)[j : j + 1],
             np.asarray(r.initial_velocities, dtype=float)[j : j + 1],
             float(r.dt), np.asarray(r.real.positions[:, j], dtype=float))
            for r in records
        ]

    def __call__(self, x) -> float:
        kp, kd, inertia = (np.array([float(v)]) for v in x[:3])
        total = 0.0
        for u, q0, qd0, dt, real in self._cases:
            pos, vel = integrate_pd(u, q0, qd0, kp, kd, inertia, dt)
            if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
                return math.inf  # diverged
            total += float(np.mean(np.abs(pos[:, 0] - real)))
        return total / len(self.records)


def identify_robot(records: Sequence[JointRecord], bounds: ParamBounds | Sequence[ParamBounds],
                   config: SwarmConfig = SwarmConfig(), threads: int = 1,
                   ) -> tuple[PDParams, list[OptResult]]:
    """Fit each joint's ``(kp, kd, inertia)`` independently.

    ``bounds`` is either one 3-D box shared by all joints or one box per joint.
    Scaling all three PD parameters together leaves the motion unchanged, so at
    least one of them (normally the reflected inertia) should be pinned with a
    zero-width bound.
    """
    if not records:
        raise ValueError("need at least one episode")
    joints = records[0].real.joints
    for r in records:
        if r.real.joints != joints or np.asarray(r.controls).shape[1] != joints:
            raise ValueError("episodes disagree on the number of joints")
        if len(r.real) != len(r.controls):
            raise ValueError("joint trajectory and controls differ in step count")
    per_joint = [bounds] * joints if isinstance(bounds, ParamBounds) else list(bounds)
    if len(per_joint) != joints:
        raise ValueError("need one bound box per joint")
    fits, results = [], []
    for j, b in enumerate(per_joint):
        if b.dim != 3:
            raise ValueError("robot bounds need 3 dimensions: kp, kd, inertia")
        b = ParamBounds(b.lower, b.upper, ROBOT_PARAM_NAMES)
        res = pso_minimize(JointObjective(records, j), b, config, threads=threads)
        fits.append(res.best_params)
        results.append(res)
    fits = np.array(fits)
    return PDParams(fits[:, 0], fits[:, 1], fits[:, 2]), results


def robot_records_loss(pd: PDParams, records: Sequence[JointRecord]) -> float:
    """Mean joint-space distance over all episodes (the per-episode robot loss, averaged)."""
    total = 0.0
    for r in records:
        sim = simulate_pd(pd, r.controls, r.initial_positions, r.initial_velocities, r.dt)
        d = sim.positions - r.real.positions
        total += float(np.mean(np.sqrt(np.sum(d * d, axis=1))))
    return total / len(records)
