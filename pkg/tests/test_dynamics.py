import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from twin_ident.dynamics import (GRAVITY, DivergenceError, EpisodeSimulator, HitSpec, JointTrajectory,
                                 ObjectPhysics, PDParams, Scenario, SlideState, apply_impulse, hit_impulse,
                                 integrate_slide, robot_loss, simulate_episode, simulate_pd, simulate_slide,
                                 step_slide, wrap_angle, yaw_inertia)
from twin_ident.geometry import MassProperties, box_mesh, mass_properties, sample_surface, trajectory_loss

from oracles import oscillator, slide_distance, slide_time

BOX = box_mesh((0.16, 0.10, 0.06))
PROPS = mass_properties(BOX)


def central_hit(speed=1.0, direction=(1.0, 0.0)):
    # contact on the face opposite the push direction, in line with the centroid
    return HitSpec((-0.08 * direction[0], -0.05 * direction[1]), direction, speed)


def props_with_yaw(unit_yaw):
    return MassProperties(1.0, np.zeros(3), np.diag([1.0, 1.0, unit_yaw]))


# --------------------------------------------------------------------------
# PD joints
# --------------------------------------------------------------------------


def test_equilibrium_is_held():
    pd = PDParams([80.0, 50.0], [12.0, 6.0], [0.9, 0.4])
    q0 = np.array([0.3, -0.2])
    traj = simulate_pd(pd, np.tile(q0, (200, 1)), q0, np.zeros(2), 1e-3)
    assert np.all(traj.positions == q0)
    np.testing.assert_allclose(traj.times, 1e-3 * np.arange(1, 201))


def test_undamped_oscillator_period():
    dt = 1e-4
    traj = simulate_pd(PDParams([100.0], [1e-12], [1.0]), np.ones(3000), [0.0], [0.0], dt)
    e = traj.positions[:, 0] - 1.0
    i = int(np.argmax(e > 0))  # first crossing of the target
    t = traj.times[i - 1] + dt * (-e[i - 1]) / (e[i] - e[i - 1])
    assert t == pytest.approx(math.pi / 20, rel=0.02)


def test_critical_damping_does_not_overshoot():
    kp, inertia = 100.0, 0.5
    pd = PDParams([kp], [2 * math.sqrt(kp * inertia)], [inertia])
    traj = simulate_pd(pd, np.ones(20000), [0.0], [0.0], 1e-4)
    assert traj.positions.max() <= 1.0 + 1e-6


@given(st.floats(10, 400), st.floats(0.1, 3.0), st.floats(0.2, 2.5), st.floats(-1, 1))
@settings(max_examples=30, deadline=None)
def test_pd_matches_closed_form(kp, inertia, zeta, target):
    kd = 2 * zeta * math.sqrt(kp * inertia)
    dt, steps = 1e-4, 10000
    traj = simulate_pd(PDParams([kp], [kd], [inertia]), np.full(steps, target), [0.0], [0.0], dt)
    exact = oscillator(traj.times, kp, kd, inertia, 0.0, target)
    assume(abs(target) > 1e-3)
    assert np.max(np.abs(traj.positions[:, 0] - exact)) <= 0.01 * abs(target)


def test_divergence_reports_step():
    pd = PDParams([1e6], [1e-9], [1.0])
    with pytest.raises(DivergenceError) as err:
        simulate_pd(pd, np.ones(5000), [0.0], [0.0], 1e-2)
    assert err.value.step is not None and 0 < err.value.step < 5000


def test_pd_rejects_bad_inputs():
    with pytest.raises(ValueError):
        PDParams([1.0], [-1.0], [1.0])
    with pytest.raises(ValueError):
        PDParams([1.0, 2.0], [1.0], [1.0])
    with pytest.raises(ValueError):
        simulate_pd(PDParams([1.0], [1.0], [1.0]), np.ones((5, 2)), [0.0], [0.0], 1e-3)


def _robot_case():
    pd = PDParams([80.0, 50.0], [12.0, 6.0], [0.9, 0.4])
    t = np.arange(300) * 1e-3
    controls = np.stack([0.5 * np.sin(6 * t), 0.3 * (t > 0.1)], axis=1)
    q0 = np.array([0.1, -0.1])
    return pd, controls, q0


def test_robot_loss_examples():
    pd, controls, q0 = _robot_case()
    real = simulate_pd(pd, controls, q0, np.zeros(2), 1e-3)
    assert robot_loss(pd, controls, real, q0, np.zeros(2), 1e-3) <= 1e-12
    shifted = JointTrajectory(real.times, real.positions + [0.1, 0.0], real.velocities)
    assert robot_loss(pd, controls, shifted, q0, np.zeros(2), 1e-3) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ValueError):
        robot_loss(pd, controls[:-1], real, q0, np.zeros(2), 1e-3)


def test_robot_loss_is_smallest_at_true_gain():
    pd, controls, q0 = _robot_case()
    real = simulate_pd(pd, controls, q0, np.zeros(2), 1e-3)
    losses = []
    for scale in (0.8, 0.9, 0.95, 1.0, 1.05, 1.1, 1.2):
        p = PDParams(pd.kp * [scale, 1.0], pd.kd, pd.inertia)
        losses.append(robot_loss(p, controls, real, q0, np.zeros(2), 1e-3))
    assert np.argmin(losses) == 3
    assert all(l > losses[3] for i, l in enumerate(losses) if i != 3)


# --------------------------------------------------------------------------
# hit
# --------------------------------------------------------------------------


def test_zero_speed_gives_zero_impulse():
    assert np.all(hit_impulse(central_hit(0.0), ObjectPhysics(0.3, 0.5), PROPS) == 0)


def test_central_hit_two_body_closed_form():
    imp = hit_impulse(central_hit(1.0), ObjectPhysics(0.3, 1.0), PROPS)
    np.testing.assert_allclose(imp, [0.5, 0.0], atol=1e-15)


@given(st.floats(0.005, 0.05), st.floats(0.05, 3.0))
def test_off_center_hit_transfers_less(offset, mass):
    physics = ObjectPhysics(0.3, mass)
    central = hit_impulse(central_hit(1.0), physics, PROPS)
    off = hit_impulse(HitSpec((-0.08, offset), (1.0, 0.0), 1.0), physics, PROPS)
    assert off[0] < central[0]


def test_restitution_scales_impulse():
    physics = ObjectPhysics(0.3, 1.0)
    a = hit_impulse(central_hit(1.0), physics, PROPS)
    b = hit_impulse(central_hit(1.0), physics, PROPS, restitution=0.5)
    np.testing.assert_allclose(b, 1.5 * a)


def test_impulse_through_com_leaves_spin():
    state = SlideState(0, 0, 0, (0, 0), 0.7)
    out = apply_impulse(state, [1.0, 0.0], central_hit(), ObjectPhysics(0.3, 2.0), PROPS)
    assert out.omega == 0.7
    assert out.v == (0.5, 0.0)


def test_off_center_impulse_spin():
    props = props_with_yaw(0.01)  # I_z = 2 kg * 0.01 m^2
    physics = ObjectPhysics(0.3, 2.0)
    assert yaw_inertia(physics, props) == pytest.approx(0.02)
    hit = HitSpec((0.0, 0.1), (1.0, 0.0), 1.0)
    out = apply_impulse(SlideState(0, 0, 0), [1.0, 0.0], hit, physics, props)
    assert out.omega == pytest.approx(-5.0, rel=1e-12)
    assert out.v == (0.5, 0.0)


def test_com_offset_adds_parallel_axis_term():
    shifted = ObjectPhysics(0.3, 2.0, (0.01, -0.02))
    assert yaw_inertia(shifted, PROPS) == pytest.approx(2.0 * (PROPS.yaw_inertia + 0.0005), rel=1e-12)


def test_hitspec_validation():
    with pytest.raises(ValueError):
        HitSpec((0, 0), (1.0, 0.1), 1.0)
    with pytest.raises(ValueError):
        HitSpec((0, 0), (1.0, 0.0), -1.0)
    with pytest.raises(ValueError):
        HitSpec((0, 0), (1.0, 0.0), 1.0, 0.0)


def test_physics_validation():
    with pytest.raises(ValueError):
        ObjectPhysics(-0.1, 1.0)
    with pytest.raises(ValueError):
        ObjectPhysics(0.1, 0.0)
    ObjectPhysics(0.1, 1.0, (0.07, 0.04)).check_against(BOX)
    with pytest.raises(ValueError):
        ObjectPhysics(0.1, 1.0, (0.09, 0.0)).check_against(BOX)


# --------------------------------------------------------------------------
# slide
# --------------------------------------------------------------------------


def test_frictionless_step():
    s = SlideState(0.1, 0.2, 0.3, (0.4, -0.5), 0.0)
    out = step_slide(s, ObjectPhysics(0.0, 1.0), PROPS, central_hit(), GRAVITY, 1e-3)
    assert out.v == s.v
    assert out.x == pytest.approx(0.1 + 0.4e-3, abs=1e-15)
    assert out.y == pytest.approx(0.2 - 0.5e-3, abs=1e-15)


def test_single_friction_step():
    s = SlideState(0, 0, 0, (1.0, 0.0), 0.0)
    out = step_slide(s, ObjectPhysics(0.3, 0.5), PROPS, central_hit(), 9.81, 0.001)
    assert out.v[0] == pytest.approx(0.997057, abs=1e-12)
    assert out.v[1] == 0


def test_rest_is_a_fixed_point():
    s = SlideState(0.1, -0.2, 1.0)
    out = step_slide(s, ObjectPhysics(0.3, 0.5, (0.01, 0.02)), PROPS, central_hit(), GRAVITY, 1e-3)
    assert (out.x, out.y, out.yaw, out.v, out.omega) == (s.x, s.y, s.yaw, (0.0, 0.0), 0.0)


def test_velocity_is_clamped_at_zero_crossing():
    s = SlideState(0, 0, 0, (0.001, 0.0), 0.0)
    out = step_slide(s, ObjectPhysics(1.0, 0.5), PROPS, central_hit(), GRAVITY, 1e-3)
    assert out.v == (0.0, 0.0) and out.at_rest


def test_yaw_is_wrapped():
    assert wrap_angle(math.pi) == math.pi
    assert wrap_angle(-math.pi) == math.pi
    assert SlideState(0, 0, 3 * math.pi / 2).yaw == pytest.approx(-math.pi / 2)


def test_central_slide_closed_form():
    mu, v0, m = 0.3, 1.0, 0.5
    physics = ObjectPhysics(mu, m)
    run = integrate_slide(SlideState(0, 0, 0, (v0, 0.0)), physics, PROPS, central_hit(), 9.81, 1e-4, 2.0)
    com = run.com_positions(physics, PROPS)
    assert np.linalg.norm(com[-1] - com[0]) == pytest.approx(0.16989, rel=1e-3)
    assert run.stop_time == pytest.approx(0.33975, rel=1e-3)
    assert np.linalg.norm(com[-1] - com[0]) == pytest.approx(slide_distance(v0, mu), rel=1e-3)
    assert run.stop_time == pytest.approx(slide_time(v0, mu), rel=1e-9)


def test_simulate_slide_from_hit():
    mu, m = 0.3, 0.5
    physics = ObjectPhysics(mu, m)
    hit = central_hit(speed=1.0 * m * (1.0 + 1.0 / m))  # leaves the object at 1 m/s
    traj = simulate_slide(SlideState(0, 0, 0), physics, PROPS, hit, 9.81, 1e-4, 2.0, z=0.03)
    assert traj.translations[-1, 0] == pytest.approx(0.16989, rel=1e-3)
    assert traj.times[-1] == pytest.approx(0.33975, rel=1e-3)
    assert np.all(traj.translations[:, 2] == 0.03)
    assert np.all(traj.quaternions[:, 1:3] == 0)


def test_zero_speed_hit_is_static():
    traj = simulate_slide(SlideState(0.1, 0.2, 0.5), ObjectPhysics(0.3, 0.5), PROPS, central_hit(0.0),
                          GRAVITY, 1e-3, 1.0)
    assert np.all(traj.translations == traj.translations[0])
    assert np.all(traj.quaternions == traj.quaternions[0])


@given(st.floats(0.05, 2.0), st.floats(-math.pi, math.pi), st.floats(0.1, 1.0))
@settings(max_examples=30, deadline=None)
def test_hit_through_com_does_not_rotate(speed, yaw, mu):
    direction = (math.cos(yaw), math.sin(yaw))
    hit = HitSpec((-0.08, 0.0), direction, speed)
    traj = simulate_slide(SlideState(0, 0, yaw), ObjectPhysics(mu, 0.5), PROPS, hit, GRAVITY, 1e-3, 2.0)
    assert abs(wrap_angle(traj[len(traj) - 1].yaw() - traj[0].yaw())) < 1e-9


state_strategy = st.builds(
    SlideState, st.floats(-1, 1), st.floats(-1, 1), st.floats(-3.1, 3.1),
    st.tuples(st.floats(-2, 2), st.floats(-2, 2)), st.floats(-20, 20),
)


@given(state_strategy, st.floats(0.0, 1.5), st.floats(0.1, 2.0), st.tuples(st.floats(-0.03, 0.03), st.floats(-0.03, 0.03)),
       st.sampled_from(["velocity", "hit_axis"]))
@settings(max_examples=200)
def test_translational_energy_never_grows(state, mu, mass, com, mode):
    physics = ObjectPhysics(mu, mass, com)
    hit = HitSpec((-0.08, 0.02), (1.0, 0.0), 1.0)
    out = step_slide(state, physics, PROPS, hit, GRAVITY, 1e-3, mode)
    assert out.v[0] ** 2 + out.v[1] ** 2 <= state.v[0] ** 2 + state.v[1] ** 2 + 1e-15


@given(state_strategy, st.floats(0.05, 1.5), st.tuples(st.floats(-0.03, 0.03), st.floats(-0.03, 0.03)))
@settings(max_examples=200)
def test_total_energy_never_grows_when_torque_opposes_spin(state, mu, com):
    physics = ObjectPhysics(mu, 0.5, com)
    hit = HitSpec((-0.08, 0.03), (1.0, 0.0), 1.0)
    out = step_slide(state, physics, PROPS, hit, GRAVITY, 1e-3)
    inertia = yaw_inertia(physics, PROPS)

    def energy(s):
        return 0.5 * physics.mass * (s.v[0] ** 2 + s.v[1] ** 2) + 0.5 * inertia * s.omega**2

    spin_grew = abs(out.omega) > abs(state.omega)
    assume(not spin_grew)  # torque opposed (or did not change) the spin
    assert energy(out) <= energy(state) * (1 + 1e-12) + 1e-15


def _final_position(physics, hit, yaw, dt):
    traj = simulate_slide(SlideState(0, 0, yaw), physics, PROPS, hit, GRAVITY, dt, 3.0)
    return traj.translations[-1, :2]


def test_first_order_convergence():
    rng = np.random.default_rng(11)
    for _ in range(3):
        physics = ObjectPhysics(rng.uniform(0.1, 0.8), rng.uniform(0.2, 1.0), rng.uniform(-0.02, 0.02, 2))
        hit = HitSpec((-0.08, rng.uniform(-0.03, 0.03)), (1.0, 0.0), rng.uniform(0.5, 1.5))
        ref = _final_position(physics, hit, 0.0, 1e-3 / 64)
        e1 = np.linalg.norm(_final_position(physics, hit, 0.0, 1e-3) - ref)
        e2 = np.linalg.norm(_final_position(physics, hit, 0.0, 5e-4) - ref)
        assert 1.5 <= e1 / e2 <= 2.5


# --------------------------------------------------------------------------
# episodes
# --------------------------------------------------------------------------


def _scenario(speed=0.5, controls=None, **kw):
    controls = np.zeros((100, 2)) if controls is None else controls
    return Scenario(controls=controls, dt=1e-3, hit=HitSpec((-0.08, 0.02), (1.0, 0.0), speed),
                    hit_step=len(controls), object_pose=(0.1, -0.1, 0.0), duration=0.6, record_stride=10, **kw)


def test_static_episode():
    sc = _scenario(speed=0.0)
    pd = PDParams([80.0, 50.0], [12.0, 6.0], [0.9, 0.4])
    joints, obj = simulate_episode(sc, pd, ObjectPhysics(0.3, 0.5), BOX)
    assert np.all(joints.positions == 0)
    assert np.all(obj.translations == obj.translations[0])
    np.testing.assert_allclose(obj.times, np.arange(0, 0.6 + 1e-9, 0.01))
    assert obj.translations[0, 2] == pytest.approx(0.03)


def test_episode_is_deterministic_and_self_consistent():
    t = np.arange(100) * 1e-3
    sc = _scenario(controls=np.stack([np.sin(10 * t), t], axis=1))
    pd = PDParams([80.0, 50.0], [12.0, 6.0], [0.9, 0.4])
    physics = ObjectPhysics(0.3, 0.5, (0.01, -0.02))
    j1, o1 = simulate_episode(sc, pd, physics, BOX)
    j2, o2 = simulate_episode(sc, pd, physics, BOX)
    assert j1.equals(j2) and o1.equals(o2)
    assert trajectory_loss(o1, o2, sample_surface(BOX, 128)) == 0
    # object stays put until the hit, then moves
    before = o1.times <= sc.hit_step * sc.dt
    assert np.all(o1.translations[before] == o1.translations[0])
    assert np.linalg.norm(o1.translations[-1] - o1.translations[0]) > 0.005
    # joint and object clocks are the same
    assert j1.times[-1] == pytest.approx(sc.hit_step * sc.dt)


def test_episode_simulator_reuses_mass_properties():
    sim = EpisodeSimulator(_scenario(), BOX)
    a = sim.object_trajectory(ObjectPhysics(0.3, 0.5))
    b = sim.object_trajectory(ObjectPhysics(0.6, 0.5))
    assert np.linalg.norm(a.translations[-1] - a.translations[0]) > np.linalg.norm(b.translations[-1] - b.translations[0])


def test_ee_speed_hook_overrides_hit():
    sc = _scenario(speed=0.5)
    pd = PDParams([80.0, 50.0], [12.0, 6.0], [0.9, 0.4])
    _, still = simulate_episode(sc, pd, ObjectPhysics(0.3, 0.5), BOX, ee_speed_fn=lambda j, k: 0.0)
    assert np.all(still.translations == still.translations[0])


def test_scenario_validation():
    with pytest.raises(ValueError):
        _scenario(friction_dir="sideways")
    with pytest.raises(ValueError):
        Scenario(controls=np.zeros((10, 1)), dt=0.0, hit=central_hit(), hit_step=0)
    with pytest.raises(ValueError):
        Scenario(controls=np.zeros((10, 1)), dt=1e-3, hit=central_hit(), hit_step=11)
