import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twin_ident.geometry import (MeshFormatError, PointCloud, Pose, PoseTrajectory, TriMesh, add_metric,
                                 adds_metric, box_mesh, load_mesh, mass_properties, merge_meshes,
                                 pose_errors, sample_surface, save_mesh, trajectory_loss)

from oracles import CUBE_OBJ, CUBE_QUADS, cube_tris, nearest_oracle, paired_oracle

finite = st.floats(-3, 3, allow_nan=False)
rotvecs = st.tuples(finite, finite, finite).map(np.array)
translations = st.tuples(finite, finite, finite).map(np.array)
poses = st.builds(Pose.from_rotvec, rotvecs, translations)


def random_pose(rng, scale=1.0):
    return Pose.from_rotvec(rng.normal(size=3) * scale, rng.normal(size=3) * scale)


# --------------------------------------------------------------------------
# poses
# --------------------------------------------------------------------------


@given(poses, poses)
def test_quaternion_stays_unit_under_composition(a, b):
    for p in (a, b, a @ b, a.inverse(), (a @ b).inverse() @ a):
        assert abs(np.linalg.norm(p.rotation) - 1) < 1e-9
        assert p.rotation[0] >= 0


@given(poses)
def test_compose_with_inverse_is_identity(p):
    e = p @ p.inverse()
    assert e.angle_to(Pose.identity()) < 1e-9
    assert np.linalg.norm(e.translation) < 1e-9


@given(poses, poses, st.tuples(finite, finite, finite))
def test_compose_applies_right_pose_first(a, b, x):
    x = np.array(x)
    np.testing.assert_allclose((a @ b).apply(x), a.apply(b.apply(x)), atol=1e-9)


def test_rotvec_round_trip():
    rv = np.array([0.3, -1.2, 0.5])
    np.testing.assert_allclose(Pose.from_rotvec(rv).rotvec(), rv, atol=1e-12)


def test_planar_pose_yaw():
    p = Pose.from_planar(1.0, 2.0, 0.7, 0.1)
    assert p.yaw() == pytest.approx(0.7)
    np.testing.assert_allclose(p.apply([1.0, 0, 0])[0], [1 + math.cos(0.7), 2 + math.sin(0.7), 0.1])


def test_trajectory_requires_increasing_times():
    with pytest.raises(ValueError):
        PoseTrajectory([0.0, 0.0], [[1, 0, 0, 0]] * 2, [[0, 0, 0]] * 2)
    with pytest.raises(ValueError):
        PoseTrajectory([], np.zeros((0, 4)), np.zeros((0, 3)))


def test_resample_nearest_picks_closest_sample():
    traj = PoseTrajectory([0.0, 1.0, 2.0], [[1, 0, 0, 0]] * 3, [[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    out = traj.resample_nearest([0.1, 0.6, 1.4, 5.0])
    np.testing.assert_array_equal(out.translations[:, 0], [0, 1, 1, 2])
    np.testing.assert_array_equal(out.times, [0.1, 0.6, 1.4, 5.0])


# --------------------------------------------------------------------------
# meshes
# --------------------------------------------------------------------------


def test_load_unit_cube(tmp_path):
    p = tmp_path / "cube.obj"
    p.write_text(CUBE_OBJ + cube_tris())
    mesh = load_mesh(p)
    assert len(mesh.vertices) == 8 and len(mesh.faces) == 12
    assert mesh.watertight


def test_quads_are_fan_split(tmp_path):
    p = tmp_path / "quads.obj"
    p.write_text(CUBE_OBJ + CUBE_QUADS)
    mesh = load_mesh(p)
    assert len(mesh.faces) == 12 and mesh.watertight
    assert mass_properties(mesh).volume == pytest.approx(1.0, rel=1e-12)


def test_slash_and_negative_indices(tmp_path):
    p = tmp_path / "tri.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3/1/1 -2/2/2 -1/3/3\n")
    mesh = load_mesh(p)
    np.testing.assert_array_equal(mesh.faces, [[0, 1, 2]])
    assert not mesh.watertight


def test_out_of_range_index_reports_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text(CUBE_OBJ + "f 1 2 9\n")
    with pytest.raises(MeshFormatError) as err:
        load_mesh(p)
    assert err.value.line == 10
    assert "line 10" in str(err.value)


@pytest.mark.parametrize("text, line", [("v 0 0 zero\n", 1), ("v 0 0 0\nf 1 x 1\n", 2), ("v 0 0\n", 1)])
def test_parse_errors_report_line(tmp_path, text, line):
    p = tmp_path / "bad.obj"
    p.write_text(text)
    with pytest.raises(MeshFormatError) as err:
        load_mesh(p)
    assert err.value.line == line


def test_empty_mesh_is_rejected(tmp_path):
    p = tmp_path / "empty.obj"
    p.write_text("# nothing\nv 0 0 0\n")
    with pytest.raises(MeshFormatError):
        load_mesh(p)


def test_degenerate_faces_are_dropped():
    mesh = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]], [[0, 1, 2], [0, 1, 3]])
    assert len(mesh.faces) == 1


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mesh = box_mesh((0.16, 0.1, 0.06), rng.normal(size=3))
    save_mesh(mesh, tmp_path / "m.obj")
    back = load_mesh(tmp_path / "m.obj")
    np.testing.assert_array_equal(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.faces, mesh.faces)


# --------------------------------------------------------------------------
# surface sampling
# --------------------------------------------------------------------------


def test_cube_samples_are_area_weighted():
    mesh = box_mesh()
    pts = sample_surface(mesh, 6000, seed=0).points
    for axis in range(3):
        for side in (-0.5, 0.5):
            count = np.sum(np.abs(pts[:, axis] - side) < 1e-12)
            assert abs(count - 1000) <= 50


def test_samples_lie_inside_triangle():
    a, b, c = np.array([0.0, 0, 0]), np.array([2.0, 0, 0]), np.array([0.0, 1, 0])
    pts = sample_surface(TriMesh([a, b, c], [[0, 1, 2]]), 3, seed=7).points
    assert pts.shape == (3, 3)
    for p in pts:
        # barycentric coordinates from the 2-D system
        l1, l2 = np.linalg.solve(np.column_stack([b - a, c - a])[:2], (p - a)[:2])
        assert l1 >= -1e-12 and l2 >= -1e-12 and l1 + l2 <= 1 + 1e-12
        assert p[2] == 0


@given(st.integers(1, 300), st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_sampling_is_deterministic(n, seed):
    mesh = box_mesh((0.3, 0.2, 0.1))
    a = sample_surface(mesh, n, seed).points
    b = sample_surface(mesh, n, seed).points
    assert a.shape == (n, 3)
    assert a.tobytes() == b.tobytes()


def test_sampling_rejects_bad_count():
    with pytest.raises(ValueError):
        sample_surface(box_mesh(), 0)


# --------------------------------------------------------------------------
# mass properties
# --------------------------------------------------------------------------


def test_unit_cube_mass_properties():
    mp = mass_properties(box_mesh())
    assert mp.volume == pytest.approx(1.0, rel=1e-12)
    np.testing.assert_allclose(mp.centroid, 0, atol=1e-12)
    np.testing.assert_allclose(mp.unit_inertia, np.eye(3) / 6, atol=1e-12)


def test_scaled_and_translated_cube():
    assert mass_properties(box_mesh().scaled(2.0)).volume == pytest.approx(8.0, rel=1e-12)
    mp = mass_properties(box_mesh(center=(0.5, 0, 0)))
    np.testing.assert_allclose(mp.centroid, [0.5, 0, 0], atol=1e-12)
    np.testing.assert_allclose(mp.unit_inertia, np.eye(3) / 6, atol=1e-12)


@given(st.tuples(*[st.floats(0.01, 5)] * 3), st.tuples(*[st.floats(-5, 5)] * 3))
@settings(max_examples=50)
def test_box_matches_closed_form(size, center):
    a, b, c = size
    mp = mass_properties(box_mesh(size, center))
    assert mp.volume == pytest.approx(a * b * c, rel=1e-9)
    expect = np.diag([b * b + c * c, a * a + c * c, a * a + b * b]) / 12
    np.testing.assert_allclose(mp.unit_inertia, expect, rtol=1e-9, atol=1e-9 * max(size) ** 2)


def test_regular_tetrahedron():
    a = 0.3
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) * a / (2 * math.sqrt(2))
    mesh = TriMesh(v, [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    mp = mass_properties(mesh)
    assert mp.volume == pytest.approx(a**3 / (6 * math.sqrt(2)), rel=1e-9)
    np.testing.assert_allclose(mp.centroid, 0, atol=1e-12)
    # any axis through the centroid: I = m a^2 / 20
    np.testing.assert_allclose(mp.unit_inertia, np.eye(3) * a * a / 20, rtol=1e-9, atol=1e-15)


def test_inward_winding_gives_same_properties():
    mesh = box_mesh((0.2, 0.3, 0.4), (1, 2, 3))
    flipped = TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    a, b = mass_properties(mesh), mass_properties(flipped)
    assert a.volume == pytest.approx(b.volume, rel=1e-12)
    np.testing.assert_allclose(a.unit_inertia, b.unit_inertia, rtol=1e-12)


@given(poses)
@settings(max_examples=30)
def test_inertia_rotates_as_a_tensor(p):
    mesh = box_mesh((0.16, 0.1, 0.06))
    base = mass_properties(mesh)
    moved = mass_properties(mesh.transformed(p))
    R = p.matrix
    np.testing.assert_allclose(moved.unit_inertia, R @ base.unit_inertia @ R.T, atol=1e-12)
    np.testing.assert_allclose(moved.centroid, p.translation, atol=1e-9)
    assert np.all(np.linalg.eigvalsh(moved.unit_inertia) > 0)


def test_two_boxes_follow_parallel_axis_theorem():
    s1, c1 = np.array([0.2, 0.1, 0.1]), np.array([-0.3, 0.0, 0.05])
    s2, c2 = np.array([0.1, 0.3, 0.2]), np.array([0.4, 0.1, -0.2])
    mp = mass_properties(merge_meshes([box_mesh(s1, c1), box_mesh(s2, c2)]))
    v1, v2 = np.prod(s1), np.prod(s2)
    com = (v1 * c1 + v2 * c2) / (v1 + v2)
    total = np.zeros((3, 3))
    for s, c, v in ((s1, c1, v1), (s2, c2, v2)):
        d = c - com
        local = np.diag([s[1] ** 2 + s[2] ** 2, s[0] ** 2 + s[2] ** 2, s[0] ** 2 + s[1] ** 2]) / 12
        total += v * (local + (d @ d) * np.eye(3) - np.outer(d, d))
    assert mp.volume == pytest.approx(v1 + v2, rel=1e-12)
    np.testing.assert_allclose(mp.centroid, com, atol=1e-12)
    np.testing.assert_allclose(mp.unit_inertia, total / (v1 + v2), atol=1e-12)


def test_open_mesh_has_no_mass_properties():
    mesh = box_mesh()
    with pytest.raises(ValueError):
        mass_properties(TriMesh(mesh.vertices, mesh.faces[:-1]))


# --------------------------------------------------------------------------
# ADD / ADD-S
# --------------------------------------------------------------------------


def square_cloud(half_diagonal=0.1):
    r = half_diagonal
    return PointCloud([[r, 0, 0], [0, r, 0], [-r, 0, 0], [0, -r, 0]])


def test_add_examples():
    cloud = PointCloud(np.random.default_rng(0).normal(size=(20, 3)))
    T = Pose.from_rotvec([0.1, 0.2, 0.3], [1, 2, 3])
    assert add_metric(T, T, cloud) == 0
    assert add_metric(Pose(), Pose(translation=(0.03, 0, 0)), cloud) == pytest.approx(0.03, abs=1e-15)
    quarter = Pose.from_rotvec([0, 0, math.pi / 2])
    assert add_metric(Pose(), quarter, square_cloud()) == pytest.approx(0.1 * math.sqrt(2), rel=1e-12)


def test_adds_absorbs_symmetry():
    quarter = Pose.from_rotvec([0, 0, math.pi / 2])
    assert adds_metric(Pose(), quarter, square_cloud()) < 1e-9
    assert adds_metric(quarter, quarter, square_cloud()) == 0


def test_empty_cloud_is_rejected():
    with pytest.raises(ValueError):
        add_metric(Pose(), Pose(), PointCloud(np.zeros((0, 3))))
    with pytest.raises(ValueError):
        adds_metric(Pose(), Pose(), PointCloud(np.zeros((0, 3))))


@given(poses, poses, st.integers(1, 50), st.integers(0, 1000))
@settings(max_examples=200, deadline=None)
def test_metric_identities(T, H, n, seed):
    cloud = PointCloud(np.random.default_rng(seed).normal(size=(n, 3)) * 0.1)
    add, adds = add_metric(T, H, cloud), adds_metric(T, H, cloud)
    A, B = T.apply(cloud.points), H.apply(cloud.points)
    assert adds == np.mean(nearest_oracle(A, B))
    assert add == pytest.approx(np.mean(paired_oracle(A, B)), rel=1e-12, abs=1e-15)
    assert 0 <= adds <= add
    assert add_metric(T, T, cloud) == 0
    assert add_metric(H, T, cloud) == pytest.approx(add, rel=1e-12, abs=1e-15)


@given(poses, poses, poses)
@settings(max_examples=100, deadline=None)
def test_add_rigid_invariance(T, H, G):
    cloud = PointCloud(np.random.default_rng(1).normal(size=(30, 3)))
    assert add_metric(G @ T, G @ H, cloud) == pytest.approx(add_metric(T, H, cloud), abs=1e-9)


@pytest.mark.parametrize("n", [255, 256, 257, 600])
@pytest.mark.parametrize("scale", [1e-4, 3e-3, 0.03, 0.3, 3.0])
def test_adds_matches_brute_force_across_crossover(n, scale):
    rng = np.random.default_rng(n)
    cloud = sample_surface(box_mesh((0.16, 0.1, 0.06)), n, seed=1)
    T, H = random_pose(rng, scale), random_pose(rng, scale)
    A, B = T.apply(cloud.points), H.apply(cloud.points)
    assert adds_metric(T, H, cloud) == np.mean(nearest_oracle(A, B))


def test_batched_errors_match_single_pairs():
    rng = np.random.default_rng(3)
    cloud = sample_surface(box_mesh((0.16, 0.1, 0.06)), 512, seed=0)
    Ts = [random_pose(rng, 0.05) for _ in range(8)]
    Hs = [random_pose(rng, 0.05) for _ in range(8)]
    Ts[3], Hs[3] = Ts[2], Hs[2]  # duplicated pair
    add, adds = pose_errors(Ts, Hs, cloud)
    for i in range(8):
        assert add[i] == add_metric(Ts[i], Hs[i], cloud)
        assert adds[i] == adds_metric(Ts[i], Hs[i], cloud)


# --------------------------------------------------------------------------
# trajectory loss
# --------------------------------------------------------------------------


def _traj(poses_, times=None):
    times = np.arange(len(poses_)) * 0.1 if times is None else times
    return PoseTrajectory.from_poses(times, poses_)


def test_trajectory_loss_identical_is_zero():
    rng = np.random.default_rng(4)
    tr = _traj([random_pose(rng) for _ in range(5)])
    assert trajectory_loss(tr, tr, sample_surface(box_mesh(), 64)) == 0


def test_trajectory_loss_constant_offset():
    rng = np.random.default_rng(5)
    # points at least 0.1 m apart, so a 2 cm shift keeps every point's own copy nearest
    cloud = PointCloud([[0, 0, 0], [0.1, 0, 0], [0, 0.2, 0], [0, 0, 0.3], [0.25, 0.15, 0.05]])
    real = [random_pose(rng) for _ in range(6)]
    shifted = [Pose(p.rotation, p.translation + [0.02, 0, 0]) for p in real]
    add, adds = pose_errors(real, shifted, cloud)
    assert trajectory_loss(_traj(real), _traj(shifted), cloud) == pytest.approx(0.04, abs=1e-12)
    # brute force confirms every nearest neighbour is the shifted copy of the point itself
    for p, q, a, d in zip(real, shifted, add, adds):
        assert d == pytest.approx(np.mean(nearest_oracle(p.apply(cloud.points), q.apply(cloud.points))), abs=1e-15)
        assert d == pytest.approx(a, abs=1e-15)


def test_single_pose_trajectory_reduces_to_pair():
    cloud = sample_surface(box_mesh((0.2, 0.1, 0.05)), 100, seed=2)
    T, H = Pose.from_rotvec([0.1, 0, 0.3], [0, 0.1, 0]), Pose.from_rotvec([0, 0.2, 0], [0.05, 0, 0])
    loss = trajectory_loss(_traj([T]), _traj([H]), cloud)
    assert loss == add_metric(T, H, cloud) + adds_metric(T, H, cloud)


def test_trajectory_loss_rejects_misaligned_inputs():
    cloud = sample_surface(box_mesh(), 16)
    a = _traj([Pose()] * 3)
    with pytest.raises(ValueError):
        trajectory_loss(a, _traj([Pose()] * 2), cloud)
    with pytest.raises(ValueError):
        trajectory_loss(a, _traj([Pose()] * 3, [0.0, 0.1, 0.2 + 2e-6]), cloud)
    trajectory_loss(a, _traj([Pose()] * 3, [0.0, 0.1, 0.2 + 5e-7]), cloud)
