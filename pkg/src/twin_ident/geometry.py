"""Rigid transforms, triangle meshes, mass properties and ADD / ADD-S pose metrics.

All lengths are meters. Quaternions are stored scalar-first ``(w, x, y, z)`` and
canonicalized to ``w >= 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy.spatial import cKDTree

DEFAULT_MODEL_POINTS = 512
BRUTE_FORCE_LIMIT = 256
NEIGHBOR_LIST_SIZE = 16


class MeshFormatError(ValueError):
    """Raised for malformed OBJ input; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


# --------------------------------------------------------------------------
# quaternion helpers (vectorized over leading axes)
# --------------------------------------------------------------------------


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    norm = np.sqrt(np.sum(q * q, axis=-1, keepdims=True))
    if np.any(norm == 0) or not np.all(np.isfinite(norm)):
        raise ValueError("quaternion must be finite and non-zero")
    # leave near-unit quaternions untouched so re-reading written values is bitwise stable
    q = np.where(np.abs(norm - 1.0) > 1e-12, q / norm, q)
    sign = np.where(q[..., :1] < 0, -1.0, 1.0)
    return q * sign


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=float), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=float), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions of shape ``(..., 4)``."""
    w, x, y, z = np.moveaxis(np.asarray(q, dtype=float), -1, 0)
    m = np.empty(np.shape(w) + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_rotvec(rotvec: np.ndarray) -> np.ndarray:
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        # second-order expansion keeps tiny rotations accurate
        q = np.array([1.0 - angle * angle / 8.0, *(0.5 * rotvec)])
    else:
        axis = rotvec / angle
        q = np.array([np.cos(angle / 2), *(np.sin(angle / 2) * axis)])
    return q


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    q = _canonical_quat(q)
    vec = q[1:]
    s = np.linalg.norm(vec)
    if s < 1e-15:
        return 2.0 * vec
    angle = 2.0 * np.arctan2(s, q[0])
    return vec / s * angle


def transform_points(rotations: np.ndarray, translations: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply ``K`` rigid transforms to ``N`` points, returning ``(K, N, 3)``.

    The sum is spelled out per component so the result for a pose does not depend
    on how many other poses are batched with it.
    """
    R = np.asarray(rotations, dtype=float)[:, None, :, :]
    t = np.asarray(translations, dtype=float)[:, None, :]
    p = np.asarray(points, dtype=float)[None, :, :]
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    out = np.empty((R.shape[0], p.shape[1], 3))
    for i in range(3):
        out[..., i] = R[..., i, 0] * x + R[..., i, 1] * y + R[..., i, 2] * z + t[..., i]
    return out


# --------------------------------------------------------------------------
# Pose
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid transform ``x -> R x + t`` with a canonical unit quaternion."""

    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = _canonical_quat(np.asarray(self.rotation, dtype=float).reshape(4))
        t = np.array(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        q.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_rotvec(cls, rotvec, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(quat_from_rotvec(rotvec), translation)

    @classmethod
    def from_planar(cls, x: float, y: float, yaw: float, z: float = 0.0) -> "Pose":
        return cls(np.array([np.cos(yaw / 2), 0.0, 0.0, np.sin(yaw / 2)]), (x, y, z))

    @cached_property
    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first."""
        q = quat_multiply(self.rotation, other.rotation)
        return Pose(q, self.matrix @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        q = self.rotation * np.array([1.0, -1.0, -1.0, -1.0])
        return Pose(q, -(self.matrix.T @ self.translation))

    def apply(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return transform_points(self.matrix[None], self.translation[None], pts)[0]

    def rotvec(self) -> np.ndarray:
        return quat_to_rotvec(self.rotation)

    def angle_to(self, other: "Pose") -> float:
        """Rotation angle (rad) of ``self^-1 ∘ other``."""
        d = quat_multiply(self.rotation * np.array([1.0, -1.0, -1.0, -1.0]), other.rotation)
        return float(2.0 * np.arctan2(np.linalg.norm(d[1:]), abs(d[0])))

    def distance_to(self, other: "Pose") -> float:
        return float(np.linalg.norm(self.translation - other.translation))

    def yaw(self) -> float:
        w, x, y, z = self.rotation
        return float(np.arctan2(2 * (w * z + x * y), 1 - 2 * (y * y + z * z)))

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"Pose(q=[{q}], t=[{t}])"


# --------------------------------------------------------------------------
# trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class PoseTrajectory:
    """Time-stamped poses stored as arrays: ``times (K,)``, ``quaternions (K, 4)``,
    ``translations (K, 3)``."""

    times: np.ndarray
    quaternions: np.ndarray
    translations: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        times = np.array(self.times, dtype=float).reshape(-1)
        quats = _canonical_quat(np.array(self.quaternions, dtype=float).reshape(-1, 4))
        trans = np.array(self.translations, dtype=float).reshape(-1, 3)
        if len(times) < 1:
            raise ValueError("trajectory needs at least one sample")
        if not (len(times) == len(quats) == len(trans)):
            raise ValueError("times, quaternions and translations differ in length")
        if np.any(np.diff(times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(trans))):
            raise ValueError("trajectory contains non-finite values")
        for arr in (times, quats, trans):
            arr.flags.writeable = False
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "quaternions", quats)
        object.__setattr__(self, "translations", trans)

    @classmethod
    def from_poses(cls, times: Sequence[float], poses: Iterable[Pose], frame: str = "world"):
        poses = list(poses)
        return cls(
            np.asarray(times, dtype=float),
            np.array([p.rotation for p in poses]).reshape(-1, 4),
            np.array([p.translation for p in poses]).reshape(-1, 3),
            frame,
        )

    def __len__(self) -> int:
        return len(self.times)

    def __getitem__(self, i: int) -> Pose:
        return Pose(self.quaternions[i], self.translations[i])

    @property
    def poses(self) -> list[Pose]:
        return [self[i] for i in range(len(self))]

    @cached_property
    def matrices(self) -> np.ndarray:
        return quat_to_matrix(self.quaternions)

    def resample_nearest(self, times: Sequence[float]) -> "PoseTrajectory":
        """Pick, for every requested time, the sample with the nearest timestamp."""
        times = np.asarray(times, dtype=float)
        idx = np.searchsorted(self.times, times)
        idx = np.clip(idx, 1, len(self.times) - 1) if len(self.times) > 1 else np.zeros_like(idx)
        if len(self.times) > 1:
            left = self.times[idx - 1]
            right = self.times[idx]
            idx = np.where(np.abs(times - left) <= np.abs(right - times), idx - 1, idx)
        return PoseTrajectory(times, self.quaternions[idx], self.translations[idx], self.frame)

    def equals(self, other: "PoseTrajectory") -> bool:
        return (
            self.frame == other.frame
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.quaternions, other.quaternions)
            and np.array_equal(self.translations, other.translations)
        )


# --------------------------------------------------------------------------
# meshes and point clouds
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh. Degenerate (zero-area) faces are dropped on construction."""

    vertices: np.ndarray
    faces: np.ndarray
    watertight: bool = field(init=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(v) == 0 or len(f) == 0:
            raise MeshFormatError("mesh has no vertices or no faces")
        if f.min() < 0 or f.max() >= len(v):
            raise MeshFormatError("face index out of range")
        if not np.all(np.isfinite(v)):
            raise MeshFormatError("non-finite vertex coordinates")
        area = _face_areas(v, f)
        f = f[area > 0]
        if len(f) == 0:
            raise MeshFormatError("mesh has zero surface area")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "watertight", _is_watertight(f))

    @cached_property
    def face_areas(self) -> np.ndarray:
        return _face_areas(self.vertices, self.faces)

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def transformed(self, pose: Pose) -> "TriMesh":
        return TriMesh(pose.apply(self.vertices), self.faces)

    def scaled(self, factor: float) -> "TriMesh":
        return TriMesh(self.vertices * factor, self.faces)


def _face_areas(v: np.ndarray, f: np.ndarray) -> np.ndarray:
    a, b, c = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _is_watertight(faces: np.ndarray) -> bool:
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return bool(np.all(counts == 2))


def merge_meshes(meshes: Sequence[TriMesh]) -> TriMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def box_mesh(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box with outward-facing triangles."""
    sx, sy, sz = np.asarray(size, dtype=float) / 2
    cx, cy, cz = center
    v = np.array(
        [[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)]
    ) + np.array([cx, cy, cz])
    # vertex index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriMesh(v, faces)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        p = np.array(self.points, dtype=float).reshape(-1, 3)
        p.flags.writeable = False
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self.points)

    @cached_property
    def neighbor_lists(self) -> tuple[np.ndarray, np.ndarray]:
        """Per point: indices of itself plus its nearest neighbors, the radius the
        list is guaranteed to cover, and the distance to the closest other point."""
        n = len(self.points)
        k = min(NEIGHBOR_LIST_SIZE + 1, n)
        dist, idx = self.kdtree.query(self.points, k=k)
        dist = np.asarray(dist).reshape(n, k)
        idx = np.asarray(idx).reshape(n, k)
        # a neighbor list that is the whole cloud covers every radius
        radius = np.full(n, np.inf) if k == n else dist[:, -1]
        nn1 = dist[:, 1] if k > 1 else np.full(n, np.inf)
        return idx, radius, nn1


# --------------------------------------------------------------------------
# mesh I/O
# --------------------------------------------------------------------------


def load_mesh(path) -> TriMesh:
    """Read a Wavefront OBJ file; polygons are fan-triangulated."""
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            tag = tokens[0]
            if tag == "v":
                try:
                    coords = [float(t) for t in tokens[1:4]]
                except ValueError:
                    raise MeshFormatError(f"bad vertex {line!r}", lineno) from None
                if len(coords) != 3:
                    raise MeshFormatError("vertex needs 3 coordinates", lineno)
                vertices.append(coords)
            elif tag == "f":
                idx = []
                for tok in tokens[1:]:
                    try:
                        i = int(tok.split("/")[0])
                    except ValueError:
                        raise MeshFormatError(f"bad face index {tok!r}", lineno) from None
                    if i < 0:
                        i = len(vertices) + i + 1
                    if i < 1 or i > len(vertices):
                        raise MeshFormatError(
                            f"face index {tok} out of range (have {len(vertices)} vertices)", lineno
                        )
                    idx.append(i - 1)
                if len(idx) < 3:
                    raise MeshFormatError("face needs at least 3 vertices", lineno)
                for j in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[j], idx[j + 1]))
    if not vertices or not faces:
        raise MeshFormatError(f"{path}: empty mesh")
    return TriMesh(np.array(vertices), np.array(faces))


def save_mesh(mesh: TriMesh, path) -> None:
    lines = [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# sampling and mass properties
# --------------------------------------------------------------------------


def sample_surface(mesh: TriMesh, n: int = DEFAULT_MODEL_POINTS, seed: int = 0) -> PointCloud:
    """Area-weighted surface samples.

    Face counts are allocated proportionally to area (largest remainder), then each
    point is drawn uniformly inside its face, so the per-face counts do not
    fluctuate with the seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.face_areas
    total = areas.sum()
    if not total > 0:
        raise ValueError("mesh has zero surface area")
    quota = n * areas / total
    counts = np.floor(quota).astype(np.int64)
    remainder = quota - counts
    short = n - counts.sum()
    counts[np.argsort(-remainder, kind="stable")[:short]] += 1

    rng = np.random.default_rng(seed)
    face_idx = np.repeat(np.arange(len(areas)), counts)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    tri = mesh.vertices[mesh.faces[face_idx]]
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
    return PointCloud(pts)


@dataclass(frozen=True, eq=False)
class MassProperties:
    volume: float
    centroid: np.ndarray
    unit_inertia: np.ndarray  # per unit mass, about the centroid

    @property
    def yaw_inertia(self) -> float:
        return float(self.unit_inertia[2, 2])


def mass_properties(mesh: TriMesh) -> MassProperties:
    """Volume, centroid and unit-mass inertia tensor of a closed mesh.

    Surface integrals of the monomials up to degree two are accumulated per face
    (divergence theorem); inward-wound meshes are handled by the sign of the volume.
    """
    if not mesh.watertight:
        raise ValueError("mass properties need a watertight mesh")
    # integrate about the vertex mean to limit cancellation for far-off meshes
    ref = mesh.vertices.mean(axis=0)
    v = (mesh.vertices - ref)[mesh.faces]
    x0, x1, x2 = v[:, 0].T, v[:, 1].T, v[:, 2].T  # each (3, F): rows x, y, z
    d = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]).T

    t0 = x0 + x1
    f1 = t0 + x2
    t1 = x0 * x0
    t2 = t1 + x1 * t0
    f2 = t2 + x2 * f1
    f3 = x0 * t1 + x1 * t2 + x2 * f2
    g0 = f2 + x0 * (f1 + x0)
    g1 = f2 + x1 * (f1 + x1)
    g2 = f2 + x2 * (f1 + x2)

    X, Y, Z = 0, 1, 2
    integ = np.array(
        [
            np.sum(d[X] * f1[X]) / 6,
            np.sum(d[X] * f2[X]) / 24,
            np.sum(d[Y] * f2[Y]) / 24,
            np.sum(d[Z] * f2[Z]) / 24,
            np.sum(d[X] * f3[X]) / 60,
            np.sum(d[Y] * f3[Y]) / 60,
            np.sum(d[Z] * f3[Z]) / 60,
            np.sum(d[X] * (x0[Y] * g0[X] + x1[Y] * g1[X] + x2[Y] * g2[X])) / 120,
            np.sum(d[Y] * (x0[Z] * g0[Y] + x1[Z] * g1[Y] + x2[Z] * g2[Y])) / 120,
            np.sum(d[Z] * (x0[X] * g0[Z] + x1[X] * g1[Z] + x2[X] * g2[Z])) / 120,
        ]
    )
    if integ[0] < 0:
        integ = -integ
    vol = integ[0]
    if not vol > 0:
        raise ValueError("mesh encloses no volume")
    c = integ[1:4] / vol
    xx, yy, zz = integ[4:7] / vol
    xy, yz, zx = integ[7:10] / vol
    inertia = np.array(
        [
            [yy + zz - (c[1] ** 2 + c[2] ** 2), -(xy - c[0] * c[1]), -(zx - c[2] * c[0])],
            [-(xy - c[0] * c[1]), xx + zz - (c[2] ** 2 + c[0] ** 2), -(yz - c[1] * c[2])],
            [-(zx - c[2] * c[0]), -(yz - c[1] * c[2]), xx + yy - (c[0] ** 2 + c[1] ** 2)],
        ]
    )
    return MassProperties(float(vol), c + ref, inertia)


# --------------------------------------------------------------------------
# ADD / ADD-S
# --------------------------------------------------------------------------


def _check_cloud(points: PointCloud) -> None:
    if len(points) == 0:
        raise ValueError("point cloud is empty")


def _distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a - b
    return np.sqrt(d[..., 0] * d[..., 0] + d[..., 1] * d[..., 1] + d[..., 2] * d[..., 2])


def _planar_distances(ax, ay, az, bx, by, bz) -> np.ndarray:
    # same arithmetic as _distances, on contiguous coordinate planes
    dx = ax - bx
    dy = ay - by
    dz = az - bz
    return np.sqrt(dx * dx + dy * dy + dz * dz)


@njit(cache=True)
def _near_search(Ax, Ay, Az, Bx, By, Bz, self_d, idx, radius, nn1, out):
    """Stages one and two of the nearest-point search; flags the rest as far."""
    K, N = self_d.shape
    far = np.zeros((K, N), dtype=np.bool_)
    for k in range(K):
        for i in range(N):
            d2 = 2.0 * self_d[k, i]
            if d2 < nn1[i] * (1.0 - 1e-9):
                out[k, i] = self_d[k, i]
            elif d2 < radius[i] * (1.0 - 1e-9):
                best = np.inf
                for c in idx[i]:
                    dx = Ax[k, i] - Bx[k, c]
                    dy = Ay[k, i] - By[k, c]
                    dz = Az[k, i] - Bz[k, c]
                    d = np.sqrt(dx * dx + dy * dy + dz * dz)
                    if d < best:
                        best = d
                out[k, i] = best
            else:
                far[k, i] = True
    return far


def _nearest_distances(A: np.ndarray, B: np.ndarray, self_d: np.ndarray, cloud: PointCloud,
                       Rh: np.ndarray, th: np.ndarray) -> np.ndarray:
    """For each pose k and point i: ``min_j |A[k, i] - B[k, j]|``.

    ``B[k]`` is the cloud under a rigid transform, so pairwise distances inside
    ``B[k]`` equal those of the cloud itself. A point that moved less than half the
    radius covered by its neighbor list has its exact nearest neighbor in that
    list (first checked with the list holding only itself). The remaining queries
    go through the cloud's k-d tree in the body frame. Candidate distances are
    always measured in world coordinates with the brute-force arithmetic, so the
    result matches brute force except for ties at the last ulp.
    """
    K, N, _ = A.shape
    if N <= BRUTE_FORCE_LIMIT:
        return _distances(A[:, :, None, :], B[:, None, :, :]).min(axis=2)

    idx, radius, nn1 = cloud.neighbor_lists
    Ax, Ay, Az = (np.ascontiguousarray(A[..., c]) for c in range(3))
    Bx, By, Bz = (np.ascontiguousarray(B[..., c]) for c in range(3))
    out = np.empty_like(self_d)
    far = _near_search(Ax, Ay, Az, Bx, By, Bz, self_d, idx, radius, nn1, out)
    if np.any(far):
        k2, i2 = np.nonzero(far)
        q_body = np.einsum("nij,ni->nj", Rh[k2], A[k2, i2] - th[k2])
        _, nn = cloud.kdtree.query(q_body, k=1)
        out[k2, i2] = _planar_distances(Ax[k2, i2], Ay[k2, i2], Az[k2, i2], Bx[k2, nn], By[k2, nn], Bz[k2, nn])
    return out


def pose_errors(T: PoseTrajectory | Sequence[Pose], That: PoseTrajectory | Sequence[Pose],
                points: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    """Per-pose ADD and ADD-S between two equally long pose sequences."""
    _check_cloud(points)
    Rt, tt = _stack(T)
    Rh, th = _stack(That)
    if len(Rt) != len(Rh):
        raise ValueError("pose sequences differ in length")
    # identical pose pairs (static and resting samples) are evaluated once
    key = np.concatenate([Rt.reshape(len(Rt), -1), tt, Rh.reshape(len(Rh), -1), th], axis=1)
    _, first, inverse = np.unique(key, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    X = points.points
    A = transform_points(Rt[first], tt[first], X)
    B = transform_points(Rh[first], th[first], X)
    self_d = _distances(A, B)
    add = self_d.mean(axis=1)
    adds = _nearest_distances(A, B, self_d, points, Rh[first], th[first]).mean(axis=1)
    return add[inverse], adds[inverse]


def _stack(poses) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(poses, PoseTrajectory):
        return poses.matrices, poses.translations
    poses = list(poses)
    return np.array([p.matrix for p in poses]).reshape(-1, 3, 3), np.array(
        [p.translation for p in poses]
    ).reshape(-1, 3)


def add_metric(T: Pose, That: Pose, points: PointCloud) -> float:
    """Mean distance between model points under the two poses."""
    return float(pose_errors([T], [That], points)[0][0])


def adds_metric(T: Pose, That: Pose, points: PointCloud) -> float:
    """Mean closest-point distance from ``T`` points to ``That`` points."""
    return float(pose_errors([T], [That], points)[1][0])


def check_aligned(real: PoseTrajectory, sim: PoseTrajectory, tol: float = 1e-6) -> None:
    if len(real) != len(sim):
        raise ValueError(f"trajectory lengths differ: {len(real)} vs {len(sim)}")
    if np.max(np.abs(real.times - sim.times)) > tol:
        raise ValueError("trajectory timestamps differ by more than 1e-6 s")


def trajectory_loss(real: PoseTrajectory, sim: PoseTrajectory, points: PointCloud) -> float:
    """Mean over samples of ADD + ADD-S."""
    check_aligned(real, sim)
    add, adds = pose_errors(real, sim, points)
    return float(np.mean(add + adds))
