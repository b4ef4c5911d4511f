"""Silhouette rendering and mask-based camera pose refinement.

Camera convention: pinhole, x right, y down, z forward. ``object_pose`` maps mesh
coordinates into the camera frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .geometry import Pose, TriMesh, quat_from_rotvec, quat_multiply
from .optimize import OptResult, ParamBounds, SwarmConfig, pso_minimize

SUPERSAMPLE = 4
NEAR_PLANE = 1e-3
BCE_CLAMP = 1e-4
DELTA_NAMES = ("rx", "ry", "rz", "tx", "ty", "tz")


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def downscaled(self, factor: int) -> "CameraIntrinsics":
        return CameraIntrinsics(self.fx / factor, self.fy / factor, self.cx / factor, self.cy / factor,
                                self.width // factor, self.height // factor)


@dataclass(frozen=True, eq=False)
class SilhouetteMask:
    coverage: np.ndarray  # (height, width), values in [0, 1]

    def __post_init__(self):
        c = np.clip(np.array(self.coverage, dtype=float), 0.0, 1.0)
        if c.ndim != 2:
            raise ValueError("coverage must be a 2-D array")
        c.flags.writeable = False
        object.__setattr__(self, "coverage", c)

    @property
    def height(self) -> int:
        return self.coverage.shape[0]

    @property
    def width(self) -> int:
        return self.coverage.shape[1]

    def centroid(self) -> np.ndarray:
        """Coverage-weighted pixel centroid ``(u, v)`` using pixel centers."""
        h, w = self.coverage.shape
        total = self.coverage.sum()
        u = (self.coverage.sum(axis=0) * (np.arange(w) + 0.5)).sum() / total
        v = (self.coverage.sum(axis=1) * (np.arange(h) + 0.5)).sum() / total
        return np.array([u, v])

    def downsampled(self, factor: int) -> "SilhouetteMask":
        h, w = self.height // factor, self.width // factor
        c = self.coverage[: h * factor, : w * factor].reshape(h, factor, w, factor).mean(axis=(1, 3))
        return SilhouetteMask(c)

    def equals(self, other: "SilhouetteMask") -> bool:
        return np.array_equal(self.coverage, other.coverage)


def render_silhouette(mesh: TriMesh, object_pose: Pose, camera: CameraIntrinsics,
                      supersample: int = SUPERSAMPLE) -> SilhouetteMask:
    """Fractional silhouette coverage from ``supersample``² point samples per pixel.

    Triangles with any vertex closer than the near plane are dropped. For a closed
    mesh only camera-facing triangles are rasterized, which covers the same set.
    """
    S = supersample
    H, W = camera.height, camera.width
    buf = np.zeros((H * S, W * S), dtype=bool)
    P = object_pose.apply(mesh.vertices)
    tri = P[mesh.faces]  # (F, 3, 3)
    keep = np.all(tri[:, :, 2] > NEAR_PLANE, axis=1)
    if mesh.watertight:
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        keep &= np.einsum("ij,ij->i", n, tri[:, 0]) < 0
    tri = tri[keep]
    if len(tri) == 0:
        return SilhouetteMask(np.zeros((H, W)))
    # projected positions in supersample units, sample centers at integers
    us = (camera.fx * tri[:, :, 0] / tri[:, :, 2] + camera.cx) * S - 0.5
    vs = (camera.fy * tri[:, :, 1] / tri[:, :, 2] + camera.cy) * S - 0.5
    j0 = np.maximum(np.ceil(us.min(axis=1)), 0).astype(np.int64)
    j1 = np.minimum(np.floor(us.max(axis=1)), W * S - 1).astype(np.int64)
    i0 = np.maximum(np.ceil(vs.min(axis=1)), 0).astype(np.int64)
    i1 = np.minimum(np.floor(vs.max(axis=1)), H * S - 1).astype(np.int64)
    area = (us[:, 1] - us[:, 0]) * (vs[:, 2] - vs[:, 0]) - (vs[:, 1] - vs[:, 0]) * (us[:, 2] - us[:, 0])
    for k in np.nonzero((j1 >= j0) & (i1 >= i0) & (area != 0))[0]:
        cols = np.arange(j0[k], j1[k] + 1, dtype=float)[None, :]
        rows = np.arange(i0[k], i1[k] + 1, dtype=float)[:, None]
        u, v = us[k], vs[k]
        sign = 1.0 if area[k] > 0 else -1.0
        inside = np.ones((len(rows), cols.shape[1]), dtype=bool)
        for a, b in ((0, 1), (1, 2), (2, 0)):
            e = (u[b] - u[a]) * (rows - v[a]) - (v[b] - v[a]) * (cols - u[a])
            inside &= sign * e >= 0
        buf[i0[k] : i1[k] + 1, j0[k] : j1[k] + 1] |= inside
    cov = buf.reshape(H, S, W, S).mean(axis=(1, 3))
    return SilhouetteMask(cov)


def bce_mask_loss(reference: SilhouetteMask, rendered: SilhouetteMask) -> float:
    """Per-pixel binary cross-entropy with the reference coverage as the target.

    Binary references give the textbook loss. Soft references (for example a
    supersampled rendering) are kept soft so the loss is minimized exactly when
    the rendered coverage equals the reference.
    """
    if reference.coverage.shape != rendered.coverage.shape:
        raise ValueError(
            f"mask size mismatch: {reference.width}x{reference.height} vs {rendered.width}x{rendered.height}"
        )
    m = reference.coverage
    p = np.clip(rendered.coverage, BCE_CLAMP, 1.0 - BCE_CLAMP)
    # log(1 - p) rather than log1p(-p) so both clamp floors give the same term;
    # averaging per distinct term keeps a constant loss map exactly constant
    terms, counts = np.unique(m * np.log(p) + (1.0 - m) * np.log(1.0 - p), return_counts=True)
    return float(-math.fsum(terms * (counts / m.size)))


def apply_delta(base: Pose, delta) -> Pose:
    """Perturb ``base`` in camera axes: rotate by ``delta[:3]`` (axis-angle) about
    the base origin, then shift by ``delta[3:]``."""
    delta = np.asarray(delta, dtype=float)
    q = quat_multiply(quat_from_rotvec(delta[:3]), base.rotation)
    return Pose(q, base.translation + delta[3:])


def delta_between(base: Pose, pose: Pose) -> np.ndarray:
    """Inverse of :func:`apply_delta`."""
    rel = Pose(quat_multiply(pose.rotation, base.inverse().rotation))
    return np.concatenate([rel.rotvec(), pose.translation - base.translation])


def default_delta_bounds(rotation_deg: float = 10.0, translation: float = 0.05) -> ParamBounds:
    r = math.radians(rotation_deg)
    return ParamBounds([-r] * 3 + [-translation] * 3, [r] * 3 + [translation] * 3, DELTA_NAMES)


class ViewpointObjective:
    """Mean BCE over reference views for a candidate pose delta."""

    def __init__(self, references: Sequence[SilhouetteMask], mesh: TriMesh, coarse: Pose,
                 camera: CameraIntrinsics, views: Optional[Sequence[Pose]] = None):
        if not references:
            raise ValueError("need at least one reference mask")
        for ref in references:
            if (ref.width, ref.height) != (camera.width, camera.height):
                raise ValueError(
                    f"reference mask is {ref.width}x{ref.height}, camera is {camera.width}x{camera.height}"
                )
        self.references = list(references)
        self.views = [Pose.identity()] * len(references) if views is None else list(views)
        if len(self.views) != len(self.references):
            raise ValueError("one view transform per reference mask")
        self.mesh = mesh
        self.coarse = coarse
        self.camera = camera

    def pose(self, delta) -> Pose:
        return apply_delta(self.coarse, delta)

    def __call__(self, delta) -> float:
        pose = self.pose(delta)
        losses = [
            bce_mask_loss(ref, render_silhouette(self.mesh, view @ pose, self.camera))
            for ref, view in zip(self.references, self.views)
        ]
        return float(np.mean(losses))


def align_viewpoint(reference_masks: Sequence[SilhouetteMask], mesh: TriMesh, coarse: Pose,
                    camera: CameraIntrinsics, bounds: Optional[ParamBounds] = None,
                    config: SwarmConfig = SwarmConfig(), views: Optional[Sequence[Pose]] = None,
                    threads: int = 1, max_width: int = 320) -> tuple[Pose, OptResult]:
    """Refine ``coarse`` so rendered silhouettes match the reference masks.

    ``views[i]`` maps the aligned camera frame into the camera of mask ``i``
    (identity when every mask comes from the same camera). Masks wider than
    ``max_width`` are block-averaged for the search.
    """
    bounds = default_delta_bounds() if bounds is None else bounds
    if bounds.dim != 6:
        raise ValueError("viewpoint bounds need 6 dimensions")
    bounds = ParamBounds(bounds.lower, bounds.upper, DELTA_NAMES)
    # validate against native resolution before any downsampling
    ViewpointObjective(reference_masks, mesh, coarse, camera, views)
    factor = 1
    while camera.width // (factor * 2) >= max_width and camera.width // factor > max_width:
        factor *= 2
    refs, cam = list(reference_masks), camera
    if factor > 1:
        refs = [r.downsampled(factor) for r in refs]
        cam = camera.downscaled(factor)
    objective = ViewpointObjective(refs, mesh, coarse, cam, views)
    result = pso_minimize(objective, bounds, config, threads=threads)
    return objective.pose(result.best_params), result
