"""Point clouds, rigid transforms, and the preprocessing chain
(ground removal, shared-FOV cropping, multi-frame aggregation)."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class PointCloud:
    """(N, 3) float64 coordinates in meters plus optional per-point scalar channels."""

    points: np.ndarray
    attrs: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("PointCloud: coordinates must be finite")
        attrs = {k: np.asarray(v, dtype=np.float64).reshape(-1) for k, v in self.attrs.items()}
        for k, v in attrs.items():
            if len(v) != len(pts):
                raise ValueError(f"PointCloud: attr {k!r} has {len(v)} values for {len(pts)} points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "attrs", attrs)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))

    def select(self, keep: np.ndarray) -> "PointCloud":
        """Subset by boolean mask or index array, order preserved."""
        return PointCloud(self.points[keep], {k: v[keep] for k, v in self.attrs.items()})


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("RigidTransform: rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_euler(cls, yaw_deg: float = 0.0, pitch_deg: float = 0.0, roll_deg: float = 0.0,
                   translation=(0.0, 0.0, 0.0)) -> "RigidTransform":
        """Rotation Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
        y, p, r = np.deg2rad([yaw_deg, pitch_deg, roll_deg])
        rz = np.array([[np.cos(y), -np.sin(y), 0], [np.sin(y), np.cos(y), 0], [0, 0, 1]])
        ry = np.array([[np.cos(p), 0, np.sin(p)], [0, 1, 0], [-np.sin(p), 0, np.cos(p)]])
        rx = np.array([[1, 0, 0], [0, np.cos(r), -np.sin(r)], [0, np.sin(r), np.cos(r)]])
        return cls(rz @ ry @ rx, np.asarray(translation, dtype=np.float64))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return pts @ self.rotation.T + self.translation


@dataclass(frozen=True)
class FovSpec:
    """Yaw window in degrees (counterclockwise from +x) and axis-aligned bounds in meters."""

    yaw_min: float = -180.0
    yaw_max: float = 180.0
    x: tuple[float, float] = (-np.inf, np.inf)
    y: tuple[float, float] = (-np.inf, np.inf)
    z: tuple[float, float] = (-np.inf, np.inf)

    def __post_init__(self):
        if not self.yaw_min < self.yaw_max:
            raise ValueError("FovSpec: yaw_min must be < yaw_max")
        for name in ("x", "y", "z"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"FovSpec: {name} bounds must satisfy min < max")


# VoD-style front radar window and GPAL-style box (meters, degrees).
VOD_FOV = FovSpec(yaw_min=30.0, yaw_max=150.0, z=(-0.5, 3.5))
GPAL_FOV = FovSpec(x=(-16.0, 16.0), y=(-16.0, 16.0), z=(-0.5, 3.5))


def apply_transform(cloud: PointCloud, T: RigidTransform) -> PointCloud:
    return PointCloud(T.apply(cloud.points), cloud.attrs)


def remove_ground(cloud: PointCloud, dist_thresh: float = 0.1, max_iters: int = 200,
                  seed: int = 0, max_tilt_deg: float = 30.0, min_inlier_frac: float = 0.2) -> PointCloud:
    """Drop points within ``dist_thresh`` of the best near-horizontal RANSAC plane.

    Candidate planes whose normal is more than ``max_tilt_deg`` from +z are
    rejected. If the best plane holds fewer than ``min_inlier_frac`` of the
    points, the cloud is returned unchanged.
    """
    if dist_thresh <= 0:
        raise ValueError("remove_ground: dist_thresh must be positive")
    n = len(cloud)
    if n < 3:
        return cloud
    pts = cloud.points
    rng = np.random.default_rng(seed)
    cos_tilt = np.cos(np.deg2rad(max_tilt_deg))
    best_mask, best_count = None, 0
    for _ in range(max_iters):
        a, b, c = pts[rng.choice(n, 3, replace=False)]
        normal = np.cross(b - a, c - a)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal /= norm
        if abs(normal[2]) < cos_tilt:
            continue
        inliers = np.abs((pts - a) @ normal) <= dist_thresh
        count = int(inliers.sum())
        if count > best_count:
            best_mask, best_count = inliers, count
    if best_mask is None or best_count < min_inlier_frac * n:
        return cloud
    return cloud.select(~best_mask)


def crop_fov(cloud: PointCloud, fov: FovSpec) -> PointCloud:
    p = cloud.points
    yaw = np.degrees(np.arctan2(p[:, 1], p[:, 0]))
    keep = (yaw >= fov.yaw_min) & (yaw <= fov.yaw_max)
    for axis, (lo, hi) in enumerate((fov.x, fov.y, fov.z)):
        keep &= (p[:, axis] >= lo) & (p[:, axis] <= hi)
    return cloud.select(keep)


def aggregate_frames(frames: Sequence[tuple[PointCloud, RigidTransform]]) -> PointCloud:
    """Concatenate every frame mapped by its pose into the common frame (no deduplication)."""
    if not frames:
        raise ValueError("no frames")
    moved = [apply_transform(c, T) for c, T in frames]
    keys = set(moved[0].attrs)
    if any(set(m.attrs) != keys for m in moved):
        keys = set()
    return PointCloud(np.concatenate([m.points for m in moved]),
                      {k: np.concatenate([m.attrs[k] for m in moved]) for k in sorted(keys)})
