"""Voxel grids: voxelization, multi-scale mask/offset targets, and point reconstruction.

Arrays are laid out with spatial axes in (x, y, z) order. Masks have shape
``dims`` and offsets ``(3, *dims)`` in meters relative to the voxel center.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .autograd.checkpoint import load_checkpoint, save_checkpoint
from .geometry import PointCloud

# Scale denominators: 4 -> 1/4 resolution, 2 -> 1/2, 1 -> full.
SCALES = (4, 2, 1)


@dataclass(frozen=True)
class VoxelGridSpec:
    origin: tuple[float, float, float] = (0.0, -2.0, -0.5)
    dims: tuple[int, int, int] = (32, 32, 8)
    edge: tuple[float, float, float] = (0.125, 0.125, 0.125)

    def __post_init__(self):
        origin = tuple(float(v) for v in self.origin)
        dims = tuple(int(v) for v in self.dims)
        edge = tuple(float(v) for v in self.edge)
        if len(origin) != 3 or len(dims) != 3 or len(edge) != 3:
            raise ValueError("VoxelGridSpec: origin, dims and edge must have 3 components")
        if min(dims) < 1 or min(edge) <= 0:
            raise ValueError("VoxelGridSpec: dims must be >= 1 and edges > 0")
        if any(d % 4 for d in dims):
            raise ValueError(f"VoxelGridSpec: dims {dims} must all be divisible by 4")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "edge", edge)

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.origin) + np.asarray(self.dims) * np.asarray(self.edge)

    @property
    def l_length(self) -> float:
        """Half the largest voxel edge: the per-axis offset magnitude bound."""
        return max(self.edge) / 2.0

    def coarsen(self, factor: int) -> "VoxelGridSpec":
        dims = tuple(d // factor for d in self.dims)
        if any(d * factor != full for d, full in zip(dims, self.dims)):
            raise ValueError(f"coarsen: dims {self.dims} not divisible by {factor}")
        return _CoarseSpec(self.origin, dims, tuple(e * factor for e in self.edge))

    def centers(self, idx: np.ndarray) -> np.ndarray:
        """Voxel centers for an (M, 3) integer index array."""
        return np.asarray(self.origin) + (np.asarray(idx) + 0.5) * np.asarray(self.edge)

    def center_grid(self) -> np.ndarray:
        """(3, nx, ny, nz) array of every voxel center."""
        axes = [o + (np.arange(n) + 0.5) * e for o, n, e in zip(self.origin, self.dims, self.edge)]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    def as_dict(self) -> dict:
        return {"origin": list(self.origin), "dims": list(self.dims), "edge": list(self.edge)}


class _CoarseSpec(VoxelGridSpec):
    """Coarsened grid; exempt from the divisible-by-4 rule that only full grids need."""

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "edge", tuple(float(v) for v in self.edge))


# Full-scale presets. The GPAL vertical edge is ambiguous: 40 slabs of 0.1 m
# cover a 4 m column; the cubic variant uses 0.125 m throughout (32 slabs).
GPAL_GRID = VoxelGridSpec(origin=(-16.0, -16.0, -0.5), dims=(256, 256, 40), edge=(0.125, 0.125, 0.1))
GPAL_GRID_CUBIC = VoxelGridSpec(origin=(-16.0, -16.0, -0.5), dims=(256, 256, 32), edge=(0.125, 0.125, 0.125))
VOD_GRID = VoxelGridSpec(origin=(0.0, -8.0, -0.5), dims=(256, 256, 64), edge=(0.0625, 0.0625, 0.0625))


@dataclass(frozen=True)
class VoxelizedCloud:
    spec: VoxelGridSpec
    indices: np.ndarray  # (M, 3) int64, sorted by linear index
    counts: np.ndarray   # (M,) int64, >= 1
    means: np.ndarray    # (M, 3) float64, meters
    n_dropped: int = 0

    def __len__(self) -> int:
        return len(self.indices)

    def occupancy(self) -> np.ndarray:
        occ = np.zeros(self.spec.dims)
        occ[tuple(self.indices.T)] = 1.0
        return occ

    def dense_means(self) -> np.ndarray:
        out = np.zeros((3,) + self.spec.dims)
        out[(slice(None),) + tuple(self.indices.T)] = self.means.T
        return out

    def dense_counts(self) -> np.ndarray:
        out = np.zeros(self.spec.dims)
        out[tuple(self.indices.T)] = self.counts
        return out

    def mean_cloud(self) -> PointCloud:
        return PointCloud(self.means)


@dataclass
class ReconTargets:
    """Per-scale occupancy masks ``(nx/s, ny/s, nz/s)`` and offsets ``(3, ...)``."""

    masks: dict[int, np.ndarray]
    offsets: dict[int, np.ndarray]

    def __getitem__(self, scale: int) -> tuple[np.ndarray, np.ndarray]:
        return self.masks[scale], self.offsets[scale]


def voxelize(cloud: PointCloud, spec: VoxelGridSpec) -> VoxelizedCloud:
    """Half-open assignment ``floor((p - origin) / edge)``; out-of-range points are dropped."""
    pts = cloud.points
    idx = np.floor((pts - np.asarray(spec.origin)) / np.asarray(spec.edge)).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.asarray(spec.dims)), axis=1)
    return _group(spec, idx[inside], pts[inside], np.ones(int(inside.sum()), dtype=np.int64),
                  n_dropped=int(len(pts) - inside.sum()))


def _group(spec: VoxelGridSpec, idx: np.ndarray, pts: np.ndarray, weights: np.ndarray,
           n_dropped: int = 0) -> VoxelizedCloud:
    if len(idx) == 0:
        return VoxelizedCloud(spec, np.zeros((0, 3), np.int64), np.zeros(0, np.int64), np.zeros((0, 3)),
                              n_dropped)
    lin = np.ravel_multi_index(tuple(idx.T), spec.dims)
    keys, inv = np.unique(lin, return_inverse=True)
    counts = np.bincount(inv, weights=weights).astype(np.int64)
    sums = np.stack([np.bincount(inv, weights=pts[:, k] * weights) for k in range(3)], axis=1)
    means = sums / counts[:, None]
    voxels = np.stack(np.unravel_index(keys, spec.dims), axis=1).astype(np.int64)
    return VoxelizedCloud(spec, voxels, counts, means, n_dropped)


def coarsen_voxels(vc: VoxelizedCloud, factor: int) -> VoxelizedCloud:
    """Count-weighted pooling onto a grid ``factor`` times coarser.

    Equivalent to voxelizing the original points on the coarse grid: the
    pooled sum of (count * mean) is the sum of the member points.
    """
    coarse = vc.spec.coarsen(factor)
    return _group(coarse, vc.indices // factor, vc.means, vc.counts, vc.n_dropped)


def derive_targets(vc: VoxelizedCloud) -> ReconTargets:
    masks, offsets = {}, {}
    for s in SCALES:
        level = vc if s == 1 else coarsen_voxels(vc, s)
        mask = level.occupancy()
        off = np.zeros((3,) + level.spec.dims)
        if len(level):
            off[(slice(None),) + tuple(level.indices.T)] = (level.means - level.spec.centers(level.indices)).T
        masks[s], offsets[s] = mask, off
    return ReconTargets(masks, offsets)


def reconstruct(mask_prob: np.ndarray, offset: np.ndarray, spec: VoxelGridSpec,
                threshold: float = 0.5) -> PointCloud:
    """One point per voxel with ``mask_prob >= threshold`` at center + clamped offset."""
    mask_prob = np.asarray(mask_prob)
    offset = np.asarray(offset)
    if mask_prob.shape != spec.dims:
        raise ValueError(f"reconstruct: mask shape {mask_prob.shape}, expected {spec.dims}")
    if offset.shape != (3,) + spec.dims:
        raise ValueError(f"reconstruct: offset shape {offset.shape}, expected {(3,) + spec.dims}")
    if not 0.0 < threshold < 1.0:
        raise ValueError("reconstruct: threshold must lie in (0, 1)")
    idx = np.argwhere(mask_prob >= threshold)
    if len(idx) == 0:
        return PointCloud.empty()
    half = np.asarray(spec.edge) / 2.0
    off = np.clip(offset[(slice(None),) + tuple(idx.T)].T, -half, half)
    return PointCloud(spec.centers(idx) + off)


def voxel_iou(mask_a: np.ndarray, mask_b: np.ndarray, threshold: float = 0.5) -> float:
    a = np.asarray(mask_a) >= threshold
    b = np.asarray(mask_b) >= threshold
    if a.shape != b.shape:
        raise ValueError(f"voxel_iou: shape mismatch {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def save_targets(path: str | os.PathLike, targets: ReconTargets, spec: VoxelGridSpec) -> None:
    arrays: dict[str, np.ndarray] = {}
    for s in SCALES:
        arrays[f"mask_1_{s}"] = targets.masks[s]
        arrays[f"offset_1_{s}"] = targets.offsets[s]
    save_checkpoint(path, arrays, {"kind": "recon_targets", "grid": spec.as_dict()})


def load_targets(path: str | os.PathLike) -> tuple[ReconTargets, VoxelGridSpec]:
    arrays, cfg = load_checkpoint(path)
    spec = VoxelGridSpec(**cfg["grid"])
    return (ReconTargets({s: arrays[f"mask_1_{s}"] for s in SCALES},
                         {s: arrays[f"offset_1_{s}"] for s in SCALES}), spec)


def grid_from_mapping(m: Mapping) -> VoxelGridSpec:
    return VoxelGridSpec(tuple(m["origin"]), tuple(m["dims"]), tuple(m["edge"]))
