"""Synthetic paired scenes: dense "LiDAR" surface samples and sparse, noisy "radar"
subsamples with clutter.

Randomness comes from numpy's PCG64 seeded by ``SeedSequence((seed, frame, stream))``
so each (scene, frame, stream) triple is an independent, portable stream.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cloudio import save_cloud
from .geometry import PointCloud, RigidTransform, apply_transform

_GEOMETRY, _LIDAR, _RADAR = 0, 1, 2


def stream(seed: int, frame: int, which: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, frame, which))))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    region_min: tuple[float, float, float] = (0.0, -2.0, -0.5)
    region_max: tuple[float, float, float] = (4.0, 2.0, 0.5)
    n_walls: int = 2
    n_boxes: int = 3
    n_poles: int = 2
    density: float = 300.0          # LiDAR points per m^2 of surface
    keep_fraction: float = 0.02     # radar subsample ratio
    jitter: float = 0.03            # radar position noise sigma, meters
    clutter: int = 8                # uniform ghost points
    ground: bool = False

    def __post_init__(self):
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ValueError("SceneSpec: keep_fraction must lie in (0, 1]")
        if self.jitter < 0 or self.density <= 0:
            raise ValueError("SceneSpec: jitter must be >= 0 and density > 0")
        if any(lo >= hi for lo, hi in zip(self.region_min, self.region_max)):
            raise ValueError("SceneSpec: region_min must be < region_max")


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray
    faces: tuple[int, ...]  # subset of 0..5 = (-x, +x, -y, +y, -z, +z)

    def area(self) -> float:
        e = self.hi - self.lo
        areas = [e[1] * e[2], e[1] * e[2], e[0] * e[2], e[0] * e[2], e[0] * e[1], e[0] * e[1]]
        return float(sum(areas[f] for f in self.faces))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        e = self.hi - self.lo
        areas = np.array([e[1] * e[2], e[1] * e[2], e[0] * e[2], e[0] * e[2], e[0] * e[1], e[0] * e[1]])
        faces = np.array(self.faces)
        pick = rng.choice(faces, size=n, p=areas[faces] / areas[faces].sum())
        pts = self.lo + rng.uniform(size=(n, 3)) * e
        axis = pick // 2
        side = pick % 2
        pts[np.arange(n), axis] = np.where(side == 1, self.hi[axis], self.lo[axis])
        return pts

    def distance(self, p: np.ndarray) -> np.ndarray:
        """Unsigned distance to the full box boundary."""
        c, h = (self.lo + self.hi) / 2, (self.hi - self.lo) / 2
        q = np.abs(p - c) - h
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return np.abs(outside + inside)


@dataclass(frozen=True)
class Pole:
    center: np.ndarray  # (x, y)
    radius: float
    z: tuple[float, float]

    def area(self) -> float:
        return 2 * np.pi * self.radius * (self.z[1] - self.z[0])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        th = rng.uniform(0, 2 * np.pi, n)
        z = rng.uniform(self.z[0], self.z[1], n)
        return np.stack([self.center[0] + self.radius * np.cos(th),
                         self.center[1] + self.radius * np.sin(th), z], axis=1)

    def distance(self, p: np.ndarray) -> np.ndarray:
        radial = np.abs(np.linalg.norm(p[:, :2] - self.center, axis=1) - self.radius)
        dz = np.maximum(np.maximum(self.z[0] - p[:, 2], p[:, 2] - self.z[1]), 0.0)
        return np.hypot(radial, dz)


@dataclass
class Scene:
    spec: SceneSpec
    primitives: list = field(default_factory=list)

    def surface_area(self) -> float:
        return sum(p.area() for p in self.primitives)

    def distance(self, pts: np.ndarray) -> np.ndarray:
        """Distance from each point to the nearest primitive surface."""
        return np.min(np.stack([p.distance(pts) for p in self.primitives]), axis=0)

    def sample_lidar(self, rng: np.random.Generator) -> np.ndarray:
        chunks = []
        for prim in self.primitives:
            n = max(1, int(round(self.spec.density * prim.area())))
            chunks.append(prim.sample(n, rng))
        return np.concatenate(chunks)


def build_scene(spec: SceneSpec) -> Scene:
    rng = stream(spec.seed, 0, _GEOMETRY)
    lo, hi = np.asarray(spec.region_min, float), np.asarray(spec.region_max, float)
    size = hi - lo
    prims: list = []
    thin = 1e-3
    for i in range(spec.n_walls):
        axis = i % 2  # alternate walls normal to x and to y
        other = 1 - axis
        pos = lo[axis] + rng.uniform(0.15, 0.85) * size[axis]
        length = rng.uniform(0.4, 0.8) * size[other]
        start = lo[other] + rng.uniform(0, size[other] - length)
        wlo, whi = lo.copy(), hi.copy()
        wlo[axis], whi[axis] = pos, pos + thin
        wlo[other], whi[other] = start, start + length
        prims.append(Box(wlo, whi, (2 * axis,)))
    for _ in range(spec.n_boxes):
        e = np.array([rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9) * size[2]])
        e = np.minimum(e, size * 0.9)
        corner = lo + rng.uniform(size=3) * (size - e)
        corner[2] = lo[2]
        prims.append(Box(corner, corner + e, (0, 1, 2, 3, 5)))
    for _ in range(spec.n_poles):
        r = rng.uniform(0.05, 0.12)
        c = lo[:2] + r + rng.uniform(size=2) * (size[:2] - 2 * r)
        prims.append(Pole(c, r, (lo[2], hi[2])))
    if spec.ground:
        glo, ghi = lo.copy(), hi.copy()
        ghi[2] = lo[2]
        prims.append(Box(glo, ghi, (4,)))
    return Scene(spec, prims)


def _radar_from(lidar: np.ndarray, spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    n_keep = int(round(spec.keep_fraction * len(lidar)))
    keep = np.sort(rng.choice(len(lidar), size=n_keep, replace=False))
    pts = lidar[keep] + rng.normal(0.0, spec.jitter, size=(n_keep, 3)) if spec.jitter > 0 else lidar[keep].copy()
    lo, hi = np.asarray(spec.region_min), np.asarray(spec.region_max)
    pts = np.clip(pts, lo, np.nextafter(hi, lo))  # half-open region, like the voxel grid
    clutter = rng.uniform(lo, hi, size=(spec.clutter, 3))
    return np.concatenate([pts, clutter])


def _frame_clouds(scene: Scene, frame: int) -> tuple[np.ndarray, np.ndarray]:
    spec = scene.spec
    lidar = scene.sample_lidar(stream(spec.seed, frame, _LIDAR))
    radar = _radar_from(lidar, spec, stream(spec.seed, frame, _RADAR))
    return lidar, radar


def generate_scene(spec: SceneSpec) -> tuple[PointCloud, PointCloud, RigidTransform]:
    """Dense LiDAR cloud, sparse radar cloud, and the (identity) sensor pose."""
    scene = build_scene(spec)
    lidar, radar = _frame_clouds(scene, 0)
    return PointCloud(lidar), PointCloud(radar), RigidTransform.identity()


@dataclass
class Frame:
    lidar: PointCloud   # sensor frame
    radar: PointCloud   # sensor frame
    pose: RigidTransform  # sensor -> world
    index: int


def generate_sequence(spec: SceneSpec, n_frames: int,
                      motion: RigidTransform | Sequence[RigidTransform]) -> list[Frame]:
    """A static scene observed from ``n_frames`` sensor poses.

    ``motion`` is either one per-frame increment (pose_i = motion^i) or an
    explicit list of poses. Clouds are returned in each sensor's frame.
    """
    if n_frames < 1:
        raise ValueError("generate_sequence: n_frames must be >= 1")
    if isinstance(motion, RigidTransform):
        poses = [RigidTransform.identity()]
        for _ in range(n_frames - 1):
            poses.append(poses[-1].compose(motion))
    else:
        poses = list(motion)
        if len(poses) != n_frames:
            raise ValueError(f"generate_sequence: {len(poses)} poses for {n_frames} frames")
    scene = build_scene(spec)
    frames = []
    for i, pose in enumerate(poses):
        lidar, radar = _frame_clouds(scene, i)
        inv = pose.inverse()
        frames.append(Frame(apply_transform(PointCloud(lidar), inv),
                            apply_transform(PointCloud(radar), inv), pose, i))
    return frames


def write_dataset(root: str | os.PathLike, specs: Sequence[SceneSpec]) -> Path:
    """One PLY pair per scene plus ``manifest.json``; returns the manifest path."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, spec in enumerate(specs):
        lidar, radar, pose = generate_scene(spec)
        lp, rp = f"{i:05d}_lidar.ply", f"{i:05d}_radar.ply"
        save_cloud(lidar, root / lp)
        save_cloud(radar, root / rp)
        entries.append({"lidar": lp, "radar": rp, "pose": pose.matrix().tolist(),
                        "seed": spec.seed, "spec": asdict(spec)})
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"frames": entries}, indent=1))
    return manifest


def write_sequence(root: str | os.PathLike, frames: Sequence[Frame], spec: SceneSpec) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for f in frames:
        lp, rp = f"seq{f.index:04d}_lidar.ply", f"seq{f.index:04d}_radar.ply"
        save_cloud(f.lidar, root / lp)
        save_cloud(f.radar, root / rp)
        entries.append({"lidar": lp, "radar": rp, "pose": f.pose.matrix().tolist(),
                        "seed": spec.seed, "frame": f.index})
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"frames": entries, "spec": asdict(spec)}, indent=1))
    return manifest


def load_manifest(path: str | os.PathLike) -> list[dict]:
    """Manifest entries with paths resolved relative to the manifest's directory."""
    path = Path(path)
    data = json.loads(path.read_text())
    out = []
    for e in data["frames"]:
        e = dict(e)
        for k in ("lidar", "radar"):
            if k in e:
                e[k] = str((path.parent / e[k]).resolve())
        e["pose"] = RigidTransform.from_matrix(np.asarray(e["pose"]))
        out.append(e)
    return out
