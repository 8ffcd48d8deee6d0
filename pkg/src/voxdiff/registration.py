"""Point-to-point ICP and the rotation/translation-error registration protocol."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud, RigidTransform


class DegenerateGeometryError(ValueError):
    pass


def best_fit_transform(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Least-squares rigid map ``src -> dst`` via SVD of the cross-covariance (Kabsch),
    with reflection correction."""
    if len(src) < 3:
        raise DegenerateGeometryError("degenerate correspondence set")
    ca, cb = src.mean(axis=0), dst.mean(axis=0)
    H = (src - ca).T @ (dst - cb)
    U, S, Vt = np.linalg.svd(H)
    if S[1] <= 1e-12 * max(S[0], 1e-300):
        raise DegenerateGeometryError("degenerate correspondence set")
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    R = Vt.T @ np.diag([1.0, 1.0, d]) @ U.T
    return RigidTransform(R, cb - R @ ca)


@dataclass
class IcpResult:
    transform: RigidTransform
    iterations: int
    residuals: list[float] = field(default_factory=list)  # RMS corr. distance per iteration

    @property
    def final_residual(self) -> float:
        return self.residuals[-1] if self.residuals else float("nan")


def icp(source: PointCloud, target: PointCloud, init: RigidTransform | None = None,
        max_iters: int = 50, tol: float = 1e-8, max_corr_dist: float = 1.0) -> IcpResult:
    """Estimate T with ``T(source) ~ target``.

    Each iteration matches every transformed source point to its nearest target
    point, drops pairs farther than ``max_corr_dist``, and solves the closed-form
    alignment of the original source points to their matches. Stops when the
    update's rotation (radians) and translation (meters) both fall below ``tol``.
    """
    src, dst = source.points, target.points
    if len(src) < 3 or len(dst) < 3:
        raise DegenerateGeometryError("degenerate correspondence set")
    tree = cKDTree(dst)
    T = init or RigidTransform.identity()
    residuals: list[float] = []
    it = 0
    for it in range(1, max_iters + 1):
        moved = T.apply(src)
        dist, idx = tree.query(moved, k=1)
        keep = dist <= max_corr_dist
        if keep.sum() < 3:
            raise DegenerateGeometryError("degenerate correspondence set")
        residuals.append(float(np.sqrt(np.mean(dist[keep] ** 2))))
        new = best_fit_transform(src[keep], dst[idx[keep]])
        delta = new.compose(T.inverse())
        T = new
        if rotation_angle(delta.rotation) < tol and np.linalg.norm(delta.translation) < tol:
            break
    return IcpResult(T, it, residuals)


def rotation_angle(R: np.ndarray) -> float:
    return float(np.arccos(np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)))


def rotation_error_deg(R_est: np.ndarray, R_gt: np.ndarray) -> float:
    return float(np.degrees(np.arccos(np.clip((np.trace(R_est.T @ R_gt) - 1.0) / 2.0, -1.0, 1.0))))


@dataclass
class RegResult:
    estimate: RigidTransform
    re_deg: float
    te_m: float
    success: bool
    iterations: int = 0
    residual: float = float("nan")


def evaluate_registration(est: RigidTransform, gt: RigidTransform, re_thresh: float = 5.0,
                          te_thresh: float = 0.5, iterations: int = 0,
                          residual: float = float("nan")) -> RegResult:
    re = rotation_error_deg(est.rotation, gt.rotation)
    te = float(np.linalg.norm(est.translation - gt.translation))
    return RegResult(est, re, te, bool(re < re_thresh and te < te_thresh), iterations, residual)


@dataclass
class RecallSummary:
    rr: float                  # percent
    n_success: int
    n_total: int
    re_success: float          # mean RE over successful pairs (nan if none)
    te_success: float
    re_all: float
    te_all: float

    def table_cells(self) -> dict[str, str]:
        """Cells in the ``succ./all`` layout."""
        return {"RR(%)": f"{self.rr:.2f}",
                "RE(deg)": f"{self.re_success:.3f}/{self.re_all:.3f}",
                "TE(m)": f"{self.te_success:.3f}/{self.te_all:.3f}"}


def registration_recall(results: Sequence[RegResult]) -> RecallSummary:
    if not results:
        raise ValueError("registration_recall: empty result list")
    ok = [r for r in results if r.success]
    nan = float("nan")
    return RecallSummary(
        rr=100.0 * len(ok) / len(results), n_success=len(ok), n_total=len(results),
        re_success=float(np.mean([r.re_deg for r in ok])) if ok else nan,
        te_success=float(np.mean([r.te_m for r in ok])) if ok else nan,
        re_all=float(np.mean([r.re_deg for r in results])),
        te_all=float(np.mean([r.te_m for r in results])),
    )


def select_pairs(poses: Sequence[RigidTransform], min_dist: float = 1.5) -> list[tuple[int, int]]:
    """Index pairs (i, j), i < j, whose ground-truth translations are more than ``min_dist`` apart."""
    pairs = []
    for i in range(len(poses)):
        for j in range(i + 1, len(poses)):
            if np.linalg.norm(poses[i].translation - poses[j].translation) > min_dist:
                pairs.append((i, j))
    return pairs


def relative_pose(pose_src: RigidTransform, pose_tgt: RigidTransform) -> RigidTransform:
    """Transform taking source-sensor coordinates into target-sensor coordinates."""
    return pose_tgt.inverse().compose(pose_src)


def write_registration_report(out_dir: str | os.PathLike, rows: Sequence[dict],
                              summaries: dict[str, RecallSummary]) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "registration.csv", out_dir / "registration.json"
    keys = ["pair", "input", "re_deg", "te_m", "success", "iterations", "residual"]
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in keys})
    body = {name: {**s.__dict__, "cells": s.table_cells()} for name, s in summaries.items()}
    json_path.write_text(json.dumps(body, indent=1, sort_keys=True))
    return csv_path, json_path


def format_table(summaries: dict[str, RecallSummary]) -> str:
    lines = [f"{'input':<12}{'RR(%)':>10}{'RE(deg) succ./all':>24}{'TE(m) succ./all':>22}"]
    for name, s in summaries.items():
        c = s.table_cells()
        lines.append(f"{name:<12}{c['RR(%)']:>10}{c['RE(deg)']:>24}{c['TE(m)']:>22}")
    return "\n".join(lines)
