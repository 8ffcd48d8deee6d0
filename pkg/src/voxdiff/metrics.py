"""Point-cloud quality metrics.

Chamfer-type metrics use squared nearest-neighbor distances; the Hausdorff
family uses unsquared distances. ``dims=2`` evaluates in the (x, y) plane.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import PointCloud


def _xy(cloud, dims: int) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if len(pts) == 0:
        raise ValueError("empty cloud")
    return np.ascontiguousarray(pts[:, :dims])


def nn_sqdist(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Squared distance from every ``src`` point to its nearest ``dst`` point.

    The tree only picks the neighbor; the distance is recomputed directly so
    results do not depend on the tree's internal arithmetic.
    """
    _, idx = cKDTree(dst).query(src, k=1)
    diff = src - dst[idx]
    return np.sum(diff * diff, axis=1)


def chamfer(a, b, dims: int = 3) -> float:
    pa, pb = _xy(a, dims), _xy(b, dims)
    return float(np.mean(nn_sqdist(pa, pb)) + np.mean(nn_sqdist(pb, pa)))


def ucd(a, b, dims: int = 3) -> float:
    """Unidirectional chamfer: mean squared NN distance from ``a`` to ``b``."""
    return float(np.mean(nn_sqdist(_xy(a, dims), _xy(b, dims))))


def _directed(a, b, dims: int) -> np.ndarray:
    return np.sqrt(nn_sqdist(_xy(a, dims), _xy(b, dims)))


def hausdorff(a, b, dims: int = 3) -> float:
    return float(max(np.max(_directed(a, b, dims)), np.max(_directed(b, a, dims))))


def mhd(a, b, dims: int = 3) -> float:
    """Modified Hausdorff: the larger of the two directed mean NN distances."""
    return float(max(np.mean(_directed(a, b, dims)), np.mean(_directed(b, a, dims))))


def umhd(a, b, dims: int = 3) -> float:
    return float(np.mean(_directed(a, b, dims)))


def fscore(a, b, tau: float = 0.1, dims: int = 3) -> float:
    if tau <= 0:
        raise ValueError("fscore: tau must be positive")
    precision = float(np.mean(_directed(a, b, dims) <= tau))
    recall = float(np.mean(_directed(b, a, dims) <= tau))
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class BevGrid:
    x: tuple[float, float] = (0.0, 4.0)
    y: tuple[float, float] = (-2.0, 2.0)
    cell: float = 0.5

    def edges(self) -> tuple[np.ndarray, np.ndarray]:
        nx = max(1, int(round((self.x[1] - self.x[0]) / self.cell)))
        ny = max(1, int(round((self.y[1] - self.y[0]) / self.cell)))
        return np.linspace(*self.x, nx + 1), np.linspace(*self.y, ny + 1)


def bev_histogram(cloud, grid: BevGrid) -> np.ndarray:
    pts = _xy(cloud, 2)
    ex, ey = grid.edges()
    h, _, _ = np.histogram2d(pts[:, 0], pts[:, 1], bins=(ex, ey))
    return h


def jsd_bev(a, b, grid: BevGrid = BevGrid()) -> float:
    """Jensen-Shannon divergence (base 2) of normalized BEV occupancy histograms."""
    p = bev_histogram(a, grid).ravel()
    q = bev_histogram(b, grid).ravel()
    if p.sum() == 0 or q.sum() == 0:
        raise ValueError("jsd_bev: a cloud has no points inside the BEV grid")
    p, q = p / p.sum(), q / q.sum()
    m = 0.5 * (p + q)

    def kl(u, v):
        nz = u > 0
        return np.sum(u[nz] * np.log2(u[nz] / v[nz]))

    return float(np.clip(0.5 * kl(p, m) + 0.5 * kl(q, m), 0.0, 1.0))


def mmd_bev(set_a: Sequence, set_b: Sequence, grid: BevGrid = BevGrid()) -> float:
    """Unbiased squared MMD between sets of normalized BEV histograms.

    Gaussian kernel whose bandwidth is the median pairwise distance over the
    pooled histogram vectors.
    """
    if len(set_a) < 2 or len(set_b) < 2:
        raise ValueError("mmd_bev: each set needs at least 2 clouds")
    def vec(c):
        h = bev_histogram(c, grid).ravel()
        return h / max(h.sum(), 1.0)

    X = np.stack([vec(c) for c in set_a])
    Y = np.stack([vec(c) for c in set_b])
    Z = np.concatenate([X, Y])
    sq = np.sum(Z * Z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * Z @ Z.T, 0.0)
    off = d2[~np.eye(len(Z), dtype=bool)]
    med = np.median(np.sqrt(off))
    sigma2 = med * med if med > 0 else 1.0
    K = np.exp(-d2 / (2 * sigma2))
    m, n = len(X), len(Y)
    kxx = K[:m, :m]
    kyy = K[m:, m:]
    kxy = K[:m, m:]
    val = ((kxx.sum() - np.trace(kxx)) / (m * (m - 1))
           + (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
           - 2 * kxy.mean())
    return float(max(val, 0.0))


@dataclass
class MetricReport:
    values: dict[str, float]
    n_pred: int
    n_gt: int
    config: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {**self.values, "n_pred": self.n_pred, "n_gt": self.n_gt}


def evaluate_pair(pred, gt, tau: float = 0.1, grid: BevGrid = BevGrid()) -> MetricReport:
    """Every pairwise metric for one (generated, ground-truth) pair.

    Distances are undefined when either cloud is empty (or has nothing inside
    the BEV grid); those entries are NaN and the F-score is 0, so one failed
    generation does not abort a whole evaluation.
    """
    if len(pred) == 0 or len(gt) == 0:
        vals = {k: float("nan") for k in _PAIR_KEYS}
        vals["fscore"] = 0.0
        return MetricReport(vals, len(pred), len(gt), _config(tau, grid))
    try:
        jsd = jsd_bev(pred, gt, grid)
    except ValueError:
        jsd = float("nan")
    vals = {
        "cd": chamfer(pred, gt), "hd": hausdorff(pred, gt), "fscore": fscore(pred, gt, tau),
        "jsd_bev": jsd,
        "cd_2d": chamfer(pred, gt, dims=2), "mhd_2d": mhd(pred, gt, dims=2),
        "ucd_2d": ucd(pred, gt, dims=2), "umhd_2d": umhd(pred, gt, dims=2),
    }
    return MetricReport(vals, len(pred), len(gt), _config(tau, grid))


_PAIR_KEYS = ("cd", "hd", "fscore", "jsd_bev", "cd_2d", "mhd_2d", "ucd_2d", "umhd_2d")


def _config(tau: float, grid: BevGrid) -> dict:
    return {"tau": tau, "bev_cell": grid.cell, "bev_x": list(grid.x), "bev_y": list(grid.y)}


def write_reports(out_dir: str | os.PathLike, names: Sequence[str], reports: Sequence[MetricReport],
                  summary_extra: dict | None = None) -> tuple[Path, Path]:
    """Per-pair CSV plus a JSON summary holding per-metric means and the config echo."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out_dir / "metrics.csv", out_dir / "metrics.json"
    keys = list(reports[0].row()) if reports else []
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pair"] + keys)
        for name, r in zip(names, reports):
            w.writerow([name] + [_fmt(r.row()[k]) for k in keys])
    summary = {"n_pairs": len(reports),
               # NaN entries (empty clouds) are left out of the means and counted separately
               "mean": {k: _nanmean([r.values[k] for r in reports]) for k in reports[0].values}
               if reports else {},
               "n_undefined": {k: int(np.sum(np.isnan([r.values[k] for r in reports])))
                               for k in reports[0].values} if reports else {},
               "config": reports[0].config if reports else {}}
    summary.update(summary_extra or {})
    json_path.write_text(json.dumps(summary, indent=1, sort_keys=True))
    return csv_path, json_path


def _nanmean(vals) -> float:
    vals = np.asarray(vals, dtype=np.float64)
    return float(np.mean(vals[~np.isnan(vals)])) if np.any(~np.isnan(vals)) else float("nan")


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)
