"""Two-stage training.

Stage 1 fits the LiDAR encoder and the LPCR decoder on LiDAR clouds with the
weighted mask-BCE + masked-offset-L1 loss. Stage 2 freezes both, and fits the
radar encoder jointly with the conditional denoiser on the diffusion loss.
"""
from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import AdamW, Tensor
from .diffusion import NoiseSchedule, PredictionTarget, diffusion_loss, make_schedule
from .geometry import PointCloud
from .metrics import chamfer
from .model import LatentModel
from .nets import NetConfig
from .voxel import SCALES, ReconTargets, derive_targets, reconstruct, voxel_iou, voxelize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    mask: float = 0.9    # lambda_1
    offset: float = 0.1  # lambda_2

    def __post_init__(self):
        if self.mask < 0 or self.offset < 0:
            raise ValueError("LossWeights: weights must be non-negative")


@dataclass
class TrainConfig:
    stage: int = 1
    iterations: int = 2000
    lr: float | None = None             # None -> 1e-3 for stage 1, 1e-4 for stage 2
    weight_decay: float = 0.0
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)
    schedule_T: int = 1024
    schedule_kind: str = "cosine"
    target: PredictionTarget = field(default_factory=PredictionTarget)
    weights: LossWeights = field(default_factory=LossWeights)
    log_every: int = 100
    out_dir: str | None = None
    stop_iou: float | None = None       # stage 1: stop early once scale-1 IoU reaches this
    lr_schedule: str = "constant"       # "constant" or "cosine" (anneal to 0 over ``iterations``)

    def __post_init__(self):
        if self.iterations <= 0:
            raise ValueError("TrainConfig: iterations must be positive")
        if self.lr is None:
            self.lr = 1e-3 if self.stage == 1 else 1e-4
        if self.lr <= 0:
            raise ValueError("TrainConfig: lr must be positive")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"TrainConfig: unknown lr_schedule {self.lr_schedule!r}")

    def lr_at(self, it: int) -> float:
        """Learning rate used for 1-based iteration ``it``."""
        if self.lr_schedule == "constant":
            return self.lr
        return 0.5 * self.lr * (1.0 + np.cos(np.pi * (it - 1) / self.iterations))


def stage1_terms(pred: dict[int, tuple[Tensor, Tensor]], targets: ReconTargets) -> tuple[Tensor, Tensor]:
    """(sum_i BCE(mask_i), sum_i L1(offset_i | target mask_i = 1)) over the three scales."""
    if set(pred) != set(targets.masks):
        raise ValueError(f"stage1_loss: prediction scales {sorted(pred)} != target scales {sorted(targets.masks)}")
    mask_terms, offset_terms = [], []
    for s in SCALES:
        m_hat, o_hat = pred[s]
        m, o = targets[s]
        mask_terms.append(ag.bce(m_hat, Tensor(m)))
        offset_terms.append(ag.l1(o_hat, Tensor(o), mask=np.broadcast_to(m, o.shape)))
    return (mask_terms[0] + mask_terms[1] + mask_terms[2],
            offset_terms[0] + offset_terms[1] + offset_terms[2])


def stage1_loss(pred: dict[int, tuple[Tensor, Tensor]], targets: ReconTargets,
                w: LossWeights = LossWeights()) -> Tensor:
    """lambda_1 * mask term + lambda_2 * offset term."""
    total_mask, total_offset = stage1_terms(pred, targets)
    return ag.mul(total_mask, w.mask) + ag.mul(total_offset, w.offset)


class NonFiniteLoss(FloatingPointError):
    pass


class _CsvLog:
    def __init__(self, path: Path | None, fields: Sequence[str]):
        self.fields = list(fields)
        self.fh = None
        if path is not None:
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "w", newline="")
            self.writer = csv.DictWriter(self.fh, fieldnames=self.fields)
            self.writer.writeheader()

    def write(self, row: dict) -> None:
        if self.fh is not None:
            self.writer.writerow({k: row.get(k, "") for k in self.fields})
            self.fh.flush()

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


@dataclass
class Stage1Sample:
    cloud: PointCloud
    vc: object
    targets: ReconTargets


@dataclass
class TrainResult:
    model: LatentModel
    losses: list[float]
    history: list[dict]
    seconds: float
    checkpoint: Path | None = None


def _epoch_order(n: int, rng: np.random.Generator):
    while True:
        yield from rng.permutation(n)


def _check_finite(value: float, it: int) -> None:
    if not np.isfinite(value):
        raise NonFiniteLoss(f"non-finite loss {value} at iteration {it}")


def evaluate_stage1(model: LatentModel, sample: Stage1Sample, threshold: float = 0.5) -> dict:
    with ag.no_grad():
        f = model.encoder_lidar(sample.vc)
        out = model.lpcr(f)
    mask, off = out[1]
    iou = voxel_iou(mask.data, sample.targets.masks[1], threshold)
    rec = reconstruct(mask.data, off.data, model.cfg.grid, threshold)
    cd = chamfer(rec, sample.vc.mean_cloud()) if len(rec) and len(sample.vc) else float("inf")
    return {"iou": iou, "cd": cd, "n_points": len(rec)}


def train_stage1(clouds: Sequence[PointCloud], cfg: TrainConfig,
                 model: LatentModel | None = None) -> TrainResult:
    if not clouds:
        raise ValueError("train_stage1: empty dataset")
    model = model or LatentModel(cfg.net, seed=cfg.seed)
    samples = []
    for c in clouds:
        vc = voxelize(c, cfg.net.grid)
        samples.append(Stage1Sample(c, vc, derive_targets(vc)))
    params = list(model.encoder_lidar.params.values()) + list(model.lpcr.params.values())
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    order = _epoch_order(len(samples), rng)
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    logger = _CsvLog(out_dir / "stage1_log.csv" if out_dir else None,
                     ["iteration", "loss", "mask_loss", "offset_loss", "iou", "cd", "n_points"])
    losses, history = [], []
    t0 = time.time()
    try:
        for it in range(1, cfg.iterations + 1):
            s = samples[next(order)]
            opt.zero_grad()
            pred = model.lpcr(model.encoder_lidar(s.vc))
            mask_term, offset_term = stage1_terms(pred, s.targets)
            loss = ag.mul(mask_term, cfg.weights.mask) + ag.mul(offset_term, cfg.weights.offset)
            value = loss.item()
            _check_finite(value, it)
            loss.backward()
            opt.state.lr = cfg.lr_at(it)
            opt.step()
            losses.append(value)
            if it % cfg.log_every == 0 or it == cfg.iterations:
                ev = evaluate_stage1(model, samples[0])
                row = {"iteration": it, "loss": value, "mask_loss": mask_term.item(),
                       "offset_loss": offset_term.item(), **ev}
                history.append(row)
                logger.write(row)
                log.info("stage1 it=%d loss=%.5f iou=%.4f cd=%.5f", it, value, ev["iou"], ev["cd"])
                if cfg.stop_iou is not None and ev["iou"] >= cfg.stop_iou:
                    break
    finally:
        logger.close()
    ckpt = None
    if out_dir is not None:
        ckpt = out_dir / "stage1.ckpt"
        model.save(ckpt, stage=1)
    return TrainResult(model, losses, history, time.time() - t0, ckpt)


def train_stage2(pairs: Sequence[tuple[PointCloud, PointCloud]], cfg: TrainConfig,
                 stage1: LatentModel) -> TrainResult:
    """``pairs`` holds (radar, lidar) clouds already expressed in the same frame."""
    if not pairs:
        raise ValueError("train_stage2: empty dataset")
    if stage1.cfg != cfg.net:
        raise ValueError("train_stage2: stage-1 checkpoint network config differs from the run config")
    model = stage1
    model.attach_diffusion(make_schedule(cfg.schedule_T, cfg.schedule_kind), cfg.target, seed=cfg.seed)
    model.encoder_lidar.params.freeze()
    model.lpcr.params.freeze()

    grid = cfg.net.grid
    radar_vcs = [voxelize(r, grid) for r, _ in pairs]
    with ag.no_grad():
        f0_raw = [model.encoder_lidar(voxelize(l, grid)).data for _, l in pairs]
    model.fit_latent_stats(f0_raw)
    f0s = [model.normalize(f) for f in f0_raw]

    params = list(model.encoder_radar.params.values()) + list(model.denoiser.params.values())
    opt = AdamW(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    order = _epoch_order(len(pairs), rng)
    schedule: NoiseSchedule = model.schedule
    out_dir = Path(cfg.out_dir) if cfg.out_dir else None
    logger = _CsvLog(out_dir / "stage2_log.csv" if out_dir else None, ["iteration", "loss", "t"])
    losses, history = [], []
    t0 = time.time()
    try:
        for it in range(1, cfg.iterations + 1):
            k = next(order)
            t = int(rng.integers(1, schedule.T + 1))
            eps = rng.standard_normal(f0s[k].shape)
            opt.zero_grad()
            c = model.encoder_radar(radar_vcs[k])
            loss = diffusion_loss(f0s[k], c, t, eps, model.denoiser, schedule, cfg.target)
            value = loss.item()
            _check_finite(value, it)
            loss.backward()
            opt.state.lr = cfg.lr_at(it)
            opt.step()
            losses.append(value)
            if it % cfg.log_every == 0 or it == cfg.iterations:
                window = losses[-cfg.log_every:]
                row = {"iteration": it, "loss": float(np.mean(window)), "t": t}
                history.append(row)
                logger.write(row)
                log.info("stage2 it=%d loss=%.5f", it, row["loss"])
    finally:
        logger.close()
    ckpt = None
    if out_dir is not None:
        ckpt = out_dir / "stage2.ckpt"
        model.save(ckpt, stage=2)
    return TrainResult(model, losses, history, time.time() - t0, ckpt)
