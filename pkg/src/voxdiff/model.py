"""The assembled super-resolution model: encoders, denoiser, LPCR decoder, and
the inference path radar cloud -> latent condition -> sampled latent -> points."""
from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor, load_checkpoint, save_checkpoint
from .diffusion import NoiseSchedule, PredictionTarget, make_schedule, sample
from .geometry import PointCloud
from .nets import Denoiser, LpcrDecoder, NetConfig, VoxelEncoder
from .voxel import reconstruct, voxelize

_PARTS = ("encoder_lidar", "lpcr", "encoder_radar", "denoiser")


class LatentModel:
    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        self.seed = seed
        self.encoder_lidar = VoxelEncoder(cfg, seed=seed)
        self.lpcr = LpcrDecoder(cfg, seed=seed + 1)
        self.encoder_radar: VoxelEncoder | None = None
        self.denoiser: Denoiser | None = None
        self.schedule: NoiseSchedule | None = None
        self.target = PredictionTarget()
        self.latent_mean = np.zeros(cfg.latent_dim)
        self.latent_std = 1.0

    def attach_diffusion(self, schedule: NoiseSchedule, target: PredictionTarget, seed: int = 0) -> None:
        self.schedule = schedule
        self.target = target
        if self.encoder_radar is None:
            self.encoder_radar = VoxelEncoder(self.cfg, seed=seed + 2)
        if self.denoiser is None:
            self.denoiser = Denoiser(self.cfg, seed=seed + 3)

    # latent normalization: per-channel mean, one global scale
    def fit_latent_stats(self, latents: Sequence[np.ndarray]) -> None:
        stack = np.stack(latents)
        self.latent_mean = stack.mean(axis=(0, 2, 3))
        centered = stack - self.latent_mean[None, :, None, None]
        self.latent_std = float(max(centered.std(), 1e-8))

    def normalize(self, f: np.ndarray) -> np.ndarray:
        return (f - self.latent_mean[:, None, None]) / self.latent_std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.latent_std + self.latent_mean[:, None, None]

    def parts(self) -> dict:
        return {name: getattr(self, name) for name in _PARTS if getattr(self, name) is not None}

    def parameter_count(self) -> dict[str, int]:
        return {name: net.params.count() for name, net in self.parts().items()}

    def save(self, path: str | os.PathLike, stage: int) -> None:
        arrays = {}
        for name, net in self.parts().items():
            arrays.update(net.params.arrays(prefix=name + "/"))
        arrays["latent/mean"] = self.latent_mean
        arrays["latent/std"] = np.array([self.latent_std])
        config = {"stage": stage, "net": self.cfg.as_dict(), "seed": self.seed,
                  "parts": list(self.parts())}
        if self.schedule is not None:
            config["schedule"] = {"T": self.schedule.T, "kind": self.schedule.kind}
            config["target"] = {"prediction": self.target.prediction.value, "loss": self.target.loss.value}
        save_checkpoint(path, arrays, config)

    @classmethod
    def load(cls, path: str | os.PathLike, expect: NetConfig | None = None) -> "LatentModel":
        arrays, config = load_checkpoint(path)
        cfg = NetConfig.from_dict(config["net"])
        if expect is not None and cfg != expect:
            raise ValueError(f"{path}: checkpoint architecture {cfg} does not match configured {expect}")
        model = cls(cfg, seed=config.get("seed", 0))
        if "schedule" in config:
            sch = config["schedule"]
            model.attach_diffusion(make_schedule(sch["T"], sch["kind"]), PredictionTarget(**config["target"]),
                                   seed=model.seed)
        for name, net in model.parts().items():
            net.params.load_arrays(arrays, prefix=name + "/")
        model.latent_mean = np.array(arrays["latent/mean"], dtype=np.float64)
        model.latent_std = float(arrays["latent/std"][0])
        return model

    # inference ---------------------------------------------------------------------
    def encode_condition(self, radar: PointCloud) -> Tensor:
        with ag.no_grad():
            return self.encoder_radar(voxelize(radar, self.cfg.grid))

    def generate_latent(self, radar: PointCloud, steps: int = 128, seed: int = 0,
                        clip_x0: float | None = None, trace: list | None = None) -> np.ndarray:
        if self.denoiser is None:
            raise RuntimeError("generate: model has no diffusion stage (load a stage-2 checkpoint)")
        c = self.encode_condition(radar)
        z = sample(c, steps, self.schedule, self.denoiser, self.target, seed=seed, clip_x0=clip_x0,
                   trace=trace)
        return self.denormalize(z)

    def decode(self, latent: np.ndarray, threshold: float = 0.5) -> PointCloud:
        with ag.no_grad():
            out = self.lpcr(Tensor(latent))
        mask, off = out[1]
        return reconstruct(mask.data, off.data, self.cfg.grid, threshold)

    def generate(self, radar: PointCloud, steps: int = 128, seed: int = 0, threshold: float = 0.5,
                 clip_x0: float | None = None, trace: list | None = None) -> PointCloud:
        """Radar cloud -> dense cloud: encode, sample from noise, decode, reconstruct."""
        return self.decode(self.generate_latent(radar, steps, seed, clip_x0, trace), threshold)
