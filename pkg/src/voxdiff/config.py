"""Run configuration: an INI file with typed, schema-checked keys.

Every key can be overridden by an environment variable named
``VOXDIFF_<SECTION>_<KEY>`` (upper case), e.g. ``VOXDIFF_STAGE1_ITERATIONS=500``.
Unknown sections or keys are rejected.
"""
from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .diffusion import PredictionTarget
from .geometry import FovSpec
from .metrics import BevGrid
from .nets import NetConfig
from .synthdata import SceneSpec
from .train import LossWeights, TrainConfig
from .voxel import VoxelGridSpec

ENV_PREFIX = "VOXDIFF_"

# section -> key -> (type, default). Tuples are written comma-separated.
SCHEMA: dict[str, dict[str, tuple[type, Any]]] = {
    "run": {"seed": (int, 0), "out": (str, "runs/default")},
    "grid": {"origin": (tuple, (0.0, -2.0, -0.5)), "dims": (tuple, (32, 32, 8)),
             "edge": (tuple, (0.125, 0.125, 0.125))},
    "net": {"latent_dim": (int, 64), "vfe_widths": (tuple, (32, 64, 64)),
            "lpcr_widths": (tuple, (32, 16, 8)), "unet_widths": (tuple, (64, 128, 256)),
            "res_blocks": (int, 2), "temb_dim": (int, 128)},
    "diffusion": {"T": (int, 1024), "kind": (str, "cosine"), "prediction": (str, "noise"),
                  "loss": (str, "l2"), "steps": (int, 128), "clip_x0": (float, 0.0)},
    "stage1": {"iterations": (int, 3000), "lr": (float, 1e-3), "weight_decay": (float, 0.0),
               "lambda_mask": (float, 0.9), "lambda_offset": (float, 0.1), "log_every": (int, 100),
               "lr_schedule": (str, "constant")},
    "stage2": {"iterations": (int, 4000), "lr": (float, 1e-4), "weight_decay": (float, 0.0),
               "log_every": (int, 100), "lr_schedule": (str, "constant")},
    "recon": {"threshold": (float, 0.5)},
    "preprocess": {"ground_thresh": (float, 0.1), "ground_iters": (int, 200),
                   "yaw_min": (float, -180.0), "yaw_max": (float, 180.0),
                   "x": (tuple, (-1e9, 1e9)), "y": (tuple, (-1e9, 1e9)), "z": (tuple, (-1e9, 1e9)),
                   "remove_ground": (bool, True)},
    "metrics": {"fscore_tau": (float, 0.1), "bev_cell": (float, 0.5),
                "bev_x": (tuple, (0.0, 4.0)), "bev_y": (tuple, (-2.0, 2.0))},
    "registration": {"max_iters": (int, 50), "tol": (float, 1e-8), "max_corr_dist": (float, 1.0),
                     "re_thresh": (float, 5.0), "te_thresh": (float, 0.5), "min_pair_dist": (float, 1.5)},
    "synth": {"n_scenes": (int, 250), "n_walls": (int, 2), "n_boxes": (int, 3), "n_poles": (int, 2),
              "density": (float, 300.0), "keep_fraction": (float, 0.02), "jitter": (float, 0.03),
              "clutter": (int, 8), "ground": (bool, False)},
}


class ConfigError(ValueError):
    pass


def _parse(kind: type, raw: str, where: str):
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if kind is tuple:
            parts = [p.strip() for p in raw.split(",") if p.strip()]
            return tuple(int(p) if p.lstrip("-").isdigit() else float(p) for p in parts)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {kind.__name__}") from None


def _render(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]] = field(default_factory=dict)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def load(cls, path: str | os.PathLike | None = None, env: Mapping[str, str] | None = None,
             overrides: Mapping[str, Mapping[str, Any]] | None = None) -> "RunConfig":
        cfg = cls.defaults()
        if path is not None:
            parser = configparser.ConfigParser(interpolation=None)
            parser.optionxform = str
            read = parser.read(path)
            if not read:
                raise ConfigError(f"{path}: cannot read config file")
            for section in parser.sections():
                if section not in SCHEMA:
                    raise ConfigError(f"{path}: unknown section [{section}]")
                for key, raw in parser.items(section):
                    if key not in SCHEMA[section]:
                        raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                    cfg.values[section][key] = _parse(SCHEMA[section][key][0], raw, f"[{section}] {key}")
        env = os.environ if env is None else env
        for name, raw in env.items():
            if not name.startswith(ENV_PREFIX):
                continue
            rest = name[len(ENV_PREFIX):].lower()
            section = next((s for s in SCHEMA if rest.startswith(s + "_")), None)
            if section is None:
                raise ConfigError(f"environment override {name}: unknown section")
            key = next((k for k in SCHEMA[section] if k.lower() == rest[len(section) + 1:]), None)
            if key is None:
                raise ConfigError(f"environment override {name}: unknown key")
            cfg.values[section][key] = _parse(SCHEMA[section][key][0], raw, name)
        for section, kv in (overrides or {}).items():
            for key, v in kv.items():
                if section not in SCHEMA or key not in SCHEMA[section]:
                    raise ConfigError(f"override {section}.{key}: unknown key")
                cfg.values[section][key] = v
        return cfg

    def dump(self, path: str | os.PathLike) -> None:
        """Write the fully resolved configuration."""
        lines = []
        for section, kv in self.values.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {_render(v)}" for k, v in kv.items()]
            lines.append("")
        Path(path).write_text("\n".join(lines))

    # typed views ------------------------------------------------------------------
    def grid(self) -> VoxelGridSpec:
        g = self["grid"]
        return VoxelGridSpec(g["origin"], g["dims"], g["edge"])

    def net(self) -> NetConfig:
        n = self["net"]
        return NetConfig(grid=self.grid(), latent_dim=n["latent_dim"], vfe_widths=n["vfe_widths"],
                         lpcr_widths=n["lpcr_widths"], unet_widths=n["unet_widths"],
                         res_blocks=n["res_blocks"], temb_dim=n["temb_dim"])

    def target(self) -> PredictionTarget:
        d = self["diffusion"]
        return PredictionTarget(d["prediction"], d["loss"])

    def clip_x0(self) -> float | None:
        v = self["diffusion"]["clip_x0"]
        return v if v > 0 else None

    def train(self, stage: int, out_dir: str | None = None) -> TrainConfig:
        s = self[f"stage{stage}"]
        d = self["diffusion"]
        weights = LossWeights(self["stage1"]["lambda_mask"], self["stage1"]["lambda_offset"])
        return TrainConfig(stage=stage, iterations=s["iterations"], lr=s["lr"],
                           weight_decay=s["weight_decay"], seed=self["run"]["seed"], net=self.net(),
                           schedule_T=d["T"], schedule_kind=d["kind"], target=self.target(),
                           weights=weights, log_every=s["log_every"], out_dir=out_dir,
                           lr_schedule=s["lr_schedule"])

    def fov(self) -> FovSpec:
        p = self["preprocess"]
        return FovSpec(p["yaw_min"], p["yaw_max"], tuple(p["x"]), tuple(p["y"]), tuple(p["z"]))

    def bev(self) -> BevGrid:
        m = self["metrics"]
        return BevGrid(tuple(m["bev_x"]), tuple(m["bev_y"]), m["bev_cell"])

    def scene(self, seed: int) -> SceneSpec:
        s = self["synth"]
        g = self.grid()
        return SceneSpec(seed=seed, region_min=g.origin, region_max=tuple(g.upper - 1e-6),
                         n_walls=s["n_walls"], n_boxes=s["n_boxes"], n_poles=s["n_poles"],
                         density=s["density"], keep_fraction=s["keep_fraction"], jitter=s["jitter"],
                         clutter=s["clutter"], ground=s["ground"])


def write_schema(path: str | os.PathLike) -> None:
    """Document every section/key with its type and default, in INI form."""
    lines = ["; voxdiff run configuration schema: every accepted key with its default.",
             "; Tuples are comma-separated. Override any key with VOXDIFF_<SECTION>_<KEY>.", ""]
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for k, (kind, default) in keys.items():
            lines.append(f"; type: {kind.__name__}")
            lines.append(f"{k} = {_render(default)}")
        lines.append("")
    Path(path).write_text("\n".join(lines))
