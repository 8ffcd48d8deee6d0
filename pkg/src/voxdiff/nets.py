"""Learnable networks: voxel feature encoder, conditional U-Net denoiser, LPCR decoder.

Latents are BEV feature maps of shape ``(d, nx/4, ny/4)``. The decoder folds
the ``d`` channels back into ``(c3, nz/4)`` to recover a 3D volume, then
upsamples to 1/4, 1/2 and full resolution, predicting an occupancy mask and a
center-relative offset at each scale.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import ParamStore, Tensor
from .voxel import SCALES, VoxelGridSpec, VoxelizedCloud

STATS_PER_SLAB = 4  # occupancy + normalized (dx, dy, dz)


def offset_reparam(raw: Tensor, l_length: float) -> Tensor:
    """Map unbounded head output to a displacement in (-l_length, +l_length)."""
    return ag.mul(ag.sub(ag.mul(ag.sigmoid(raw), 2.0), 1.0), l_length)


def _groups(c: int, want: int = 8) -> int:
    g = min(want, c)
    while c % g:
        g -= 1
    return g


def timestep_embedding(t: int | float, dim: int = 128, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(max_period) * np.arange(half) / half)
    args = float(t) * freqs
    return np.concatenate([np.cos(args), np.sin(args)])


@dataclass(frozen=True)
class NetConfig:
    grid: VoxelGridSpec = field(default_factory=VoxelGridSpec)
    latent_dim: int = 64
    vfe_widths: tuple[int, int, int] = (32, 64, 64)
    lpcr_widths: tuple[int, int, int] = (32, 16, 8)
    unet_widths: tuple[int, ...] = (64, 128, 256)
    res_blocks: int = 2
    temb_dim: int = 128

    def __post_init__(self):
        nz4 = self.grid.dims[2] // 4
        if self.latent_dim % nz4:
            raise ValueError(f"NetConfig: latent_dim {self.latent_dim} not divisible by nz/4 = {nz4}")
        h, w = self.grid.dims[0] // 4, self.grid.dims[1] // 4
        div = 2 ** (len(self.unet_widths) - 1)
        if h % div or w % div:
            raise ValueError(f"NetConfig: latent {h}x{w} not divisible by {div} for the U-Net")

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.latent_dim, self.grid.dims[0] // 4, self.grid.dims[1] // 4)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = self.grid.as_dict()
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["grid"] = VoxelGridSpec(**d["grid"])
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _conv2(ps: ParamStore, name: str, x: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    return ag.conv2d(x, ps[name + ".w"], ps[name + ".b"], stride=stride, pad=pad)


def _conv3(ps: ParamStore, name: str, x: Tensor, pad: int = 1) -> Tensor:
    return ag.conv3d(x, ps[name + ".w"], ps[name + ".b"], pad=pad)


def _gn(ps: ParamStore, name: str, x: Tensor) -> Tensor:
    return ag.group_norm(x, _groups(x.shape[0]), ps[name + ".g"], ps[name + ".b"])


# encoder ------------------------------------------------------------------------

def bev_raster(vc: VoxelizedCloud) -> np.ndarray:
    """Dense (nz * 4, nx, ny) image: per z-slab occupancy and offsets scaled to [-1, 1]."""
    spec = vc.spec
    nx, ny, nz = spec.dims
    stats = np.zeros((STATS_PER_SLAB, nx, ny, nz))
    if len(vc):
        sel = tuple(vc.indices.T)
        stats[(0,) + sel] = 1.0
        half = np.asarray(spec.edge) / 2.0
        rel = (vc.means - spec.centers(vc.indices)) / half
        for k in range(3):
            stats[(k + 1,) + sel] = rel[:, k]
    return stats.transpose(3, 0, 1, 2).reshape(nz * STATS_PER_SLAB, nx, ny)


class VoxelEncoder:
    """Strided 2D conv stack mapping the BEV raster to a ``(d, nx/4, ny/4)`` latent."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ParamStore(np.random.default_rng(seed))
        cin = cfg.grid.dims[2] * STATS_PER_SLAB
        w0, w1, w2 = cfg.vfe_widths
        ps = self.params
        ps.conv("in", w0, cin, (3, 3))
        ps.norm("n0", w0)
        ps.conv("down1", w1, w0, (3, 3))
        ps.norm("n1", w1)
        ps.conv("down2", w2, w1, (3, 3))
        ps.norm("n2", w2)
        ps.conv("out", cfg.latent_dim, w2, (1, 1))

    def __call__(self, vc: VoxelizedCloud) -> Tensor:
        if vc.spec.dims != self.cfg.grid.dims or vc.spec.edge != self.cfg.grid.edge \
                or vc.spec.origin != self.cfg.grid.origin:
            raise ValueError(f"vfe_encode: grid {vc.spec} does not match configured {self.cfg.grid}")
        return self.forward(Tensor(bev_raster(vc)))

    def forward(self, x: Tensor) -> Tensor:
        ps = self.params
        h = ag.silu(_gn(ps, "n0", _conv2(ps, "in", x)))
        h = ag.silu(_gn(ps, "n1", _conv2(ps, "down1", h, stride=2)))
        h = ag.silu(_gn(ps, "n2", _conv2(ps, "down2", h, stride=2)))
        return _conv2(ps, "out", h, pad=0)


def vfe_encode(vc: VoxelizedCloud, encoder: VoxelEncoder) -> Tensor:
    return encoder(vc)


# LPCR decoder ---------------------------------------------------------------------

class LpcrDecoder:
    """Multi-scale occupancy/offset heads over the re-projected 3D latent volume."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ps = ParamStore(np.random.default_rng(seed))
        nz4 = cfg.grid.dims[2] // 4
        cin = cfg.latent_dim // nz4
        for s, width in zip(SCALES, cfg.lpcr_widths):
            if s == 4:
                ps.conv(f"up{s}", width, cin, (3, 3, 3), transpose=True)
            else:
                ps.conv(f"up{s}", width, cin, (2, 2, 2), transpose=True)
            ps.norm(f"nu{s}", width)
            ps.conv(f"block{s}", width, width, (3, 3, 3))
            ps.norm(f"nb{s}", width)
            ps.conv(f"mask{s}", 1, width, (1, 1, 1))
            ps.conv(f"offset{s}", 3, width, (1, 1, 1))
            cin = width

    def l_length(self, scale: int) -> float:
        return max(self.cfg.grid.edge) * scale / 2.0

    def __call__(self, f: Tensor) -> dict[int, tuple[Tensor, Tensor]]:
        d, h, w = self.cfg.latent_shape
        if f.shape != (d, h, w):
            raise ValueError(f"lpcr_forward: latent shape {f.shape}, expected {(d, h, w)}")
        ps = self.params
        nz4 = self.cfg.grid.dims[2] // 4
        vol = ag.transpose(ag.reshape(f, (d // nz4, nz4, h, w)), (0, 2, 3, 1))
        out = {}
        x = vol
        for s in SCALES:
            wname, bname = f"up{s}.w", f"up{s}.b"
            if s == 4:
                x = ag.conv_transpose3d(x, ps[wname], ps[bname], stride=1, pad=1)
            else:
                x = ag.conv_transpose3d(x, ps[wname], ps[bname], stride=2)
            x = ag.silu(_gn(ps, f"nu{s}", x))
            x = ag.silu(_gn(ps, f"nb{s}", _conv3(ps, f"block{s}", x)))
            mask = ag.sigmoid(_conv3(ps, f"mask{s}", x, pad=0))
            off = offset_reparam(_conv3(ps, f"offset{s}", x, pad=0), self.l_length(s))
            out[s] = (ag.reshape(mask, mask.shape[1:]), off)
        return out


def lpcr_forward(f: Tensor, decoder: LpcrDecoder) -> dict[int, tuple[Tensor, Tensor]]:
    return decoder(f)


# denoiser ---------------------------------------------------------------------------

class Denoiser:
    """U-shaped 2D conv net over ``concat(f_t, c)`` with per-level timestep MLPs."""

    def __init__(self, cfg: NetConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ps = ParamStore(np.random.default_rng(seed))
        widths = cfg.unet_widths
        d = cfg.latent_dim
        ps.conv("in", widths[0], 2 * d, (3, 3))
        for lvl, c in enumerate(widths):
            ps.dense(f"temb{lvl}.0", c, cfg.temb_dim)
            ps.dense(f"temb{lvl}.1", c, c)
            for i in range(cfg.res_blocks):
                self._resblock(f"enc{lvl}.{i}", c, c)
            if lvl + 1 < len(widths):
                ps.conv(f"down{lvl}", widths[lvl + 1], c, (3, 3))
        for lvl in range(len(widths) - 2, -1, -1):
            c = widths[lvl]
            ps.conv(f"up{lvl}", c, widths[lvl + 1], (2, 2), transpose=True)
            for i in range(cfg.res_blocks):
                self._resblock(f"dec{lvl}.{i}", 2 * c if i == 0 else c, c)
        ps.norm("out_norm", widths[0])
        ps.conv("out", d, widths[0], (3, 3), zero=True)

    def _resblock(self, name: str, cin: int, cout: int) -> None:
        ps = self.params
        ps.norm(name + ".n0", cin)
        ps.conv(name + ".c0", cout, cin, (3, 3))
        ps.norm(name + ".n1", cout)
        ps.conv(name + ".c1", cout, cout, (3, 3))
        if cin != cout:
            ps.conv(name + ".skip", cout, cin, (1, 1))

    def _apply_res(self, name: str, x: Tensor, emb: Tensor) -> Tensor:
        ps = self.params
        h = _conv2(ps, name + ".c0", ag.silu(_gn(ps, name + ".n0", x)))
        h = ag.add(h, ag.reshape(emb, (-1, 1, 1)))
        h = _conv2(ps, name + ".c1", ag.silu(_gn(ps, name + ".n1", h)))
        skip = _conv2(ps, name + ".skip", x, pad=0) if name + ".skip.w" in ps else x
        return ag.add(skip, h)

    def __call__(self, f_t: Tensor, t: int, c: Tensor) -> Tensor:
        if f_t.shape != c.shape:
            raise ValueError(f"denoise: f_t shape {f_t.shape} != condition shape {c.shape}")
        if f_t.shape != self.cfg.latent_shape:
            raise ValueError(f"denoise: latent shape {f_t.shape}, expected {self.cfg.latent_shape}")
        ps = self.params
        widths = self.cfg.unet_widths
        temb = Tensor(timestep_embedding(t, self.cfg.temb_dim))
        embs = []
        for lvl in range(len(widths)):
            e = ag.silu(ag.linear(temb, ps[f"temb{lvl}.0.w"], ps[f"temb{lvl}.0.b"]))
            embs.append(ag.linear(e, ps[f"temb{lvl}.1.w"], ps[f"temb{lvl}.1.b"]))

        h = _conv2(ps, "in", ag.concat([f_t, c], axis=0))
        skips = []
        for lvl in range(len(widths)):
            for i in range(self.cfg.res_blocks):
                h = self._apply_res(f"enc{lvl}.{i}", h, embs[lvl])
            if lvl + 1 < len(widths):
                skips.append(h)
                h = _conv2(ps, f"down{lvl}", h, stride=2)
        for lvl in range(len(widths) - 2, -1, -1):
            h = ag.conv_transpose2d(h, ps[f"up{lvl}.w"], ps[f"up{lvl}.b"], stride=2)
            h = ag.concat([h, skips[lvl]], axis=0)
            for i in range(self.cfg.res_blocks):
                h = self._apply_res(f"dec{lvl}.{i}", h, embs[lvl])
        h = ag.silu(_gn(ps, "out_norm", h))
        return _conv2(ps, "out", h)


def denoise(f_t: Tensor, t: int, c: Tensor, net: Denoiser) -> Tensor:
    return net(f_t, t, c)
