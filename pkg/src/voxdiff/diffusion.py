"""Latent diffusion: noise schedules, closed-form forward noising, training loss,
and the conditional strided (deterministic) reverse sampler.

Timesteps run 1..T; index 0 denotes clean data with alpha_bar = 1.
"""
from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autograd as ag
from .autograd import Tensor

Predictor = Callable[[Tensor, int, Tensor], Tensor]


class Prediction(str, enum.Enum):
    NOISE = "noise"
    X0 = "x0"


class LossKind(str, enum.Enum):
    L2 = "l2"
    L1 = "l1"
    HUBER = "huber"


@dataclass(frozen=True)
class PredictionTarget:
    prediction: Prediction = Prediction.NOISE
    loss: LossKind = LossKind.L2

    def __post_init__(self):
        object.__setattr__(self, "prediction", Prediction(self.prediction))
        object.__setattr__(self, "loss", LossKind(self.loss))


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    beta: np.ndarray        # beta[t - 1] for t = 1..T
    alpha_bar: np.ndarray   # alpha_bar[t - 1]
    kind: str

    def ab(self, t: int) -> float:
        """alpha_bar at timestep ``t``; 1.0 at ``t = 0``."""
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_schedule(T: int = 1024, kind: str = "cosine", s: float = 0.008) -> NoiseSchedule:
    """Linear or cosine beta schedule.

    The linear endpoints 1e-4 and 0.02 are quoted for a 1000-step chain and
    are rescaled by ``1000 / T`` so shorter chains still end near pure noise.
    """
    if T < 2:
        raise ValueError(f"make_schedule: T must be >= 2, got {T}")
    if kind == "linear":
        scale = 1000.0 / T
        beta = np.linspace(scale * 1e-4, scale * 0.02, T)
    elif kind == "cosine":
        t = np.arange(T + 1) / T
        f = np.cos((t + s) / (1 + s) * np.pi / 2) ** 2
        ab = f / f[0]
        beta = np.clip(1.0 - ab[1:] / ab[:-1], 1e-12, 0.999)
    else:
        raise ValueError(f"make_schedule: unknown kind {kind!r}")
    return NoiseSchedule(T, beta, np.cumprod(1.0 - beta), kind)


def q_sample(f0: np.ndarray, t: int, eps: np.ndarray, s: NoiseSchedule) -> np.ndarray:
    """Draw f_t ~ q(f_t | f_0) in closed form: sqrt(ab) f0 + sqrt(1 - ab) eps."""
    f0, eps = np.asarray(f0), np.asarray(eps)
    if f0.shape != eps.shape:
        raise ValueError(f"q_sample: f0 shape {f0.shape} != eps shape {eps.shape}")
    if not 0 <= t <= s.T:
        raise ValueError(f"q_sample: t={t} outside [0, {s.T}]")
    ab = s.ab(t)
    return np.sqrt(ab) * f0 + np.sqrt(1.0 - ab) * eps


@dataclass
class ChainReport:
    t: int
    n_samples: int
    max_mean_z: float   # worst |empirical - closed form| in units of the MC standard error
    max_var_z: float
    exact_single_step: bool

    @property
    def passed(self) -> bool:
        return self.max_mean_z <= 3.0 and self.max_var_z <= 3.0


def chain_equivalence_check(f0: np.ndarray, t: int, s: NoiseSchedule, n_samples: int = 100_000,
                            seed: int = 0) -> ChainReport:
    """Iterate q(f_k | f_{k-1}) = N(sqrt(1 - beta_k) f_{k-1}, beta_k I) for k = 1..t and
    compare per-element sample moments with the closed form."""
    f0 = np.asarray(f0, dtype=np.float64).ravel()
    rng = np.random.default_rng(seed)
    x = np.broadcast_to(f0, (n_samples, f0.size)).copy()
    for k in range(1, t + 1):
        b = s.beta[k - 1]
        x = np.sqrt(1.0 - b) * x + np.sqrt(b) * rng.standard_normal(x.shape)
    ab = s.ab(t)
    mu, var = np.sqrt(ab) * f0, 1.0 - ab
    emp_mu, emp_var = x.mean(axis=0), x.var(axis=0, ddof=1)
    mean_se = np.sqrt(var / n_samples)
    var_se = var * np.sqrt(2.0 / (n_samples - 1))
    exact = t == 1 and np.isclose(np.sqrt(1.0 - s.beta[0]) ** 2, ab, rtol=0, atol=1e-15)
    return ChainReport(t, n_samples, float(np.max(np.abs(emp_mu - mu)) / mean_se),
                       float(np.max(np.abs(emp_var - var)) / var_se), bool(exact))


def _loss(kind: LossKind, a: Tensor, b) -> Tensor:
    if kind is LossKind.L2:
        return ag.mse(a, b)
    if kind is LossKind.L1:
        return ag.l1(a, b)
    return ag.huber(a, b)


def diffusion_loss(f0: np.ndarray, c: Tensor, t: int, eps: np.ndarray, net: Predictor,
                   s: NoiseSchedule, target: PredictionTarget = PredictionTarget()) -> Tensor:
    f_t = q_sample(f0, t, eps, s)
    pred = net(Tensor(f_t), t, c)
    goal = eps if target.prediction is Prediction.NOISE else f0
    return _loss(target.loss, pred, Tensor(np.asarray(goal)))


def sampling_timesteps(T: int, steps: int) -> np.ndarray:
    """``steps`` evenly spaced timesteps from T down to 1."""
    if not 1 <= steps <= T:
        raise ValueError(f"sample: steps={steps} must lie in [1, T={T}]")
    ts = np.unique(np.round(np.linspace(1, T, steps)).astype(int))
    return ts[::-1]


def predict_x0(pred: np.ndarray, x_t: np.ndarray, t: int, s: NoiseSchedule,
               prediction: Prediction) -> tuple[np.ndarray, np.ndarray]:
    """Return (x0_hat, eps_hat) from a network output."""
    ab = s.ab(t)
    if prediction is Prediction.X0:
        x0 = pred
        eps = (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
    else:
        eps = pred
        x0 = (x_t - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
    return x0, eps


def sample(c: Tensor, steps: int, s: NoiseSchedule, net: Predictor,
           target: PredictionTarget = PredictionTarget(), seed: int = 0,
           clip_x0: float | None = None, ancestral: bool = False,
           trace: list | None = None) -> np.ndarray:
    """Generate a latent conditioned on ``c`` starting from N(0, I).

    The default is the deterministic strided update (eta = 0) over ``steps``
    timesteps. ``ancestral=True`` instead runs stochastic DDPM posterior
    sampling over all T steps. ``trace`` (a list) collects (t, ||x0_hat||).
    """
    if steps > s.T:
        raise ValueError(f"sample: steps={steps} exceeds T={s.T}")
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(c.shape)
    ts = np.arange(s.T, 0, -1) if ancestral else sampling_timesteps(s.T, steps)
    with ag.no_grad():
        for i, t in enumerate(ts):
            t = int(t)
            pred = net(Tensor(x), t, c).data
            x0, eps = predict_x0(pred, x, t, s, target.prediction)
            if clip_x0 is not None:
                x0 = np.clip(x0, -clip_x0, clip_x0)
                eps = (x - np.sqrt(s.ab(t)) * x0) / np.sqrt(1.0 - s.ab(t))
            if trace is not None:
                trace.append((t, float(np.linalg.norm(x0))))
            t_prev = int(ts[i + 1]) if i + 1 < len(ts) else 0
            ab_prev = s.ab(t_prev)
            if ancestral:
                ab, beta = s.ab(t), s.beta[t - 1]
                mean = (np.sqrt(ab_prev) * beta / (1 - ab)) * x0 \
                    + (np.sqrt(1 - beta) * (1 - ab_prev) / (1 - ab)) * x
                var = beta * (1 - ab_prev) / (1 - ab)
                x = mean + (np.sqrt(var) * rng.standard_normal(x.shape) if t_prev > 0 else 0.0)
            else:
                x = np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps
    return x


def write_trace(path: str | os.PathLike, trace: list) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestep", "x0_norm"])
        w.writerows(trace)
