"""Forward noising, the epsilon-prediction loss, guidance and a deterministic DDIM sampler.

Timesteps are 1-based: ``t`` in ``[1, T]`` reads ``alpha_bars[t - 1]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import torch


class ScheduleError(ValueError):
    pass


class NonFiniteModelOutput(RuntimeError):
    def __init__(self, t: int):
        super().__init__(f"model returned non-finite epsilon at timestep {t}")
        self.t = t


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    betas: torch.Tensor  # float64, (T,)

    @property
    def alphas(self) -> torch.Tensor:
        return 1.0 - self.betas

    @property
    def alpha_bars(self) -> torch.Tensor:
        return torch.cumprod(self.alphas, dim=0)

    def alpha_bar(self, t: int | torch.Tensor) -> torch.Tensor:
        if isinstance(t, int):
            if not 1 <= t <= self.T:
                raise ScheduleError(f"timestep {t} outside [1, {self.T}]")
        return self.alpha_bars[torch.as_tensor(t) - 1]

    def to_config(self) -> dict:
        return {"T": self.T, "beta_min": float(self.betas[0]), "beta_max": float(self.betas[-1])}


def build_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    """Linear beta ramp from ``beta_min`` to ``beta_max`` over ``T`` steps."""
    if T < 2:
        raise ScheduleError(f"T must be >= 2, got {T}")
    if not (0 < beta_min <= beta_max < 1):
        raise ScheduleError(f"need 0 < beta_min <= beta_max < 1, got {beta_min}, {beta_max}")
    betas = torch.linspace(beta_min, beta_max, T, dtype=torch.float64)
    return NoiseSchedule(T, betas)


def desk_schedule(T: int = 50) -> NoiseSchedule:
    """The 1e-4..0.02 @ T=1000 ramp rescaled so short chains still end near pure noise."""
    k = 1000.0 / T
    return build_schedule(T, 1e-4 * k, 0.02 * k)


def schedule_from_config(cfg: dict) -> NoiseSchedule:
    return build_schedule(cfg["T"], cfg["beta_min"], cfg["beta_max"])


def _bcast(v: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    v = v.to(like.dtype)
    return v.reshape(v.shape + (1,) * (like.ndim - v.ndim))


def q_sample(z0: torch.Tensor, t: int | torch.Tensor, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Closed-form forward noising ``sqrt(ab) z0 + sqrt(1 - ab) eps``.

    ``t`` may be an int or a ``(B,)`` tensor indexing the leading axis of ``z0``.
    """
    if eps.shape != z0.shape:
        raise ScheduleError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    ab = schedule.alpha_bar(t)
    return _bcast(ab.sqrt(), z0) * z0 + _bcast((1 - ab).sqrt(), z0) * eps


def denoise_loss(eps_true: torch.Tensor, eps_pred: torch.Tensor) -> torch.Tensor:
    if eps_true.shape != eps_pred.shape:
        raise ScheduleError(f"shape mismatch {tuple(eps_true.shape)} vs {tuple(eps_pred.shape)}")
    return ((eps_true - eps_pred) ** 2).mean()


@dataclass
class GuidanceConfig:
    scale: float = 9.0
    uncond: Any = None  # condition object handed to model_fn for the unconditional pass

    def __post_init__(self):
        if not math.isfinite(self.scale) or self.scale < 0:
            raise ValueError(f"guidance scale must be finite and >= 0, got {self.scale}")


def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor, w: float) -> torch.Tensor:
    if eps_uncond.shape != eps_cond.shape:
        raise ScheduleError(f"shape mismatch {tuple(eps_uncond.shape)} vs {tuple(eps_cond.shape)}")
    if w == 1:
        return eps_cond
    if w == 0:
        return eps_uncond
    return eps_uncond + w * (eps_cond - eps_uncond)


def ddim_timesteps(T: int, steps: int) -> list[int]:
    """Evenly spaced, strictly decreasing, always including ``T`` and ``1``."""
    if not 1 <= steps <= T:
        raise ScheduleError(f"steps must be in [1, {T}], got {steps}")
    if steps == 1:
        return [T]
    return [int(round(T - i * (T - 1) / (steps - 1))) for i in range(steps)]


ModelFn = Callable[[torch.Tensor, int, Any], torch.Tensor]


def ddim_sample(
    model_fn: ModelFn,
    z_T: torch.Tensor,
    cond: Any,
    schedule: NoiseSchedule,
    steps: int = 30,
    guidance: GuidanceConfig | None = None,
) -> torch.Tensor:
    """Deterministic (eta = 0) DDIM from ``z_T`` down to a ``z_0`` estimate."""
    ts = ddim_timesteps(schedule.T, steps)
    abars = schedule.alpha_bars
    z = z_T
    for k, t in enumerate(ts):
        eps = model_fn(z, t, cond)
        if guidance is not None and guidance.scale != 1:
            eps = cfg_combine(model_fn(z, t, guidance.uncond), eps, guidance.scale)
        if not torch.isfinite(eps).all():
            raise NonFiniteModelOutput(t)
        ab = abars[t - 1].to(z.dtype)
        ab_prev = abars[ts[k + 1] - 1].to(z.dtype) if k + 1 < len(ts) else torch.ones((), dtype=z.dtype)
        x0 = (z - (1 - ab).sqrt() * eps) / ab.sqrt()
        z = ab_prev.sqrt() * x0 + (1 - ab_prev).sqrt() * eps
    return z
