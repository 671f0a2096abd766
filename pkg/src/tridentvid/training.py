"""Staged training: T2I pretraining, structure-branch pretraining, then temporal +
appearance training (edit or interpolation variant) under the freeze partition.

Every stage draws batches, timesteps and noise from its own seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .codec import Codec
from .conditioning import STRUCTURE_KINDS, center_index, extract_structure, load_vocab, tokenize
from .diffusion import NoiseSchedule, denoise_loss, desk_schedule, q_sample
from .network import (
    SpatialUNet,
    StructureBranch,
    TridentConfig,
    TridentNet,
    UNetConfig,
    init_from_t2i,
)
from .optim import LogRecord, check_finite, make_optimizer
from .synthetic import SyntheticClip

STAGES = ("t2i", "structure", "temporal_appearance", "interpolation")


class FreezeViolation(AssertionError):
    pass


@dataclass
class TrainConfig:
    stage: str = "t2i"
    lr: float = 1e-3
    batch: int = 8  # images for t2i/structure, clips otherwise
    iterations: int = 1000
    T: int = 50
    frames: int = 5
    seed: int = 0
    optimizer: str = "adam"
    p_uncond: float = 0.1  # prompt dropout so guidance has an unconditional model

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if not self.lr > 0:
            raise ValueError("lr must be > 0")


# data preparation -----------------------------------------------------------------

def prompt_ids(corpus: Sequence[SyntheticClip], vocab: Sequence[str] | None = None) -> torch.Tensor:
    vocab = vocab or load_vocab()
    return torch.tensor([tokenize(list(c.tokens), vocab) for c in corpus], dtype=torch.long)


@torch.no_grad()
def encode_corpus(corpus: Sequence[SyntheticClip], codec: Codec) -> torch.Tensor:
    """(n_clips, l, C, h, w) latents."""
    frames = torch.stack([c.clip.frames for c in corpus])
    n, l = frames.shape[:2]
    flat = frames.reshape(n * l, *frames.shape[2:])
    z = torch.cat([codec.encode(flat[i : i + 256]) for i in range(0, n * l, 256)])
    return z.reshape(n, l, *z.shape[1:])


def structure_maps(corpus: Sequence[SyntheticClip], kind: str) -> torch.Tensor:
    return torch.stack([extract_structure(c.clip, kind).maps for c in corpus])


def _drop_prompts(ids: torch.Tensor, p: float, gen: torch.Generator) -> torch.Tensor:
    if p <= 0:
        return ids
    keep = torch.rand(ids.shape[0], generator=gen) >= p
    return ids * keep[:, None]


def _noised(z0: torch.Tensor, schedule: NoiseSchedule, gen: torch.Generator):
    t = torch.randint(1, schedule.T + 1, (z0.shape[0],), generator=gen)
    eps = torch.randn(z0.shape, generator=gen)
    return t, eps, q_sample(z0, t, eps, schedule).to(z0.dtype)


def _schedule_for(config: TrainConfig, schedule: NoiseSchedule | None) -> NoiseSchedule:
    return schedule if schedule is not None else desk_schedule(config.T)


# stage A ---------------------------------------------------------------------------

def pretrain_t2i(
    latents: torch.Tensor,
    ids: torch.Tensor,
    config: TrainConfig | None = None,
    unet_config: UNetConfig | None = None,
    schedule: NoiseSchedule | None = None,
    timesteps_seen: list[int] | None = None,
) -> tuple[SpatialUNet, list[LogRecord]]:
    """Epsilon-prediction training on single frames.

    ``latents`` is (n_clips, l, C, h, w) or (n_images, C, h, w); ``ids`` holds
    one padded prompt per clip (or image).
    """
    config = config or TrainConfig(stage="t2i")
    schedule = _schedule_for(config, schedule)
    if latents.ndim == 5:
        l = latents.shape[1]
        ids = ids.repeat_interleave(l, dim=0)
        latents = latents.reshape(-1, *latents.shape[2:])
    torch.manual_seed(config.seed)
    unet = SpatialUNet(unet_config)
    opt = make_optimizer(unet.parameters(), config.optimizer, config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    padded = torch.stack([unet.text.pad(row[row != 0].tolist()) for row in ids])
    log = []
    unet.train()
    for step in range(config.iterations):
        idx = torch.randint(0, latents.shape[0], (config.batch,), generator=gen)
        z0 = latents[idx]
        t, eps, zt = _noised(z0, schedule, gen)
        text = unet.text(_drop_prompts(padded[idx], config.p_uncond, gen))
        loss = denoise_loss(eps, unet(zt, t, text))
        value = check_finite(loss, "t2i", step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        log.append(LogRecord(step, "t2i", value, config.lr, config.seed))
        if timesteps_seen is not None:
            timesteps_seen.extend(t.tolist())
    return unet.eval(), log


# stage B ---------------------------------------------------------------------------

def pretrain_structure_branch(
    latents: torch.Tensor,
    maps: torch.Tensor,
    ids: torch.Tensor,
    t2i: SpatialUNet,
    kind: str = "edge",
    config: TrainConfig | None = None,
    schedule: NoiseSchedule | None = None,
) -> tuple[StructureBranch, list[LogRecord]]:
    """Train the structure branch frame-wise with the T2I weights frozen.

    ``latents`` (n_clips, l, C, h, w) and ``maps`` (n_clips, l, 1, H, W).
    """
    if kind not in STRUCTURE_KINDS:
        raise ValueError(f"unsupported structure kind {kind!r}")
    config = config or TrainConfig(stage="structure")
    schedule = _schedule_for(config, schedule)
    l = latents.shape[1]
    ids = ids.repeat_interleave(l, dim=0)
    latents = latents.reshape(-1, *latents.shape[2:])
    maps = maps.reshape(-1, *maps.shape[2:])
    net = init_from_t2i(
        t2i,
        TridentConfig(structure_kind=kind, hint_size=maps.shape[-1], seed=config.seed),
        stage="structure",
    )
    spatial_before = net.group_checksums()["main.spatial"]
    opt = make_optimizer(net.parameters(), config.optimizer, config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    padded = torch.stack([net.spatial.text.pad(row[row != 0].tolist()) for row in ids])
    log = []
    net.train()
    for step in range(config.iterations):
        idx = torch.randint(0, latents.shape[0], (config.batch,), generator=gen)
        z0 = latents[idx][:, None]
        t, eps, zt = _noised(z0, schedule, gen)
        text = net.spatial.text(_drop_prompts(padded[idx], config.p_uncond, gen))
        pred = net(zt, t, text, structure=maps[idx][:, None], s_struct=1.0, s_app=0.0, temporal=False)
        loss = denoise_loss(eps, pred)
        value = check_finite(loss, "structure", step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        log.append(LogRecord(step, "structure", value, config.lr, config.seed))
    if net.group_checksums()["main.spatial"] != spatial_before:
        raise FreezeViolation("main spatial weights changed during structure pretraining")
    branch = net.structure.eval()
    for p in branch.parameters():
        p.requires_grad_(False)
    return branch, log


# stage C ---------------------------------------------------------------------------

def reference_indices(mode: str, length: int) -> tuple[int, ...]:
    return (center_index(length),) if mode == "edit" else (0, length - 1)


def train_temporal_appearance(
    latents: torch.Tensor,
    maps: torch.Tensor,
    ids: torch.Tensor,
    net: TridentNet,
    config: TrainConfig | None = None,
    schedule: NoiseSchedule | None = None,
) -> tuple[TridentNet, list[LogRecord]]:
    """Update only temporal layers and the appearance branch.

    Appearance references are the clip's own frames: the center frame for the
    edit model, both endpoints for the interpolation model.  Structure control
    runs at ``net.config.s_struct``.
    """
    config = config or TrainConfig(stage="temporal_appearance")
    if config.stage not in ("temporal_appearance", "interpolation"):
        raise ValueError(f"stage {config.stage!r} is not a temporal stage")
    schedule = _schedule_for(config, schedule)
    mode = "interpolate" if config.stage == "interpolation" else "edit"
    if net.config.mode != mode:
        raise ValueError(f"stage {config.stage!r} needs a {mode}-mode trident, got {net.config.mode!r}")
    flags = net.apply_freeze(config.stage)
    frozen = {n: p.detach().clone() for n, p in net.named_parameters() if flags[n]}
    length = latents.shape[1]
    refs = reference_indices(mode, length)
    padded = torch.stack([net.spatial.text.pad(row[row != 0].tolist()) for row in ids])
    opt = make_optimizer(net.parameters(), config.optimizer, config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    log = []
    net.train()
    for step in range(config.iterations):
        idx = torch.randint(0, latents.shape[0], (config.batch,), generator=gen)
        z0 = latents[idx]
        t, eps, zt = _noised(z0, schedule, gen)
        text = net.spatial.text(_drop_prompts(padded[idx], config.p_uncond, gen))
        pred = net(zt, t, text, structure=maps[idx], ref_latents=z0[:, list(refs)], ref_indices=refs)
        loss = denoise_loss(eps, pred)
        value = check_finite(loss, config.stage, step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        log.append(LogRecord(step, config.stage, value, config.lr, config.seed))
    net.eval()
    for n, p in net.named_parameters():
        if n in frozen and not torch.equal(frozen[n], p.detach()):
            raise FreezeViolation(f"frozen parameter {n} changed during {config.stage}")
    return net, log
