"""Toy perceptual compression model bridging pixels and the diffusion latent space.

Frames are ``(3, H, W)`` float tensors in ``[-1, 1]``; latents are
``(c_latent, H/f, W/f)``.  Clips stack frames along a leading frame axis.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import config_to_json, load_archive, save_archive
from .optim import LogRecord, check_finite, make_optimizer


class ShapeError(ValueError):
    pass


@dataclass
class VideoClip:
    frames: torch.Tensor  # (l, 3, H, W) in [-1, 1]
    fps: float = 4.0

    def __post_init__(self):
        if self.frames.ndim != 4 or self.frames.shape[1] != 3:
            raise ShapeError(f"clip frames must be (l, 3, H, W), got {tuple(self.frames.shape)}")
        if self.frames.shape[0] < 1:
            raise ShapeError("clip must hold at least one frame")
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return tuple(self.frames.shape[2:])


@dataclass
class LatentClip:
    latents: torch.Tensor  # (l, c, h, w)
    fps: float = 4.0

    @property
    def length(self) -> int:
        return self.latents.shape[0]


@dataclass
class CodecConfig:
    factor: int = 4
    latent_channels: int = 4
    widths: tuple[int, int] = (16, 64)
    seed: int = 0
    lr: float = 2e-3
    iterations: int = 1500
    batch: int = 32
    optimizer: str = "adam"
    cosine_decay: bool = True
    # multiplies raw encoder output so latents have roughly unit variance; fit after training
    latent_scale: float = 1.0

    def __post_init__(self):
        if self.factor != 4:
            raise ValueError("only downsample factor 4 is implemented")
        self.widths = tuple(self.widths)


class _Res(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.norm2 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x):
        h = self.conv1(F.silu(self.norm1(x)))
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class Codec(nn.Module):
    def __init__(self, config: CodecConfig | None = None):
        super().__init__()
        self.config = config or CodecConfig()
        w0, w1 = self.config.widths
        c = self.config.latent_channels
        self.encoder = nn.Sequential(
            nn.Conv2d(3, w0, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(w0, w1, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(w1, w1, 4, stride=2, padding=1),
            _Res(w1, w1),
            nn.GroupNorm(8, w1),
            nn.SiLU(),
            nn.Conv2d(w1, c, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(c, w1, 3, padding=1),
            _Res(w1, w1),
            nn.ConvTranspose2d(w1, w1, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(w1, w1, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(w1, w0, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(w0, 3, 3, padding=1),
        )

    @property
    def factor(self) -> int:
        return self.config.factor

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """Deterministic encoder on a frame ``(3,H,W)`` or a batch ``(N,3,H,W)``."""
        single = x.ndim == 3
        if single:
            x = x[None]
        h, w = x.shape[-2:]
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (N, 3, H, W) pixels, got {tuple(x.shape)}")
        if h % self.factor or w % self.factor:
            raise ShapeError(f"frame size {h}x{w} not divisible by codec factor {self.factor}")
        z = self.encoder(x) * self.config.latent_scale
        return z[0] if single else z

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        single = z.ndim == 3
        if single:
            z = z[None]
        if z.ndim != 4 or z.shape[1] != self.config.latent_channels:
            raise ShapeError(
                f"expected (N, {self.config.latent_channels}, h, w) latents, got {tuple(z.shape)}"
            )
        x = self.bound(self.decoder(z / self.config.latent_scale))
        return x[0] if single else x

    @staticmethod
    def bound(pre: torch.Tensor) -> torch.Tensor:
        return pre.clamp(-1.0, 1.0)

    def save(self, path: str | Path) -> Path:
        cfg = {"kind": "codec", **config_to_json(asdict(self.config))}
        return save_archive(path, self.state_dict(), cfg)

    @classmethod
    def load(cls, path: str | Path) -> "Codec":
        arrays, cfg = load_archive(path)
        if cfg.pop("kind", None) != "codec":
            raise ValueError(f"{path} is not a codec checkpoint")
        model = cls(CodecConfig(**cfg))
        model.load_state_dict(arrays)
        model.eval()
        return model


def encode(frame: torch.Tensor, codec: Codec) -> torch.Tensor:
    with torch.no_grad():
        return codec.encode(frame)


def decode(latent: torch.Tensor, codec: Codec) -> torch.Tensor:
    with torch.no_grad():
        return codec.decode(latent)


def encode_clip(clip: VideoClip, codec: Codec) -> LatentClip:
    out = []
    for i in range(clip.length):
        try:
            out.append(encode(clip.frames[i], codec))
        except ShapeError as exc:
            raise ShapeError(f"frame {i}: {exc}") from exc
    return LatentClip(torch.stack(out), fps=clip.fps)


def decode_clip(clip: LatentClip, codec: Codec) -> VideoClip:
    out = []
    for i in range(clip.length):
        try:
            out.append(decode(clip.latents[i], codec))
        except ShapeError as exc:
            raise ShapeError(f"frame {i}: {exc}") from exc
    return VideoClip(torch.stack(out), fps=clip.fps)


def psnr(x: torch.Tensor, ref: torch.Tensor) -> float:
    """PSNR in dB for signals on the [-1, 1] range (peak-to-peak 2)."""
    mse = float(((x - ref) ** 2).mean())
    if mse == 0:
        return float("inf")
    return 10.0 * torch.log10(torch.tensor(4.0 / mse)).item()


def train_codec(frames: torch.Tensor, config: CodecConfig | None = None) -> tuple[Codec, list[LogRecord]]:
    """Fit the codec on ``frames`` (N, 3, H, W) with a pixel MSE objective.

    After optimisation ``latent_scale`` is set to the inverse std of the raw
    latents over the training frames so downstream diffusion sees unit-scale
    inputs.
    """
    config = config or CodecConfig()
    torch.manual_seed(config.seed)
    model = Codec(CodecConfig(**{**asdict(config), "latent_scale": 1.0}))
    opt = make_optimizer(model.parameters(), config.optimizer, config.lr)
    sched = None
    if config.cosine_decay and config.iterations > 0:
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=config.iterations)
    gen = torch.Generator().manual_seed(config.seed)
    log = []
    n = frames.shape[0]
    model.train()
    for step in range(config.iterations):
        idx = torch.randint(0, n, (min(config.batch, n),), generator=gen)
        x = frames[idx]
        loss = F.mse_loss(model.decode(model.encode(x)), x)
        value = check_finite(loss, "codec", step)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        lr = opt.param_groups[0]["lr"]
        opt.step()
        if sched is not None:
            sched.step()
        log.append(LogRecord(step, "codec", value, lr, config.seed))
    model.eval()
    if config.iterations > 0:
        with torch.no_grad():
            z = torch.cat([model.encoder(frames[i : i + 256]) for i in range(0, n, 256)])
            std = float(z.std())
        model.config.latent_scale = 1.0 / std if std > 0 else 1.0
    else:
        model.config.latent_scale = config.latent_scale
    model.config.iterations = config.iterations
    return model, log
