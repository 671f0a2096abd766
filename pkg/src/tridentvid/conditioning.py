"""Condition signals: toy prompt embeddings, per-frame structure maps, appearance references."""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .codec import VideoClip

STRUCTURE_KINDS = ("edge", "depth_proxy")


class UnknownTokenError(KeyError):
    pass


class InvalidReference(ValueError):
    """Appearance reference does not fit the requested mode or run."""


def load_vocab(path: str | Path | None = None) -> list[str]:
    """Vocabulary file: one token per line, line order is id order."""
    if path is None:
        text = resources.files("tridentvid").joinpath("data/vocab.txt").read_text()
    else:
        text = Path(path).read_text()
    return [line.strip() for line in text.splitlines() if line.strip()]


def tokenize(words: str | Sequence[str], vocab: Sequence[str]) -> list[int]:
    if isinstance(words, str):
        words = words.split()
    index = {w: i for i, w in enumerate(vocab)}
    ids = []
    for w in words:
        if w not in index:
            raise UnknownTokenError(f"token {w!r} not in vocabulary")
        ids.append(index[w])
    return ids


def _positional(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32)[:, None]
    freqs = torch.exp(-math.log(100.0) * torch.arange(0, d, 2, dtype=torch.float32) / d)
    pe = torch.zeros(n, d)
    pe[:, 0::2] = torch.sin(pos * freqs)
    pe[:, 1::2] = torch.cos(pos * freqs)
    return pe


class TextEncoder(nn.Module):
    """Learned token table plus fixed sinusoidal positions.

    Row 0 is the null token.  Prompts are padded with it to ``n_tokens``, and
    padded slots carry no positional term, so the empty prompt embeds as row 0
    repeated: the unconditional embedding used by guidance.
    """

    def __init__(self, vocab_size: int, n_tokens: int = 4, dim: int = 64):
        super().__init__()
        self.vocab_size = vocab_size
        self.n_tokens = n_tokens
        self.table = nn.Embedding(vocab_size, dim)
        nn.init.normal_(self.table.weight, std=0.5)
        self.register_buffer("pos", _positional(n_tokens, dim), persistent=False)

    def pad(self, ids: Sequence[int]) -> torch.Tensor:
        ids = list(ids)[: self.n_tokens]
        for i in ids:
            if not 0 <= i < self.vocab_size:
                raise UnknownTokenError(f"token id {i} outside vocabulary of size {self.vocab_size}")
        return torch.tensor(ids + [0] * (self.n_tokens - len(ids)), dtype=torch.long)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """``ids`` (B, n_tokens) long -> (B, n_tokens, dim)."""
        return self.table(ids) + self.pos * (ids != 0).unsqueeze(-1).to(self.pos.dtype)


@dataclass
class PromptEmbedding:
    tokens: torch.Tensor  # (n_tokens,) long, padded
    embedding: torch.Tensor  # (n_tokens, d_text)


def embed_prompt(ids: Sequence[int], encoder: TextEncoder) -> PromptEmbedding:
    padded = encoder.pad(ids)
    with torch.no_grad():
        emb = encoder(padded[None])[0]
    return PromptEmbedding(padded, emb)


def unconditional_embedding(encoder: TextEncoder) -> PromptEmbedding:
    return embed_prompt([], encoder)


# structure extraction ---------------------------------------------------------

_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 8.0
_LUMA = torch.tensor([0.299, 0.587, 0.114])


@dataclass
class StructureSequence:
    maps: torch.Tensor  # (l, 1, H, W) in [0, 1]
    kind: str

    @property
    def length(self) -> int:
        return self.maps.shape[0]


def _gray(frame: torch.Tensor) -> torch.Tensor:
    return (frame * _LUMA[:, None, None].to(frame.dtype)).sum(0, keepdim=True)


def edge_map(frame: torch.Tensor) -> torch.Tensor:
    """Gradient magnitude of grayscale, normalised by its per-frame maximum."""
    g = _gray(frame)[None]
    g = F.pad(g, (1, 1, 1, 1), mode="replicate")
    kx = _SOBEL_X.to(frame.dtype)[None, None]
    gx = F.conv2d(g, kx)
    gy = F.conv2d(g, kx.transpose(-1, -2))
    mag = torch.sqrt(gx**2 + gy**2)[0]
    peak = mag.max()
    return mag / peak if peak > 0 else torch.zeros_like(mag)


def depth_proxy_map(frame: torch.Tensor, sigma: float = 1.5) -> torch.Tensor:
    """Gaussian-blurred luminance rescaled to [0, 1] (luminance range -1..1)."""
    radius = int(math.ceil(3 * sigma))
    x = torch.arange(-radius, radius + 1, dtype=frame.dtype)
    k = torch.exp(-(x**2) / (2 * sigma**2))
    k = k / k.sum()
    g = _gray(frame)[None]
    g = F.pad(g, (radius, radius, radius, radius), mode="replicate")
    g = F.conv2d(g, k.reshape(1, 1, 1, -1))
    g = F.conv2d(g, k.reshape(1, 1, -1, 1))
    return ((g[0] + 1.0) / 2.0).clamp(0.0, 1.0)


def extract_structure(clip: VideoClip | torch.Tensor, kind: str = "edge") -> StructureSequence:
    if kind not in STRUCTURE_KINDS:
        raise ValueError(f"unsupported structure kind {kind!r}; expected one of {STRUCTURE_KINDS}")
    frames = clip.frames if isinstance(clip, VideoClip) else clip
    fn = edge_map if kind == "edge" else depth_proxy_map
    return StructureSequence(torch.stack([fn(f) for f in frames]), kind)


def save_structure_images(seq: StructureSequence, out_dir: str | Path) -> list[Path]:
    from PIL import Image

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, m in enumerate(seq.maps):
        arr = np.round(m[0].numpy() * 255).astype(np.uint8)
        p = out_dir / f"{seq.kind}_{i:04d}.png"
        Image.fromarray(arr, mode="L").save(p)
        paths.append(p)
    return paths


# appearance references --------------------------------------------------------

@dataclass
class AppearanceReference:
    frames: torch.Tensor  # (count, 3, H, W)
    indices: tuple[int, ...]

    @property
    def count(self) -> int:
        return len(self.indices)

    @property
    def entries(self) -> list[tuple[torch.Tensor, int]]:
        return [(self.frames[k], j) for k, j in enumerate(self.indices)]


def center_index(length: int) -> int:
    return length // 2


def make_reference(
    frames: torch.Tensor | Sequence[torch.Tensor],
    indices: Sequence[int] | None,
    mode: str,
    length: int,
) -> AppearanceReference:
    """Validate reference frames for a run of ``length`` frames.

    ``edit`` takes one frame (default index: the center frame); ``interpolate``
    takes two frames at the run endpoints ``(0, length - 1)``.
    """
    if isinstance(frames, torch.Tensor) and frames.ndim == 3:
        frames = frames[None]
    frames = torch.stack(list(frames)) if not isinstance(frames, torch.Tensor) else frames
    count = frames.shape[0]
    if mode == "edit":
        if count != 1:
            raise InvalidReference(f"edit mode takes exactly 1 reference frame, got {count}")
        indices = (center_index(length),) if indices is None else tuple(int(i) for i in indices)
    elif mode == "interpolate":
        if count != 2:
            raise InvalidReference(f"interpolate mode takes exactly 2 reference frames, got {count}")
        indices = (0, length - 1) if indices is None else tuple(int(i) for i in indices)
        if indices != (0, length - 1):
            raise InvalidReference(f"interpolate references must sit at (0, {length - 1}), got {indices}")
    else:
        raise InvalidReference(f"unknown reference mode {mode!r}")
    if len(indices) != count:
        raise InvalidReference(f"{count} frames but {len(indices)} indices")
    for i in indices:
        if not 0 <= i < length:
            raise InvalidReference(f"reference index {i} outside run of length {length}")
    if any(b <= a for a, b in zip(indices, indices[1:])):
        raise InvalidReference(f"reference indices must be strictly increasing, got {indices}")
    return AppearanceReference(frames, indices)
