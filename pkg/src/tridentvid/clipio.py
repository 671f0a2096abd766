"""Clip directories: numbered 8-bit PNG frames plus ``meta.json`` (fps, frame count)."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .codec import VideoClip

META = "meta.json"


def to_uint8(frame: torch.Tensor) -> np.ndarray:
    """(3, H, W) in [-1, 1] -> (H, W, 3) uint8."""
    arr = ((frame.detach().clamp(-1, 1).permute(1, 2, 0).numpy() + 1.0) * 127.5).round()
    return arr.astype(np.uint8)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(arr.astype(np.float32) / 127.5 - 1.0).permute(2, 0, 1).contiguous()


def write_frame(frame: torch.Tensor, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(frame), mode="RGB").save(path)
    return path


def read_frame(path: str | Path) -> torch.Tensor:
    with Image.open(path) as im:
        return from_uint8(np.asarray(im.convert("RGB")))


def write_clip(clip: VideoClip, out_dir: str | Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(clip.frames):
        write_frame(f, out_dir / f"frame_{i:04d}.png")
    (out_dir / META).write_text(json.dumps({"fps": clip.fps, "frame_count": clip.length}, indent=2))
    return out_dir


def read_clip(in_dir: str | Path) -> VideoClip:
    in_dir = Path(in_dir)
    meta_path = in_dir / META
    if not meta_path.exists():
        raise FileNotFoundError(f"{in_dir} has no {META}")
    meta = json.loads(meta_path.read_text())
    frames = [read_frame(in_dir / f"frame_{i:04d}.png") for i in range(meta["frame_count"])]
    return VideoClip(torch.stack(frames), fps=float(meta["fps"]))


def quantize(clip: VideoClip) -> VideoClip:
    """Round-trip through 8-bit so in-memory clips match what a directory would hold."""
    return VideoClip(torch.stack([from_uint8(to_uint8(f)) for f in clip.frames]), fps=clip.fps)
