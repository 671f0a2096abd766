"""Moving-shapes video corpus with an exact attribute grammar.

Every clip is described by four tokens ``color shape motion background``;
the renderer supersamples coverage and then applies a light [1, 2, 1] blur,
so shape edges are soft enough for a small codec to reconstruct.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, replace

import numpy as np
import torch

from .codec import VideoClip

COLORS = {
    "red": (0.9, -0.8, -0.8),
    "green": (-0.8, 0.8, -0.8),
    "blue": (-0.8, -0.6, 0.9),
    "yellow": (0.9, 0.9, -0.8),
}
SHAPES = ("circle", "square", "triangle")
MOTIONS = ("static", "linear", "circular")
BACKGROUNDS = {
    "bg_black": (-0.9, -0.9, -0.9),
    "bg_gray": (0.0, 0.0, 0.0),
    "bg_white": (0.85, 0.85, 0.85),
}
ATTRIBUTE_SLOTS = (tuple(COLORS), SHAPES, MOTIONS, tuple(BACKGROUNDS))
NULL_TOKEN = "<null>"


def grammar_vocab() -> list[str]:
    """Token list in id order; id 0 is the unconditional/null token."""
    return [NULL_TOKEN, *itertools.chain.from_iterable(ATTRIBUTE_SLOTS)]


def all_prompts() -> list[tuple[str, str, str, str]]:
    return list(itertools.product(*ATTRIBUTE_SLOTS))


@dataclass(frozen=True)
class ClipAttributes:
    color: str
    shape: str
    motion: str
    background: str
    center: tuple[float, float]  # (x, y) at frame 0, pixel units
    radius: float
    # linear motion: pixels per frame along x; circular motion: radians per frame
    speed: float = 1.0
    orbit: float = 3.0

    @property
    def tokens(self) -> tuple[str, str, str, str]:
        return (self.color, self.shape, self.motion, self.background)

    def recolored(self, color: str) -> "ClipAttributes":
        return replace(self, color=color)


@dataclass
class SyntheticSpec:
    canvas: int = 32
    length: int = 5
    fps: float = 4.0
    n_clips: int = 512
    seed: int = 0
    colors: tuple[str, ...] = tuple(COLORS)
    shapes: tuple[str, ...] = SHAPES
    motions: tuple[str, ...] = MOTIONS
    backgrounds: tuple[str, ...] = tuple(BACKGROUNDS)
    radius_range: tuple[float, float] = (5.0, 7.0)
    supersample: int = 4

    def __post_init__(self):
        for name, values, known in (
            ("colors", self.colors, COLORS),
            ("shapes", self.shapes, SHAPES),
            ("motions", self.motions, MOTIONS),
            ("backgrounds", self.backgrounds, BACKGROUNDS),
        ):
            if not values:
                raise ValueError(f"{name} must not be empty")
            unknown = set(values) - set(known)
            if unknown:
                raise ValueError(f"unknown {name}: {sorted(unknown)}")
        self.colors, self.shapes = tuple(self.colors), tuple(self.shapes)
        self.motions, self.backgrounds = tuple(self.motions), tuple(self.backgrounds)
        self.radius_range = tuple(self.radius_range)
        # the largest shape must fit while travelling its full path
        if 2 * (self.radius_range[1] + 2) + max(self.length - 1, 2 * 3.0) > self.canvas:
            raise ValueError(f"canvas {self.canvas} too small for radius {self.radius_range[1]} and {self.length} frames")


@dataclass
class SyntheticClip:
    clip: VideoClip
    attrs: ClipAttributes

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.attrs.tokens


def centers(attrs: ClipAttributes, length: int) -> list[tuple[float, float]]:
    x0, y0 = attrs.center
    if attrs.motion == "static":
        return [(x0, y0)] * length
    if attrs.motion == "linear":
        return [(x0 + attrs.speed * i, y0) for i in range(length)]
    if attrs.motion == "circular":
        # orbit around (x0 - orbit, y0) so frame 0 sits at the stated center
        cx = x0 - attrs.orbit
        return [
            (cx + attrs.orbit * math.cos(attrs.speed * i), y0 + attrs.orbit * math.sin(attrs.speed * i))
            for i in range(length)
        ]
    raise ValueError(f"unknown motion {attrs.motion!r}")


def shape_mask(
    shape: str, center: tuple[float, float], radius: float, canvas: int, ss: int = 4, soften: bool = True
) -> np.ndarray:
    """Coverage in [0, 1] of a shape on a ``canvas``-sized pixel grid."""
    offs = (np.arange(ss) + 0.5) / ss
    coords = (np.arange(canvas)[:, None] + offs[None, :]).reshape(-1)
    xs = coords[None, :] - center[0]
    ys = coords[:, None] - center[1]
    if shape == "circle":
        inside = xs**2 + ys**2 <= radius**2
    elif shape == "square":
        half = radius * 0.85
        inside = (np.abs(xs) <= half) & (np.abs(ys) <= half)
    elif shape == "triangle":
        # upward isoceles triangle inscribed in the radius box
        top, base = -radius, radius * 0.8
        frac = (ys - top) / (base - top)
        inside = (ys >= top) & (ys <= base) & (np.abs(xs) <= frac * radius)
    else:
        raise ValueError(f"unknown shape {shape!r}")
    cover = inside.reshape(canvas, ss, canvas, ss).mean(axis=(1, 3))
    return _soften(cover) if soften else cover


_BINOMIAL = np.array([1.0, 2.0, 1.0]) / 4.0


def _soften(mask: np.ndarray) -> np.ndarray:
    """Separable [1, 2, 1]/4 blur with zero padding (shapes never touch the border)."""
    out = np.apply_along_axis(lambda r: np.convolve(r, _BINOMIAL, mode="same"), 0, mask)
    return np.apply_along_axis(lambda r: np.convolve(r, _BINOMIAL, mode="same"), 1, out)


def render_frame(attrs: ClipAttributes, center: tuple[float, float], canvas: int, ss: int = 4) -> np.ndarray:
    mask = shape_mask(attrs.shape, center, attrs.radius, canvas, ss)[None]
    fg = np.asarray(COLORS[attrs.color], dtype=np.float64)[:, None, None]
    bg = np.asarray(BACKGROUNDS[attrs.background], dtype=np.float64)[:, None, None]
    return bg * (1.0 - mask) + fg * mask


def render_clip(attrs: ClipAttributes, spec: SyntheticSpec) -> VideoClip:
    frames = [render_frame(attrs, c, spec.canvas, spec.supersample) for c in centers(attrs, spec.length)]
    return VideoClip(torch.from_numpy(np.stack(frames)).to(torch.float32), fps=spec.fps)


def sample_attributes(spec: SyntheticSpec, rng: np.random.Generator) -> ClipAttributes:
    color = spec.colors[rng.integers(len(spec.colors))]
    shape = spec.shapes[rng.integers(len(spec.shapes))]
    motion = spec.motions[rng.integers(len(spec.motions))]
    background = spec.backgrounds[rng.integers(len(spec.backgrounds))]
    lo, hi = spec.radius_range
    radius = float(rng.integers(int(lo * 2), int(hi * 2) + 1)) / 2.0
    orbit = 3.0
    margin = radius + 2  # one pixel of blur spill plus one of background
    x_lo = margin + (2 * orbit if motion == "circular" else 0)
    x_hi = spec.canvas - margin - (spec.length - 1 if motion == "linear" else 0)
    y_lo = margin + (orbit if motion == "circular" else 0)
    y_hi = spec.canvas - margin - (orbit if motion == "circular" else 0)
    # half-pixel grid keeps translations exact in the supersampled renderer
    x = float(rng.integers(int(2 * x_lo), int(2 * x_hi) + 1)) / 2.0
    y = float(rng.integers(int(2 * y_lo), int(2 * y_hi) + 1)) / 2.0
    speed = 1.0 if motion == "linear" else (math.pi / 4 if motion == "circular" else 0.0)
    return ClipAttributes(color, shape, motion, background, (x, y), radius, speed=speed, orbit=orbit)


def generate_synthetic_corpus(spec: SyntheticSpec | None = None) -> list[SyntheticClip]:
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.n_clips):
        attrs = sample_attributes(spec, rng)
        out.append(SyntheticClip(render_clip(attrs, spec), attrs))
    return out


def corpus_frames(corpus: list[SyntheticClip]) -> torch.Tensor:
    return torch.cat([c.clip.frames for c in corpus])


def corpus_to_arrays(corpus: list[SyntheticClip]) -> dict[str, np.ndarray]:
    """Pack a corpus for ``np.savez``; attributes are kept as a JSON string."""
    attrs = [
        {**{k: getattr(c.attrs, k) for k in ("color", "shape", "motion", "background", "radius", "speed", "orbit")},
         "center": list(c.attrs.center)}
        for c in corpus
    ]
    return {
        "frames": np.stack([c.clip.frames.numpy() for c in corpus]).astype("<f4"),
        "fps": np.asarray([c.clip.fps for c in corpus], dtype="<f4"),
        "attrs": np.frombuffer(json.dumps(attrs).encode(), dtype=np.uint8),
    }


def corpus_from_arrays(data) -> list[SyntheticClip]:
    attrs = json.loads(bytes(data["attrs"]).decode())
    frames = data["frames"]
    fps = data["fps"]
    return [
        SyntheticClip(
            VideoClip(torch.from_numpy(np.array(frames[i])), fps=float(fps[i])),
            ClipAttributes(**{**a, "center": tuple(a["center"])}),
        )
        for i, a in enumerate(attrs)
    ]
