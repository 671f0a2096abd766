"""Desk-scale studies on the trained models: appearance propagation, structure
sweeps and prompt ranking with the toy embedder.

Each study edits corpus clips whose attributes are known, so "what the edit
should look like" can be rendered exactly.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .benchmark import text_alignment
from .codec import VideoClip
from .conditioning import center_index, make_reference
from .pipeline import EditRequest, edge_overlap, edit_clip
from .synthetic import (
    ATTRIBUTE_SLOTS,
    BACKGROUNDS,
    COLORS,
    SyntheticClip,
    SyntheticSpec,
    centers,
    render_clip,
    shape_mask,
)


def _spec_for(clip: SyntheticClip) -> SyntheticSpec:
    return SyntheticSpec(canvas=clip.clip.frames.shape[-1], length=clip.clip.length, n_clips=1, fps=clip.clip.fps)


def foreground_masks(clip: SyntheticClip, threshold: float = 0.9) -> torch.Tensor:
    """(l, H, W) bool masks of pixels well inside the shape."""
    a = clip.attrs
    size = clip.clip.frames.shape[-1]
    masks = [shape_mask(a.shape, c, a.radius, size) >= threshold for c in centers(a, clip.clip.length)]
    return torch.from_numpy(np.stack(masks))


def masked_mean_color(frames: torch.Tensor, masks: torch.Tensor) -> torch.Tensor:
    """(l, 3) mean color of each frame over its mask."""
    m = masks.to(frames.dtype).unsqueeze(1)
    return (frames * m).sum((2, 3)) / m.sum((2, 3)).clamp(min=1.0)


def recolor_target(clip: SyntheticClip, color: str) -> VideoClip:
    return render_clip(clip.attrs.recolored(color), _spec_for(clip))


@dataclass
class PropagationTrial:
    seed: int
    clip_index: int
    target_color: str
    center_err_ref: float
    center_err_noref: float
    shift_projection: float  # mean over non-keyframes of (shift toward reference color)
    passed: bool


@dataclass
class PropagationReport:
    trials: list[PropagationTrial] = field(default_factory=list)

    @property
    def pass_rate(self) -> float:
        return sum(t.passed for t in self.trials) / len(self.trials)


def appearance_propagation(models, seeds=range(10), steps: int = 30, prompt: tuple[str, ...] = ()) -> PropagationReport:
    """Recolored-keyframe edit against the same edit without a reference.

    Per seed: pick a corpus clip and a new color, render the recolored center
    frame as the reference, and run both edits from identical noise.  A
    trial passes when the center frame is closer to the reference with it
    than without it, and the foreground of the other frames shifts toward the
    reference color (positive mean projection of the color shift onto
    ``reference color - no-reference color``).
    """
    report = PropagationReport()
    corpus = models.corpus
    for seed in seeds:
        rng = random.Random(seed)
        k = rng.randrange(len(corpus))
        src = corpus[k]
        color = rng.choice([c for c in COLORS if c != src.attrs.color])
        l = src.clip.length
        c = center_index(l)
        target = recolor_target(src, color)
        ref = make_reference(target.frames[c], None, "edit", l)
        base = dict(source=src.clip, prompt=prompt, steps=steps, seed=seed)
        with_ref = edit_clip(EditRequest(reference=ref, **base), models.edit, models.codec, models.schedule).edited
        no_ref = edit_clip(EditRequest(**base), models.edit, models.codec, models.schedule).edited
        err_ref = float((with_ref.frames[c] - target.frames[c]).abs().mean())
        err_noref = float((no_ref.frames[c] - target.frames[c]).abs().mean())
        masks = foreground_masks(src)
        col_ref = masked_mean_color(with_ref.frames, masks)
        col_noref = masked_mean_color(no_ref.frames, masks)
        want = torch.tensor(COLORS[color], dtype=col_ref.dtype)
        others = [i for i in range(l) if i != c]
        proj = [float(((col_ref[i] - col_noref[i]) * (want - col_noref[i])).sum()) for i in others]
        shift = float(np.mean(proj))
        report.trials.append(
            PropagationTrial(seed, k, color, err_ref, err_noref, shift, err_ref < err_noref and shift > 0)
        )
    return report


def disjoint_prompt(tokens: tuple[str, ...], rng: random.Random) -> tuple[str, ...]:
    """A prompt that differs from ``tokens`` in every attribute slot."""
    return tuple(rng.choice([v for v in slot if v != t]) for slot, t in zip(ATTRIBUTE_SLOTS, tokens))


@dataclass
class RankingPair:
    clip_index: int
    target: tuple[str, ...]
    other: tuple[str, ...]
    score_target: float
    score_other: float

    @property
    def passed(self) -> bool:
        return self.score_target > self.score_other


def text_alignment_ranking(models, n_pairs: int = 8, steps: int = 30, seed: int = 0) -> list[RankingPair]:
    """Edit clips toward a recolored target and rank target vs disjoint prompt by tex_ali.

    The target keeps the source shape and motion and changes color and
    background, so the source structure stays valid; the edit uses the target
    prompt and the rendered target center frame as reference.
    """
    rng = random.Random(seed)
    pairs = []
    corpus = models.corpus
    for n in range(n_pairs):
        k = rng.randrange(len(corpus))
        src = corpus[k]
        color = rng.choice([c for c in COLORS if c != src.attrs.color])
        bg = rng.choice([b for b in BACKGROUNDS if b != src.attrs.background])
        attrs = replace(src.attrs, color=color, background=bg)
        target_clip = render_clip(attrs, _spec_for(src))
        l = src.clip.length
        ref = make_reference(target_clip.frames[center_index(l)], None, "edit", l)
        req = EditRequest(src.clip, attrs.tokens, reference=ref, steps=steps, seed=seed + n)
        edited = edit_clip(req, models.edit, models.codec, models.schedule).edited
        other = disjoint_prompt(attrs.tokens, rng)
        pairs.append(RankingPair(
            k, attrs.tokens, other,
            text_alignment(edited, attrs.tokens, models.embedder),
            text_alignment(edited, other, models.embedder),
        ))
    return pairs


@dataclass
class SweepPoint:
    value: float
    edge_overlap: float


def structure_sweep(models, values=(0.0, 1.0), n_clips: int = 4, steps: int = 30, seed: int = 0) -> list[SweepPoint]:
    """Mean edge overlap with the source over ``n_clips`` text-only recolor edits per scale value."""
    rng = random.Random(seed)
    corpus = models.corpus
    picks = [rng.randrange(len(corpus)) for _ in range(n_clips)]
    colors = [rng.choice([c for c in COLORS if c != corpus[k].attrs.color]) for k in picks]
    out = []
    for v in values:
        scores = []
        for n, (k, color) in enumerate(zip(picks, colors)):
            src = corpus[k]
            prompt = src.attrs.recolored(color).tokens
            req = EditRequest(src.clip, prompt, s_struct=v, steps=steps, seed=seed + n)
            res = edit_clip(req, models.edit, models.codec, models.schedule)
            scores.append(edge_overlap(res.edited, src.clip))
        out.append(SweepPoint(float(v), float(np.mean(scores))))
    return out
