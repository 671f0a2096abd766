"""Single-run video editing with the trident denoiser.

Flow: structure extraction -> reference encoding -> seeded per-frame noise ->
anchor prior -> guided DDIM -> decode.  Noise is drawn frame-major from one
``torch.Generator`` seeded with the request seed, shape ``(l, C, h, w)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import torch

from .checkpoint import state_checksum
from .clipio import read_clip, read_frame
from .codec import Codec, LatentClip, VideoClip
from .conditioning import (
    AppearanceReference,
    edge_map,
    embed_prompt,
    extract_structure,
    load_vocab,
    make_reference,
    tokenize,
    unconditional_embedding,
)
from .diffusion import GuidanceConfig, NoiseSchedule, ddim_sample
from .network import TridentNet, trident_forward

DEFAULT_ALPHA = 0.03
DEFAULT_GUIDANCE = 9.0
DEFAULT_STEPS = 30


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException | str):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class EditRequest:
    source: VideoClip
    prompt: Sequence[str] = ()
    structure_kind: str | None = None  # None: the checkpoint's kind
    reference: AppearanceReference | None = None
    s_struct: float | None = None  # None: the checkpoint's default for its mode
    s_app: float = 1.0
    guidance: float = DEFAULT_GUIDANCE
    steps: int = DEFAULT_STEPS
    alpha: float = DEFAULT_ALPHA
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.prompt, str):
            self.prompt = self.prompt.split()
        self.prompt = tuple(self.prompt)
        if self.alpha < 0:
            raise ValueError(f"anchor alpha must be >= 0, got {self.alpha}")
        for name in ("s_struct", "s_app"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class EditResult:
    edited: VideoClip
    edited_latents: LatentClip
    provenance: dict = field(default_factory=dict)


def _tensor_digest(t: torch.Tensor) -> str:
    return hashlib.sha256(t.detach().to(torch.float32).contiguous().numpy().tobytes()).hexdigest()


def request_record(req: EditRequest) -> dict:
    """JSON-safe description of a request; tensors are represented by digests."""
    return {
        "source_sha256": _tensor_digest(req.source.frames),
        "frames": req.source.length,
        "fps": req.source.fps,
        "prompt": list(req.prompt),
        "structure_kind": req.structure_kind,
        "reference": None
        if req.reference is None
        else {"indices": list(req.reference.indices), "sha256": _tensor_digest(req.reference.frames)},
        "s_struct": req.s_struct,
        "s_app": req.s_app,
        "guidance": req.guidance,
        "steps": req.steps,
        "alpha": req.alpha,
        "seed": req.seed,
    }


def request_hash(req: EditRequest) -> str:
    return hashlib.sha256(json.dumps(request_record(req), sort_keys=True).encode()).hexdigest()


def anchor_prior_noise(eps_individual: torch.Tensor, latent_key: torch.Tensor, alpha: float) -> torch.Tensor:
    """Add the same ``alpha * latent_key`` to every frame's starting noise."""
    if eps_individual.shape[1:] != latent_key.shape:
        raise ValueError(f"noise frames {tuple(eps_individual.shape[1:])} vs key latent {tuple(latent_key.shape)}")
    if alpha == 0:
        return eps_individual
    return eps_individual + alpha * latent_key[None]


def initial_noise(shape: Sequence[int], seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(seed)
    return torch.randn(tuple(shape), generator=gen)


def edit_clip(
    request: EditRequest,
    trident: TridentNet,
    codec: Codec,
    schedule: NoiseSchedule,
    vocab: Sequence[str] | None = None,
) -> EditResult:
    src = request.source
    l = src.length
    vocab = vocab or load_vocab()
    text_enc = trident.spatial.text
    try:
        cond = embed_prompt(tokenize(list(request.prompt), vocab), text_enc).embedding
        uncond = unconditional_embedding(text_enc).embedding
    except (KeyError, ValueError) as exc:
        raise PipelineError("prompt", exc) from exc

    kind = request.structure_kind or trident.config.structure_kind
    try:
        structure = extract_structure(src, kind).maps
    except ValueError as exc:
        raise PipelineError("structure", exc) from exc

    ref = request.reference
    try:
        with torch.no_grad():
            latents_src_shape = codec.encode(src.frames[:1]).shape[1:]
            if ref is not None:
                for j in ref.indices:
                    if not 0 <= j < l:
                        raise ValueError(f"reference index {j} outside run of length {l}")
                ref_latents = codec.encode(ref.frames)
            else:
                ref_latents = None
    except ValueError as exc:
        raise PipelineError("reference", exc) from exc

    s_app = request.s_app if ref is not None else 0.0
    s_struct = request.s_struct
    eps = initial_noise((l, *latents_src_shape), request.seed)
    if ref is not None and request.alpha > 0:
        # two references (interpolation): anchor on their mean
        eps = anchor_prior_noise(eps, ref_latents.mean(dim=0), request.alpha)
    indices = tuple(ref.indices) if ref is not None else ()

    def model_fn(z, t, text):
        return trident_forward(trident, z, t, text, structure, ref_latents, indices, s_struct=s_struct, s_app=s_app)

    try:
        with torch.no_grad():
            z0 = ddim_sample(model_fn, eps, cond, schedule, request.steps, GuidanceConfig(request.guidance, uncond))
    except Exception as exc:
        raise PipelineError("ddim", exc) from exc
    if not torch.isfinite(z0).all():
        raise PipelineError("ddim", "non-finite latents")
    with torch.no_grad():
        frames = codec.decode(z0)
    provenance = {
        "request": request_record(request),
        "request_hash": request_hash(request),
        "seed": request.seed,
        "trident": state_checksum(trident.state_dict()),
        "codec": state_checksum(codec.state_dict()),
        "structure_kind": kind,
        "s_struct": trident.config.s_struct if s_struct is None else s_struct,
        "s_app": s_app,
    }
    return EditResult(VideoClip(frames, fps=src.fps), LatentClip(z0, fps=src.fps), provenance)


# request files ---------------------------------------------------------------------

REQUEST_KEYS = {
    "source", "prompt", "structure_kind", "reference", "s_struct", "s_app", "guidance", "steps", "alpha", "seed",
}


def load_request(path: str | Path, overrides: dict[str, Any] | None = None) -> EditRequest:
    """Read a JSON request file; paths inside it are relative to the file."""
    path = Path(path)
    raw = json.loads(path.read_text())
    unknown = set(raw) - REQUEST_KEYS
    if unknown:
        raise ValueError(f"unknown request keys: {sorted(unknown)}")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    if "source" not in raw:
        raise ValueError("request needs a 'source' clip directory")
    base = path.parent
    source = read_clip(base / raw.pop("source"))
    ref_raw = raw.pop("reference", None)
    reference = None
    if ref_raw:
        frames = torch.stack([read_frame(base / p) for p in ref_raw["frames"]])
        reference = make_reference(frames, ref_raw.get("indices"), ref_raw.get("mode", "edit"), source.length)
    return EditRequest(source=source, reference=reference, **raw)


def result_record(result: EditResult) -> dict:
    return {"frames": result.edited.length, "fps": result.edited.fps, **result.provenance}


# control-scale sweeps ----------------------------------------------------------------

SWEEP_AXES = ("structure", "appearance")


def edge_overlap(edited: VideoClip, source: VideoClip) -> float:
    """Weighted Jaccard overlap of the two clips' edge maps, averaged over frames."""
    if edited.frames.shape != source.frames.shape:
        raise ValueError(f"clip shapes differ: {tuple(edited.frames.shape)} vs {tuple(source.frames.shape)}")
    scores = []
    for a, b in zip(edited.frames, source.frames):
        ea, eb = edge_map(a), edge_map(b)
        scores.append(float(torch.minimum(ea, eb).sum() / torch.maximum(ea, eb).sum().clamp(min=1e-12)))
    return sum(scores) / len(scores)


def keyframe_distance(edited: VideoClip, reference: AppearanceReference) -> float:
    """Mean absolute pixel error between edited frames and the reference at its indices."""
    out = edited.frames[list(reference.indices)]
    return float((out - reference.frames).abs().mean())


def sweep_scales(
    request: EditRequest,
    axis: str,
    values: Sequence[float],
    trident: TridentNet,
    codec: Codec,
    schedule: NoiseSchedule,
) -> list[tuple[float, float, EditResult]]:
    """One edit per scale value with the fidelity measure for that axis.

    Structure axis: edge overlap against the source.  Appearance axis: pixel
    distance to the reference at its frame indices.
    """
    if axis not in SWEEP_AXES:
        raise ValueError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    if not values:
        raise ValueError("empty value list")
    if axis == "appearance" and request.reference is None:
        raise ValueError("appearance sweep needs a reference")
    rows = []
    for v in values:
        req = replace(request, s_struct=v) if axis == "structure" else replace(request, s_app=v)
        res = edit_clip(req, trident, codec, schedule)
        if axis == "structure":
            score = edge_overlap(res.edited, request.source)
        else:
            score = keyframe_distance(res.edited, request.reference)
        rows.append((float(v), score, res))
    return rows
