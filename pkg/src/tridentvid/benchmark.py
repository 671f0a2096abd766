"""Benchmark records (schema, validation, statistics) and automatic edit metrics.

Records file (JSON)::

    {"records": [
      {"video_id": "...", "path": "...", "category": "Human|Animal|Object|Landscape",
       "description": "...", "scene_complexity": 1-3, "camera_motion": 1-3,
       "object_motion": 1-3,
       "edits": [{"edit_type": "StyleChange|ObjectChange|BackgroundChange|CompoundChange",
                  "target_prompt": "...", "fantasy_level": 1-3}, ...4 entries]}
    ]}
"""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoint import load_archive, save_archive
from .codec import Codec, VideoClip
from .conditioning import TextEncoder, load_vocab, tokenize

CATEGORIES = ("Human", "Animal", "Object", "Landscape")
EDIT_TYPES = ("StyleChange", "ObjectChange", "BackgroundChange", "CompoundChange")
LEVEL_FIELDS = ("scene_complexity", "camera_motion", "object_motion")
LEVEL_LABELS = {
    "scene_complexity": {1: "Simple", 2: "Moderate", 3: "Complex"},
    "camera_motion": {1: "Stationary", 2: "Slow", 3: "Quick"},
    "object_motion": {1: "Stationary", 2: "Slow", 3: "Quick"},
    "fantasy_level": {1: "Low", 2: "Moderate", 3: "High"},
}
RECORD_KEYS = {"video_id", "path", "category", "description", *LEVEL_FIELDS, "edits"}
EDIT_KEYS = {"edit_type", "target_prompt", "fantasy_level"}


@dataclass(frozen=True)
class EditSpec:
    edit_type: str
    target_prompt: str
    fantasy_level: int


@dataclass(frozen=True)
class BenchmarkRecord:
    video_id: str
    category: str
    description: str
    scene_complexity: int
    camera_motion: int
    object_motion: int
    edits: tuple[EditSpec, ...]
    path: str = ""


@dataclass(frozen=True)
class Violation:
    record: str
    field: str
    message: str

    def __str__(self):
        return f"{self.record}: {self.field}: {self.message}"


class ValidationError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        lines = "\n  ".join(str(v) for v in violations)
        super().__init__(f"{len(violations)} schema violation(s):\n  {lines}")


def _level(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and 1 <= value <= 3


def _text(value: Any) -> bool:
    return isinstance(value, str) and value.strip() != ""


def validate_records(raw: Any) -> tuple[list[BenchmarkRecord], list[Violation]]:
    """Check every record and collect every violation (never stops at the first)."""
    errors: list[Violation] = []
    records: list[BenchmarkRecord] = []
    if isinstance(raw, dict):
        raw = raw.get("records")
    if not isinstance(raw, list):
        return [], [Violation("<file>", "records", "expected a list of records")]
    seen_ids: set[str] = set()
    for n, rec in enumerate(raw):
        rid = rec.get("video_id") if isinstance(rec, dict) else None
        rid = rid if _text(rid) else f"#{n}"
        before = len(errors)
        if not isinstance(rec, dict):
            errors.append(Violation(rid, "<record>", "expected an object"))
            continue

        def bad(field_name, msg):
            errors.append(Violation(rid, field_name, msg))

        for k in sorted(RECORD_KEYS - {"path"} - set(rec)):
            bad(k, "missing")
        for k in sorted(set(rec) - RECORD_KEYS):
            bad(k, "unknown key")
        if "video_id" in rec and not _text(rec["video_id"]):
            bad("video_id", "must be a non-empty string")
        elif rid in seen_ids:
            bad("video_id", "duplicate id")
        seen_ids.add(rid)
        if "category" in rec and rec["category"] not in CATEGORIES:
            bad("category", f"{rec['category']!r} not in {CATEGORIES}")
        if "description" in rec and not _text(rec["description"]):
            bad("description", "must be non-empty text")
        if "path" in rec and not isinstance(rec["path"], str):
            bad("path", "must be a string")
        for k in LEVEL_FIELDS:
            if k in rec and not _level(rec[k]):
                bad(k, f"{rec[k]!r} outside integer range 1..3")
        edits = rec.get("edits")
        parsed_edits = []
        if "edits" in rec:
            if not isinstance(edits, list):
                bad("edits", "expected a list")
                edits = []
            types = Counter()
            for e_i, e in enumerate(edits):
                where = f"edits[{e_i}]"
                if not isinstance(e, dict):
                    bad(where, "expected an object")
                    continue
                for k in sorted(EDIT_KEYS - set(e)):
                    bad(f"{where}.{k}", "missing")
                for k in sorted(set(e) - EDIT_KEYS):
                    bad(f"{where}.{k}", "unknown key")
                et = e.get("edit_type")
                if "edit_type" in e:
                    if et not in EDIT_TYPES:
                        bad(f"{where}.edit_type", f"{et!r} not in {EDIT_TYPES}")
                    else:
                        types[et] += 1
                if "target_prompt" in e and not _text(e["target_prompt"]):
                    bad(f"{where}.target_prompt", "must be non-empty text")
                if "fantasy_level" in e and not _level(e["fantasy_level"]):
                    bad(f"{where}.fantasy_level", f"{e['fantasy_level']!r} outside integer range 1..3")
                if EDIT_KEYS <= set(e):
                    parsed_edits.append(EditSpec(et, e["target_prompt"], e["fantasy_level"]))
            for et in EDIT_TYPES:
                if types[et] == 0:
                    bad("edits", f"missing {et}")
                elif types[et] > 1:
                    bad("edits", f"{et} appears {types[et]} times")
            if len(edits) != len(EDIT_TYPES) and all(types[et] == 1 for et in EDIT_TYPES):
                bad("edits", f"expected exactly {len(EDIT_TYPES)} edits, got {len(edits)}")
        if len(errors) == before:
            records.append(BenchmarkRecord(
                video_id=rec["video_id"], category=rec["category"], description=rec["description"],
                scene_complexity=rec["scene_complexity"], camera_motion=rec["camera_motion"],
                object_motion=rec["object_motion"], edits=tuple(parsed_edits), path=rec.get("path", ""),
            ))
    return records, errors


def load_and_validate(path: str | Path) -> list[BenchmarkRecord]:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError([Violation("<file>", "<json>", str(exc))]) from exc
    records, errors = validate_records(raw)
    if errors:
        raise ValidationError(errors)
    return records


def records_to_json(records: Sequence[BenchmarkRecord]) -> str:
    out = []
    for r in records:
        d = asdict(r)
        d["edits"] = [asdict(e) for e in r.edits]
        out.append(d)
    return json.dumps({"records": out}, indent=2)


def example_records_path() -> Path:
    from importlib import resources

    return Path(str(resources.files("tridentvid").joinpath("data/benchmark_example.json")))


# statistics ------------------------------------------------------------------------

def corpus_stats(records: Sequence[BenchmarkRecord]) -> dict[str, dict[str, dict[str, float]]]:
    """Per-attribute histograms ``{attr: {value: {"count": n, "percent": p}}}``.

    Video-level attributes count videos; ``edit_type`` and ``fantasy_level``
    count edits.
    """
    if not records:
        raise ValueError("no records")
    columns: dict[str, list[Any]] = {
        "category": [r.category for r in records],
        **{k: [getattr(r, k) for r in records] for k in LEVEL_FIELDS},
        "edit_type": [e.edit_type for r in records for e in r.edits],
        "fantasy_level": [e.fantasy_level for r in records for e in r.edits],
    }
    out = {}
    for attr, values in columns.items():
        counts = Counter(values)
        total = len(values)
        labels = LEVEL_LABELS.get(attr, {})
        out[attr] = {
            str(labels.get(v, v)): {"count": c, "percent": 100.0 * c / total}
            for v, c in sorted(counts.items(), key=lambda kv: str(kv[0]))
        }
    return out


# metrics --------------------------------------------------------------------------------

class Embedder(Protocol):
    supports_text: bool

    def embed_frames(self, frames: torch.Tensor) -> torch.Tensor:
        """(l, 3, H, W) -> (l, d) unit-norm."""

    def embed_text(self, prompt: Sequence[str]) -> torch.Tensor:
        """-> (d,) unit-norm."""


def unit_cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine of unit vectors as ``1 - |a - b|^2 / 2``: exactly 1 for equal inputs."""
    a = a.to(torch.float64)
    b = b.to(torch.float64)
    return (1.0 - ((a - b) ** 2).sum(-1) / 2.0).clamp(-1.0, 1.0)


@dataclass
class MetricsReport:
    tem_con: float
    tex_ali: float | None
    pairs: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def temporal_consistency(clip: VideoClip, embedder: Embedder) -> tuple[float, list[dict]]:
    if clip.length < 2:
        raise ValueError("temporal consistency needs at least 2 frames")
    e = embedder.embed_frames(clip.frames)
    sims = unit_cosine(e[:-1], e[1:])
    pairs = [{"frames": [i, i + 1], "similarity": float(s)} for i, s in enumerate(sims)]
    return float(sims.mean()), pairs


def text_alignment(clip: VideoClip, prompt: Sequence[str], embedder: Embedder) -> float:
    if not getattr(embedder, "supports_text", False):
        raise TypeError("embedder has no text side")
    e = embedder.embed_frames(clip.frames)
    p = embedder.embed_text(prompt)
    return float(unit_cosine(e, p[None].expand_as(e)).mean())


def evaluate_clip(clip: VideoClip, embedder: Embedder, prompt: Sequence[str] | None = None) -> MetricsReport:
    tem, pairs = temporal_consistency(clip, embedder)
    tex = None
    if prompt is not None and getattr(embedder, "supports_text", False):
        tex = text_alignment(clip, prompt, embedder)
    return MetricsReport(tem, tex, pairs)


def reports_to_table(rows: Sequence[dict]) -> str:
    """Flat CSV, one row per evaluated clip."""
    buf = io.StringIO()
    cols = ["video_id", "edit_type", "tem_con", "tex_ali", "frames", "note"]
    w = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


class JointEmbedder(nn.Module):
    """Toy joint image/text embedder.

    Image side: codec latents mean-pooled to a 2x2 grid, then a small MLP.
    Text side: mean of the prompt's token rows from the T2I text table, then
    an MLP.  Both project to the unit sphere.
    """

    supports_text = True

    def __init__(self, codec: Codec, text: TextEncoder, dim: int = 32, vocab: Sequence[str] | None = None):
        super().__init__()
        self.codec = codec
        self.text = text
        self.vocab = list(vocab or load_vocab())
        c = codec.config.latent_channels
        self.image_proj = nn.Sequential(nn.Linear(4 * c + c, 64), nn.SiLU(), nn.Linear(64, dim))
        self.text_proj = nn.Sequential(nn.Linear(text.table.embedding_dim, 64), nn.SiLU(), nn.Linear(64, dim))

    def _image_features(self, frames: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            z = self.codec.encode(frames)
        pooled = F.adaptive_avg_pool2d(z, 2).flatten(1)
        return torch.cat([pooled, z.mean(dim=(2, 3))], dim=1)

    def _text_features(self, ids: torch.Tensor) -> torch.Tensor:
        """ids (B, n) with 0 padding -> (B, d_text)."""
        with torch.no_grad():
            rows = self.text.table(ids)
        mask = (ids != 0).unsqueeze(-1).to(rows.dtype)
        return (rows * mask).sum(1) / mask.sum(1).clamp(min=1.0)

    def image_embed(self, frames):
        return F.normalize(self.image_proj(self._image_features(frames)), dim=-1)

    def text_embed(self, ids):
        return F.normalize(self.text_proj(self._text_features(ids)), dim=-1)

    def embed_frames(self, frames: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return self.image_embed(frames)

    def embed_text(self, prompt: Sequence[str]) -> torch.Tensor:
        ids = self.text.pad(tokenize(list(prompt), self.vocab))[None]
        with torch.no_grad():
            return self.text_embed(ids)[0]

    def save(self, path: str | Path) -> Path:
        arrays = {f"image_proj.{k}": v for k, v in self.image_proj.state_dict().items()}
        arrays.update({f"text_proj.{k}": v for k, v in self.text_proj.state_dict().items()})
        dim = self.image_proj[-1].out_features
        return save_archive(path, arrays, {"kind": "embedder", "dim": dim})

    @classmethod
    def load(cls, path: str | Path, codec: Codec, text: TextEncoder) -> "JointEmbedder":
        arrays, cfg = load_archive(path)
        if cfg.get("kind") != "embedder":
            raise ValueError(f"{path} is not an embedder checkpoint")
        m = cls(codec, text, cfg["dim"])
        m.image_proj.load_state_dict({k.removeprefix("image_proj."): v for k, v in arrays.items() if k.startswith("image_proj.")})
        m.text_proj.load_state_dict({k.removeprefix("text_proj."): v for k, v in arrays.items() if k.startswith("text_proj.")})
        return m.eval()


def train_joint_embedder(
    corpus, codec: Codec, text: TextEncoder, iterations: int = 400, batch: int = 64,
    lr: float = 3e-3, temperature: float = 0.1, seed: int = 0,
) -> JointEmbedder:
    """Contrastive fit of both projections on (frame, prompt) pairs.

    Frames sharing a prompt are all positives for it (multi-positive targets).
    """
    torch.manual_seed(seed)
    model = JointEmbedder(codec, text)
    vocab = model.vocab
    frames = torch.cat([c.clip.frames for c in corpus])
    l = corpus[0].clip.length
    ids = torch.stack([text.pad(tokenize(list(c.tokens), vocab)) for c in corpus]).repeat_interleave(l, dim=0)
    feats = torch.cat([model._image_features(frames[i : i + 256]) for i in range(0, len(frames), 256)])
    tfeats = model._text_features(ids)
    params = list(model.image_proj.parameters()) + list(model.text_proj.parameters())
    opt = torch.optim.Adam(params, lr=lr)
    gen = torch.Generator().manual_seed(seed)
    for _ in range(iterations):
        idx = torch.randint(0, len(frames), (min(batch, len(frames)),), generator=gen)
        img = F.normalize(model.image_proj(feats[idx]), dim=-1)
        txt = F.normalize(model.text_proj(tfeats[idx]), dim=-1)
        logits = img @ txt.T / temperature
        same = (ids[idx][:, None, :] == ids[idx][None, :, :]).all(-1).to(logits.dtype)
        target = same / same.sum(1, keepdim=True)
        loss = -(target * logits.log_softmax(1)).sum(1).mean() - (target.T * logits.T.log_softmax(1)).sum(1).mean()
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    return model.eval()


class FixtureEmbedder:
    """Embedder over explicit vectors, for tests and for plugging in external models."""

    def __init__(self, frame_vectors: torch.Tensor, text_vectors: dict[tuple[str, ...], torch.Tensor] | None = None):
        self.frame_vectors = F.normalize(frame_vectors.to(torch.float64), dim=-1)
        self.text_vectors = {k: F.normalize(v.to(torch.float64), dim=-1) for k, v in (text_vectors or {}).items()}
        self.supports_text = text_vectors is not None

    def embed_frames(self, frames):
        return self.frame_vectors[: frames.shape[0]]

    def embed_text(self, prompt):
        return self.text_vectors[tuple(prompt)]
