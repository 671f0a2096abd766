"""Stage-by-stage training of the desk-scale model chain inside one directory.

Artifacts (``.npz`` archives unless noted)::

    corpus.npz  codec.npz  t2i.npz  structure_<kind>.npz
    trident_edit.npz  trident_interp.npz  embedder.npz  logs/<stage>.jsonl

``run_stage`` trains one stage from its prerequisites on disk (the CLI wraps
it); ``build_desk_models`` runs the whole chain and caches it, keyed by the
configuration digest stored in ``desk_config.json``.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .benchmark import JointEmbedder, train_joint_embedder
from .checkpoint import config_to_json, load_archive, save_archive
from .codec import Codec, CodecConfig, train_codec
from .diffusion import NoiseSchedule, desk_schedule
from .network import SpatialUNet, StructureBranch, TridentNet, default_trident_config, init_from_t2i
from .optim import write_log
from .synthetic import SyntheticClip, SyntheticSpec, corpus_frames, corpus_from_arrays, corpus_to_arrays, generate_synthetic_corpus
from .training import (
    TrainConfig,
    encode_corpus,
    pretrain_structure_branch,
    pretrain_t2i,
    prompt_ids,
    structure_maps,
    train_temporal_appearance,
)

STAGE_ORDER = (
    "gen-data", "train-codec", "pretrain-t2i", "pretrain-structure", "train", "train-interp", "train-embedder",
)


class MissingPrerequisite(FileNotFoundError):
    def __init__(self, stage: str, path: Path, producer: str):
        super().__init__(f"{stage}: missing {path.name} in {path.parent} (run '{producer}' first)")
        self.stage = stage
        self.path = path


class ArtifactExists(FileExistsError):
    def __init__(self, stage: str, path: Path):
        super().__init__(f"{stage}: {path} exists (pass --force to overwrite)")
        self.stage = stage


@dataclass
class DeskConfig:
    data: SyntheticSpec = field(default_factory=lambda: SyntheticSpec(n_clips=64, seed=0))
    codec: CodecConfig = field(default_factory=lambda: CodecConfig(iterations=1500, batch=16, seed=1))
    t2i: TrainConfig = field(default_factory=lambda: TrainConfig(stage="t2i", iterations=3000, batch=32, lr=1e-3, seed=2))
    structure: TrainConfig = field(
        default_factory=lambda: TrainConfig(stage="structure", iterations=600, batch=32, lr=1e-3, seed=3)
    )
    # heavy prompt dropout so the reference, not the prompt, has to carry appearance
    temporal: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            stage="temporal_appearance", iterations=3000, batch=8, lr=1e-3, seed=4, p_uncond=0.5
        )
    )
    interpolation: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            stage="interpolation", iterations=2000, batch=8, lr=1e-3, seed=5, p_uncond=0.5
        )
    )
    codec_clips: int = 512  # the codec sees a larger rendered corpus than the diffusion stages
    embedder_iterations: int = 800
    embedder_seed: int = 6
    edit_kind: str = "edge"
    interp_kind: str = "depth_proxy"
    T: int = 50

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(config_to_json(asdict(self)), sort_keys=True).encode()).hexdigest()[:16]

    def reseed(self, seed: int) -> "DeskConfig":
        """Offset every stage seed by ``seed`` (seed 0 keeps the defaults)."""
        self.data.seed += seed
        self.codec.seed += seed
        for cfg in (self.t2i, self.structure, self.temporal, self.interpolation):
            cfg.seed += seed
        self.embedder_seed += seed
        return self


def tiny_desk_config(**overrides) -> DeskConfig:
    """A few steps per stage: enough to exercise every code path, not to learn."""
    cfg = DeskConfig(
        data=SyntheticSpec(n_clips=8, seed=0),
        codec=CodecConfig(iterations=5, batch=8, seed=1),
        t2i=TrainConfig(stage="t2i", iterations=5, batch=8, seed=2),
        structure=TrainConfig(stage="structure", iterations=3, batch=8, seed=3),
        temporal=TrainConfig(stage="temporal_appearance", iterations=3, batch=2, seed=4),
        interpolation=TrainConfig(stage="interpolation", iterations=3, batch=2, seed=5),
        codec_clips=0,
        embedder_iterations=5,
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@dataclass
class DeskModels:
    corpus: list[SyntheticClip]
    codec: Codec
    t2i: SpatialUNet
    structures: dict[str, StructureBranch]
    edit: TridentNet
    interp: TridentNet
    embedder: JointEmbedder
    schedule: NoiseSchedule
    config: DeskConfig
    workdir: Path


def _log(msg: str, verbose: bool) -> None:
    if verbose:
        print(f"[desk {time.strftime('%H:%M:%S')}] {msg}", flush=True)


def load_corpus(path: str | Path) -> list[SyntheticClip]:
    with np.load(path, allow_pickle=False) as data:
        return corpus_from_arrays(data)


def save_corpus(corpus: list[SyntheticClip], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **corpus_to_arrays(corpus))
    return path


def save_structure(branch: StructureBranch, path: str | Path, kind: str) -> Path:
    return save_archive(
        path,
        {f"structure.{k}": v for k, v in branch.state_dict().items()},
        {"kind": "structure", "structure_kind": kind, "in_middle": branch.in_middle},
    )


def load_structure(path: str | Path, t2i: SpatialUNet, hint_size: int = 32) -> StructureBranch:
    arrays, cfg = load_archive(path)
    if cfg.get("kind") != "structure":
        raise ValueError(f"{path} is not a structure checkpoint")
    branch = StructureBranch(t2i, hint_size, cfg["in_middle"])
    branch.load_state_dict({k.removeprefix("structure."): v for k, v in arrays.items()})
    for p in branch.parameters():
        p.requires_grad_(False)
    branch.kind = cfg["structure_kind"]
    return branch.eval()


def artifact_path(workdir: str | Path, stage: str, kind: str | None = None) -> Path:
    workdir = Path(workdir)
    names = {
        "gen-data": "corpus.npz",
        "train-codec": "codec.npz",
        "pretrain-t2i": "t2i.npz",
        "pretrain-structure": f"structure_{kind}.npz",
        "train": "trident_edit.npz",
        "train-interp": "trident_interp.npz",
        "train-embedder": "embedder.npz",
    }
    if stage not in names:
        raise ValueError(f"unknown stage {stage!r}")
    return workdir / names[stage]


class Workspace:
    """Lazy loader over a stage directory; missing inputs raise ``MissingPrerequisite``."""

    def __init__(self, workdir: str | Path, config: DeskConfig | None = None, stage: str = "load"):
        self.workdir = Path(workdir)
        self.config = config or DeskConfig()
        self.stage = stage
        self._cache: dict = {}

    def _need(self, producer: str, kind: str | None = None) -> Path:
        path = artifact_path(self.workdir, producer, kind)
        if not path.exists():
            raise MissingPrerequisite(self.stage, path, producer + (f" --kind {kind}" if kind else ""))
        return path

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def schedule(self) -> NoiseSchedule:
        return desk_schedule(self.config.T)

    @property
    def corpus(self) -> list[SyntheticClip]:
        return self._get("corpus", lambda: load_corpus(self._need("gen-data")))

    @property
    def codec(self) -> Codec:
        return self._get("codec", lambda: Codec.load(self._need("train-codec")))

    @property
    def t2i(self) -> SpatialUNet:
        return self._get("t2i", lambda: SpatialUNet.load(self._need("pretrain-t2i")))

    def structure(self, kind: str) -> StructureBranch:
        return self._get(("structure", kind), lambda: load_structure(self._need("pretrain-structure", kind), self.t2i))

    @property
    def edit(self) -> TridentNet:
        return self._get("edit", lambda: TridentNet.load(self._need("train")))

    @property
    def interp(self) -> TridentNet:
        return self._get("interp", lambda: TridentNet.load(self._need("train-interp")))

    @property
    def embedder(self) -> JointEmbedder:
        return self._get("embedder", lambda: JointEmbedder.load(self._need("train-embedder"), self.codec, self.t2i.text))

    @property
    def latents(self):
        return self._get("latents", lambda: encode_corpus(self.corpus, self.codec))

    @property
    def ids(self):
        return self._get("ids", lambda: prompt_ids(self.corpus))

    def maps(self, kind: str):
        return self._get(("maps", kind), lambda: structure_maps(self.corpus, kind))


def run_stage(
    stage: str, workdir: str | Path, config: DeskConfig | None = None, kind: str | None = None,
    force: bool = False, verbose: bool = False,
) -> Path:
    """Train one stage from the artifacts already in ``workdir``; returns the artifact path."""
    config = config or DeskConfig()
    if stage == "pretrain-structure":
        kind = kind or config.edit_kind
    out = artifact_path(workdir, stage, kind)
    if out.exists() and not force:
        raise ArtifactExists(stage, out)
    ws = Workspace(workdir, config, stage)
    out.parent.mkdir(parents=True, exist_ok=True)
    logs = out.parent / "logs"
    _log(f"{stage} -> {out.name}", verbose)
    if stage == "gen-data":
        save_corpus(generate_synthetic_corpus(config.data), out)
    elif stage == "train-codec":
        corpus = ws.corpus
        if config.codec_clips > len(corpus):
            # same generator stream, so the first clips are the diffusion corpus
            corpus = generate_synthetic_corpus(replace(config.data, n_clips=config.codec_clips))
        codec, log = train_codec(corpus_frames(corpus), config.codec)
        codec.save(out)
        write_log(log, logs / "codec.jsonl")
    elif stage == "pretrain-t2i":
        t2i, log = pretrain_t2i(ws.latents, ws.ids, config.t2i, schedule=ws.schedule)
        t2i.save(out)
        write_log(log, logs / "t2i.jsonl")
    elif stage == "pretrain-structure":
        branch, log = pretrain_structure_branch(
            ws.latents, ws.maps(kind), ws.ids, ws.t2i, kind, config.structure, ws.schedule
        )
        save_structure(branch, out, kind)
        write_log(log, logs / f"structure_{kind}.jsonl")
    elif stage in ("train", "train-interp"):
        if stage == "train":
            mode, kind, tcfg, name = "edit", kind or config.edit_kind, config.temporal, "edit"
        else:
            mode, kind, tcfg, name = "interpolate", kind or config.interp_kind, config.interpolation, "interp"
        cfg = default_trident_config(mode, structure_kind=kind, frames_per_run=ws.corpus[0].clip.length, seed=tcfg.seed)
        net = init_from_t2i(ws.t2i, cfg, ws.structure(kind), stage=tcfg.stage)
        net, log = train_temporal_appearance(ws.latents, ws.maps(kind), ws.ids, net, tcfg, ws.schedule)
        net.save(out)
        write_log(log, logs / f"trident_{name}.jsonl")
    elif stage == "train-embedder":
        emb = train_joint_embedder(
            ws.corpus, ws.codec, ws.t2i.text, iterations=config.embedder_iterations, seed=config.embedder_seed
        )
        emb.save(out)
    return out


def build_desk_models(workdir: str | Path, config: DeskConfig | None = None, verbose: bool = False) -> DeskModels:
    """Run (or reuse) every stage; a changed configuration retrains from scratch."""
    config = config or DeskConfig()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    stamp = workdir / "desk_config.json"
    digest = config.digest()
    if not stamp.exists() or json.loads(stamp.read_text()).get("digest") != digest:
        for p in workdir.glob("*.npz"):
            p.unlink()
        stamp.write_text(json.dumps({"digest": digest, "config": config_to_json(asdict(config))}, indent=2))
    plan = [("gen-data", None), ("train-codec", None), ("pretrain-t2i", None)]
    plan += [("pretrain-structure", k) for k in sorted({config.edit_kind, config.interp_kind})]
    plan += [("train", None), ("train-interp", None), ("train-embedder", None)]
    for stage, kind in plan:
        if not artifact_path(workdir, stage, kind).exists():
            run_stage(stage, workdir, config, kind, verbose=verbose)
    ws = Workspace(workdir, config)
    structures = {k: ws.structure(k) for k in sorted({config.edit_kind, config.interp_kind})}
    return DeskModels(ws.corpus, ws.codec, ws.t2i, structures, ws.edit, ws.interp, ws.embedder, ws.schedule, config, workdir)
