"""``tridentvid`` command line.

Training stages write into ``--out`` and read their prerequisites from it;
editing commands read checkpoints from ``--models`` and write a clip
directory plus ``provenance.json`` into ``--out``.

Exit codes: 0 success, 1 usage, 2 validation (bad inputs, missing
prerequisites, refusing to overwrite), 3 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

from .benchmark import ValidationError, corpus_stats, evaluate_clip, load_and_validate, reports_to_table
from .checkpoint import CheckpointError
from .clipio import read_clip, read_frame, write_clip
from .codec import ShapeError
from .conditioning import STRUCTURE_KINDS, make_reference
from .desk import ArtifactExists, DeskConfig, MissingPrerequisite, Workspace, run_stage
from .longvideo import ScheduleExecutionError, execute_schedule, plan_schedule
from .optim import TrainingDivergence
from .pipeline import (
    DEFAULT_ALPHA,
    DEFAULT_GUIDANCE,
    DEFAULT_STEPS,
    EditRequest,
    PipelineError,
    SWEEP_AXES,
    edit_clip,
    load_request,
    request_record,
    result_record,
    sweep_scales,
)
from .synthetic import SyntheticSpec

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
VALIDATION_STAGES = ("prompt", "structure", "reference")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _unit(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{v} not in [0, 1]")
    return v


def _values(text: str) -> list[float]:
    return [_unit(v) for v in text.split(",") if v.strip()]


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="global seed (default 0, or the request's seed)")
    p.add_argument("--config", default=None, help="JSON file of flag defaults; explicit flags still win")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.add_argument("--quiet", action="store_true")


def _training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)


def _editing(p: argparse.ArgumentParser) -> None:
    p.add_argument("--models", default="desk", help="directory holding trained checkpoints")
    p.add_argument("--prompt", default=None, help="space-separated target prompt")
    p.add_argument("--steps", type=int, default=None, help=f"DDIM steps (default {DEFAULT_STEPS})")
    p.add_argument("--guidance", type=float, default=None, help=f"guidance scale (default {DEFAULT_GUIDANCE})")
    p.add_argument("--alpha", type=float, default=None, help=f"anchor prior alpha (default {DEFAULT_ALPHA})")
    p.add_argument("--s-struct", type=_unit, default=None, help="structure scale (default: checkpoint mode)")
    p.add_argument("--s-app", type=_unit, default=None, help="appearance scale (default 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tridentvid", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="render the synthetic corpus")
    _common(p)
    p.add_argument("--n-clips", type=int, default=512)
    p.add_argument("--frames", type=int, default=5, help="frames per clip")
    p.add_argument("--export", type=int, default=0, help="also write the first K clips as clip directories")

    for name, help_ in [
        ("train-codec", "train the latent codec"),
        ("pretrain-t2i", "pretrain the per-frame text-to-image denoiser"),
        ("pretrain-structure", "pretrain a structure branch"),
        ("train", "train temporal layers and appearance branch (edit model)"),
        ("train-interp", "train temporal layers and appearance branch (interpolation model)"),
        ("train-embedder", "fit the toy joint embedder used by eval"),
    ]:
        p = sub.add_parser(name, help=help_)
        _common(p)
        _training(p)
        if name in ("pretrain-structure", "train", "train-interp"):
            p.add_argument("--kind", choices=STRUCTURE_KINDS, default=None)

    p = sub.add_parser("edit", help="edit one clip from a request file")
    _common(p)
    _editing(p)
    p.add_argument("request", help="request JSON")

    p = sub.add_parser("edit-long", help="edit a long clip via keyframe runs")
    _common(p)
    _editing(p)
    p.add_argument("video", help="source clip directory")
    p.add_argument("--reference", default=None, help="edited PNG of the initial run's center keyframe")
    p.add_argument("--stride-L", type=int, default=4, dest="stride_L")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dry-run", action="store_true", help="print the run plan and stop")

    p = sub.add_parser("schedule", help="print the keyframe run plan for N frames")
    _common(p)
    p.add_argument("--frames", type=int, required=True, help="source length N")
    p.add_argument("--stride-L", type=int, required=True, dest="stride_L")
    p.add_argument("--dry-run", action="store_true", help="accepted for symmetry; schedule never edits")

    p = sub.add_parser("sweep-scales", help="edit once per control-scale value")
    _common(p)
    _editing(p)
    p.add_argument("request")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", type=_values, default=[0.0, 0.25, 0.5, 0.75, 1.0])

    p = sub.add_parser("eval", help="automatic metrics over edited clips")
    _common(p)
    p.add_argument("edited", help="clip directory, or root holding <video_id>/<edit_type>/ with --records")
    p.add_argument("--records", default=None)
    p.add_argument("--models", default="desk")
    p.add_argument("--prompt", default=None)

    p = sub.add_parser("validate", help="check a records file and print its statistics")
    _common(p)
    p.add_argument("records")
    return parser


# config handling -----------------------------------------------------------------------

def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Parse with config-file values as defaults, so explicit flags override them."""
    args = parser.parse_args(argv)
    if not args.config:
        return args
    path = Path(args.config)
    try:
        values = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(values, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    values = {k.replace("-", "_"): v for k, v in values.items()}
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(values) - known - {"command", "config"})
    if unknown:
        raise ValueError(f"config {path}: unknown keys for '{args.command}': {unknown}")
    sub.set_defaults(**values)
    return parser.parse_args(argv)


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg, flush=True)


def _outdir(args, default: str) -> Path:
    return Path(args.out or default)


def _fresh_dir(path: Path, force: bool, what: str) -> Path:
    if path.exists() and any(path.iterdir()) and not force:
        raise FileExistsError(f"{what}: {path} is not empty (pass --force to overwrite)")
    path.mkdir(parents=True, exist_ok=True)
    return path


# commands ----------------------------------------------------------------------------------

def _desk_config(args) -> DeskConfig:
    cfg = DeskConfig()
    cfg.data = SyntheticSpec(n_clips=getattr(args, "n_clips", 512), length=getattr(args, "frames", 5), seed=0)
    cfg.reseed(args.seed or 0)
    target = {
        "train-codec": cfg.codec, "pretrain-t2i": cfg.t2i, "pretrain-structure": cfg.structure,
        "train": cfg.temporal, "train-interp": cfg.interpolation,
    }.get(args.command)
    for key in ("iterations", "batch", "lr"):
        v = getattr(args, key, None)
        if v is None:
            continue
        if args.command == "train-embedder" and key == "iterations":
            cfg.embedder_iterations = v
        elif target is not None:
            setattr(target, key, v)
    return cfg


def cmd_stage(args) -> int:
    out = _outdir(args, "desk")
    if args.command == "gen-data" and not 1 <= args.n_clips:
        raise ValueError("--n-clips must be >= 1")
    cfg = _desk_config(args)
    path = run_stage(args.command, out, cfg, kind=getattr(args, "kind", None), force=args.force, verbose=not args.quiet)
    if args.command == "gen-data" and args.export:
        ws = Workspace(out, cfg)
        for i, c in enumerate(ws.corpus[: args.export]):
            d = write_clip(c.clip, out / "clips" / f"clip_{i:04d}")
            (d / "prompt.txt").write_text(" ".join(c.tokens) + "\n")
    _say(args, f"wrote {path}")
    return EXIT_OK


def _request_overrides(args) -> dict:
    o = {"steps": args.steps, "guidance": args.guidance, "alpha": args.alpha, "s_struct": args.s_struct,
         "s_app": args.s_app, "seed": args.seed}
    if args.prompt is not None:
        o["prompt"] = args.prompt.split()
    return o


def _echo(args, req: EditRequest, default_s_struct: float) -> None:
    s_struct = default_s_struct if req.s_struct is None else req.s_struct
    _say(args, f"steps={req.steps} guidance={req.guidance:g} alpha={req.alpha:g} "
               f"s_struct={s_struct:g} s_app={req.s_app:g} seed={req.seed}")


def cmd_edit(args) -> int:
    req = load_request(args.request, _request_overrides(args))
    ws = Workspace(args.models, stage="edit")
    model = ws.interp if req.reference is not None and req.reference.count == 2 else ws.edit
    codec = ws.codec
    out = _fresh_dir(_outdir(args, "edit_out"), args.force, "edit")
    _echo(args, req, model.config.s_struct)
    res = edit_clip(req, model, codec, ws.schedule)
    write_clip(res.edited, out / "clip")
    record = {"command": "edit", "models": str(Path(args.models).resolve()), **result_record(res)}
    (out / "provenance.json").write_text(json.dumps(record, indent=2))
    _say(args, f"wrote {out / 'clip'}")
    return EXIT_OK


def cmd_edit_long(args) -> int:
    video = read_clip(args.video)
    plan = plan_schedule(video.length, args.stride_L)
    if args.dry_run:
        print(plan.to_json())
        return EXIT_OK
    if args.workers < 1:
        raise ValueError("--workers must be >= 1")
    if args.reference is None:
        raise ValueError("--reference is required unless --dry-run")
    ref_frame = read_frame(args.reference)
    first = plan.keyframe_runs[0]
    defaults = EditRequest(video)
    req = EditRequest(
        source=video,
        prompt=(args.prompt or "").split(),
        reference=make_reference(ref_frame[None], (first.reference_slots[0].position,), "edit", len(first.frame_indices)),
        s_struct=args.s_struct,
        s_app=defaults.s_app if args.s_app is None else args.s_app,
        guidance=defaults.guidance if args.guidance is None else args.guidance,
        steps=defaults.steps if args.steps is None else args.steps,
        alpha=defaults.alpha if args.alpha is None else args.alpha,
        seed=args.seed or 0,
    )
    ws = Workspace(args.models, stage="edit-long")
    edit_model = ws.edit
    interp_model = ws.interp if plan.interpolation_runs else None
    out = _fresh_dir(_outdir(args, "edit_long_out"), args.force, "edit-long")
    _echo(args, req, edit_model.config.s_struct)
    res = execute_schedule(plan, video, req, edit_model, interp_model, ws.codec, ws.schedule, workers=args.workers)
    write_clip(res.video, out / "clip")
    record = {
        "command": "edit-long",
        "models": str(Path(args.models).resolve()),
        "stride_L": args.stride_L,
        "workers": args.workers,
        "schedule": plan.to_dict(),
        "run_seeds": {r.run_id: req.seed + r.run_id for r in plan.runs},
        "calls": res.calls,
        "base_request": request_record(req),
    }
    (out / "provenance.json").write_text(json.dumps(record, indent=2))
    _say(args, f"wrote {out / 'clip'} ({res.calls} runs)")
    return EXIT_OK


def cmd_schedule(args) -> int:
    print(plan_schedule(args.frames, args.stride_L).to_json())
    return EXIT_OK


def cmd_sweep(args) -> int:
    req = load_request(args.request, _request_overrides(args))
    ws = Workspace(args.models, stage="sweep-scales")
    model = ws.interp if req.reference is not None and req.reference.count == 2 else ws.edit
    out = _fresh_dir(_outdir(args, "sweep_out"), args.force, "sweep-scales")
    _echo(args, req, model.config.s_struct)
    rows = sweep_scales(req, args.axis, args.values, model, ws.codec, ws.schedule)
    metric = "edge_overlap" if args.axis == "structure" else "keyframe_l1"
    report = []
    for v, score, res in rows:
        d = write_clip(res.edited, out / f"value_{v:g}")
        report.append({"axis": args.axis, "value": v, metric: score, "clip": d.name})
        _say(args, f"{args.axis}={v:g} {metric}={score:.4f}")
    (out / "report.json").write_text(json.dumps(report, indent=2))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(report[0]))
        w.writeheader()
        w.writerows(report)
    return EXIT_OK


def cmd_eval(args) -> int:
    ws = Workspace(args.models, stage="eval")
    embedder = ws.embedder
    root = Path(args.edited)
    rows = []
    if args.records:
        for rec in load_and_validate(args.records):
            for e in rec.edits:
                d = root / rec.video_id / e.edit_type
                if not d.exists():
                    rows.append({"video_id": rec.video_id, "edit_type": e.edit_type, "note": "missing"})
                    continue
                rep = evaluate_clip(read_clip(d), embedder, _safe_prompt(e.target_prompt, embedder))
                rows.append({"video_id": rec.video_id, "edit_type": e.edit_type, **rep.to_dict()})
    else:
        clip = read_clip(root)
        prompt = args.prompt.split() if args.prompt else None
        rep = evaluate_clip(clip, embedder, prompt)
        rows.append({"video_id": root.name, "edit_type": "", **rep.to_dict()})
    out = _outdir(args, str(root / "metrics") if not args.records else "eval_out")
    out.mkdir(parents=True, exist_ok=True)
    for ext in ("json", "csv"):
        if (out / f"metrics.{ext}").exists() and not args.force:
            raise FileExistsError(f"eval: {out / f'metrics.{ext}'} exists (pass --force to overwrite)")
    (out / "metrics.json").write_text(json.dumps(rows, indent=2))
    table = [dict(r, frames=len(r.get("pairs", [])) + 1 if "pairs" in r else "") for r in rows]
    (out / "metrics.csv").write_text(reports_to_table(table))
    for r in rows:
        _say(args, f"{r['video_id']} {r['edit_type']} tem_con={r.get('tem_con')} tex_ali={r.get('tex_ali')}")
    return EXIT_OK


def _safe_prompt(text: str, embedder) -> list[str] | None:
    """Only grammar prompts can be scored by the toy embedder; others get no tex_ali."""
    words = text.split()
    return words if all(w in embedder.vocab for w in words) else None


def cmd_validate(args) -> int:
    records = load_and_validate(args.records)
    _say(args, f"OK: {len(records)} records")
    for attr, hist in corpus_stats(records).items():
        _say(args, f"  {attr}: " + ", ".join(f"{k} {v['count']} ({v['percent']:.1f}%)" for k, v in hist.items()))
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_stage, "train-codec": cmd_stage, "pretrain-t2i": cmd_stage, "pretrain-structure": cmd_stage,
    "train": cmd_stage, "train-interp": cmd_stage, "train-embedder": cmd_stage,
    "edit": cmd_edit, "edit-long": cmd_edit_long, "schedule": cmd_schedule, "sweep-scales": cmd_sweep,
    "eval": cmd_eval, "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0) if exc.code in (0, None) else EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PipelineError as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if exc.stage in VALIDATION_STAGES else EXIT_RUNTIME
    except (MissingPrerequisite, ArtifactExists) as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_VALIDATION
    except (ScheduleExecutionError, TrainingDivergence) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FileNotFoundError, FileExistsError, CheckpointError,
            ShapeError, ValueError, KeyError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001  surfaced with the command name
        print(f"{args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
