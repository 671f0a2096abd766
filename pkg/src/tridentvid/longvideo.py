"""Keyframe-hierarchical editing of videos longer than one run.

One keyframe every ``L`` frames.  The initial run edits the first ``L + 1``
keyframes; extension runs start from the last keyframe edited by the previous
run and use it as their appearance reference.  Interpolation runs then take
two adjacent edited keyframes as endpoints and fill the ``L - 1`` frames
between them.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import torch

from .codec import Codec, VideoClip
from .conditioning import AppearanceReference, center_index
from .diffusion import NoiseSchedule
from .network import TridentNet
from .pipeline import EditRequest, PipelineError, edit_clip


class ScheduleExecutionError(RuntimeError):
    def __init__(self, run_id: int, cause: BaseException | str):
        super().__init__(f"run {run_id}: {cause}")
        self.run_id = run_id


@dataclass(frozen=True)
class ReferenceSlot:
    position: int  # index within the run
    source: str  # "external", "run", or "keyframe"
    frame_index: int  # original-video index of the referenced frame
    run_id: int | None = None  # producing run when source == "run"


@dataclass(frozen=True)
class RunPlan:
    run_id: int
    mode: str  # "initial", "extension", "interpolation"
    frame_indices: tuple[int, ...]
    reference_slots: tuple[ReferenceSlot, ...]

    @property
    def edits(self) -> tuple[int, ...]:
        """Frames whose output this run owns.

        An extension run's first frame belongs to the run before it, and
        interpolation endpoints belong to keyframe runs.
        """
        if self.mode == "interpolation":
            return self.frame_indices[1:-1]
        if self.mode == "extension":
            return self.frame_indices[1:]
        return self.frame_indices


@dataclass(frozen=True)
class KeyframeSchedule:
    N: int  # frames in the source video
    L: int
    padded_N: int  # after repeating the last frame so (padded_N - 1) % L == 0
    keyframe_indices: tuple[int, ...]
    runs: tuple[RunPlan, ...]

    @property
    def keyframe_runs(self) -> list[RunPlan]:
        return [r for r in self.runs if r.mode != "interpolation"]

    @property
    def interpolation_runs(self) -> list[RunPlan]:
        return [r for r in self.runs if r.mode == "interpolation"]

    def owner(self) -> dict[int, int]:
        """Original frame index -> run id that produces it."""
        out = {}
        for r in self.runs:
            for i in r.edits:
                out[i] = r.run_id
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def plan_schedule(N: int, L: int) -> KeyframeSchedule:
    if N < 2 or L < 1:
        raise ValueError(f"need N >= 2 and L >= 1, got N={N}, L={L}")
    rem = (N - 1) % L
    padded = N if rem == 0 else N + (L - rem)
    keys = tuple(range(0, padded, L))
    runs: list[RunPlan] = []

    if padded == L + 1:
        frames = tuple(range(padded))
        slot = ReferenceSlot(center_index(len(frames)), "external", frames[center_index(len(frames))])
        runs.append(RunPlan(0, "initial", frames, (slot,)))
        return KeyframeSchedule(N, L, padded, keys, tuple(runs))

    first = keys[: L + 1]
    c = center_index(len(first))
    runs.append(RunPlan(0, "initial", first, (ReferenceSlot(c, "external", first[c]),)))
    pos = len(first) - 1
    while pos < len(keys) - 1:
        chunk = keys[pos : pos + L + 1]
        prev = runs[-1]
        slot = ReferenceSlot(0, "run", chunk[0], prev.run_id)
        runs.append(RunPlan(len(runs), "extension", chunk, (slot,)))
        pos += len(chunk) - 1
    if L >= 2:
        for a, b in zip(keys, keys[1:]):
            frames = tuple(range(a, b + 1))
            slots = (ReferenceSlot(0, "keyframe", a), ReferenceSlot(len(frames) - 1, "keyframe", b))
            runs.append(RunPlan(len(runs), "interpolation", frames, slots))
    return KeyframeSchedule(N, L, padded, keys, tuple(runs))


def pad_video(video: VideoClip, padded_N: int) -> VideoClip:
    n = video.length
    if padded_N == n:
        return video
    extra = video.frames[-1:].expand(padded_N - n, *video.frames.shape[1:])
    return VideoClip(torch.cat([video.frames, extra]), fps=video.fps)


@dataclass
class LongVideoResult:
    video: VideoClip
    schedule: KeyframeSchedule
    run_outputs: dict[int, torch.Tensor]  # run id -> (len(frame_indices), 3, H, W)
    references: dict[int, torch.Tensor]  # run id -> reference frames used
    owner: dict[int, int] = field(default_factory=dict)
    calls: int = 0


def execute_schedule(
    schedule: KeyframeSchedule,
    video: VideoClip,
    base_request: EditRequest,
    edit_model: TridentNet,
    interp_model: TridentNet | None,
    codec: Codec,
    ed_schedule: NoiseSchedule,
    workers: int = 1,
) -> LongVideoResult:
    """Run every planned edit and assemble the output in original frame order.

    ``base_request.reference`` must hold the edited frame for the initial run's
    reference slot.  Run ``k`` is seeded with ``base_request.seed + k``.  The
    interpolation model uses its own default structure scale.
    """
    if video.length != schedule.N:
        raise ValueError(f"video has {video.length} frames, schedule expects {schedule.N}")
    if base_request.reference is None or base_request.reference.count != 1:
        raise ValueError("base request must carry exactly one edited reference frame for the initial run")
    if schedule.interpolation_runs and interp_model is None:
        raise ValueError("schedule has interpolation runs but no interpolation checkpoint was given")
    src = pad_video(video, schedule.padded_N)
    edited: dict[int, torch.Tensor] = {}  # original index -> edited frame
    outputs: dict[int, torch.Tensor] = {}
    refs_used: dict[int, torch.Tensor] = {}
    calls = 0

    def run(plan: RunPlan, model: TridentNet, ref_frames: torch.Tensor, s_struct) -> torch.Tensor:
        req = replace(
            base_request,
            source=VideoClip(src.frames[list(plan.frame_indices)], fps=src.fps),
            reference=AppearanceReference(ref_frames, tuple(s.position for s in plan.reference_slots)),
            seed=base_request.seed + plan.run_id,
            s_struct=s_struct,
        )
        try:
            return edit_clip(req, model, codec, ed_schedule).edited.frames
        except PipelineError as exc:
            raise ScheduleExecutionError(plan.run_id, exc) from exc

    for plan in schedule.keyframe_runs:
        slot = plan.reference_slots[0]
        if slot.source == "external":
            ref = base_request.reference.frames[:1]
        else:
            prev = schedule.runs[slot.run_id]
            ref = outputs[slot.run_id][prev.frame_indices.index(slot.frame_index)][None]
        out = run(plan, edit_model, ref, base_request.s_struct)
        calls += 1
        outputs[plan.run_id] = out
        refs_used[plan.run_id] = ref
        for k, i in enumerate(plan.frame_indices):
            # extension runs start on an already-edited keyframe; keep the earlier output
            edited.setdefault(i, out[k])

    interp = schedule.interpolation_runs

    def run_interp(plan: RunPlan):
        ref = torch.stack([edited[s.frame_index] for s in plan.reference_slots])
        return plan, ref, run(plan, interp_model, ref, None)

    if interp:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                done = list(pool.map(run_interp, interp))
        else:
            done = [run_interp(p) for p in interp]
        for plan, ref, out in done:
            calls += 1
            outputs[plan.run_id] = out
            refs_used[plan.run_id] = ref
            for k, i in enumerate(plan.frame_indices[1:-1], start=1):
                edited[i] = out[k]

    frames = torch.stack([edited[i] for i in range(schedule.N)])
    return LongVideoResult(VideoClip(frames, fps=video.fps), schedule, outputs, refs_used, schedule.owner(), calls)
