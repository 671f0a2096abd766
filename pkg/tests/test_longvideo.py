import pytest
import torch
from hypothesis import given, strategies as st

from oracles import check_schedule
from tridentvid.codec import VideoClip
from tridentvid.conditioning import make_reference
from tridentvid.longvideo import pad_video, plan_schedule, execute_schedule
from tridentvid.pipeline import EditRequest
from tridentvid.synthetic import SyntheticSpec, generate_synthetic_corpus


def test_n33_l4():
    plan = plan_schedule(33, 4)
    assert plan.keyframe_indices == tuple(range(0, 33, 4))
    assert [r.mode for r in plan.runs] == ["initial", "extension"] + ["interpolation"] * 8
    assert plan.runs[0].frame_indices == (0, 4, 8, 12, 16)
    assert plan.runs[0].reference_slots[0].position == 2
    assert plan.runs[1].frame_indices == (16, 20, 24, 28, 32)
    assert plan.runs[1].reference_slots[0].run_id == 0


def test_one_run_clip():
    plan = plan_schedule(5, 4)
    assert len(plan.runs) == 1 and plan.runs[0].frame_indices == (0, 1, 2, 3, 4)


def test_padding():
    plan = plan_schedule(10, 4)
    assert plan.padded_N == 13 and plan.N == 10
    clip = VideoClip(torch.arange(10.0).reshape(10, 1, 1, 1).expand(10, 3, 4, 4).clone())
    padded = pad_video(clip, 13)
    assert padded.length == 13 and torch.equal(padded.frames[12], clip.frames[9])


def test_invalid():
    with pytest.raises(ValueError):
        plan_schedule(1, 4)
    with pytest.raises(ValueError):
        plan_schedule(9, 0)


def test_brute_force_all_small():
    for N in range(2, 66):
        for L in range(1, 9):
            assert check_schedule(plan_schedule(N, L), N, L) == [], (N, L)


@given(st.integers(2, 400), st.integers(1, 16))
def test_brute_force_property(N, L):
    assert check_schedule(plan_schedule(N, L), N, L) == []


def test_checker_catches_faults():
    import dataclasses

    plan = plan_schedule(17, 4)
    runs = list(plan.runs)
    runs[3] = dataclasses.replace(runs[3], frame_indices=runs[3].frame_indices[:-1] + (99,))
    assert check_schedule(dataclasses.replace(plan, runs=tuple(runs)), 17, 4)
    assert check_schedule(dataclasses.replace(plan, runs=plan.runs[:-1]), 17, 4)


def test_json_dry_run_roundtrip():
    import json

    plan = plan_schedule(33, 4)
    d = json.loads(plan.to_json())
    assert len(d["runs"]) == 10 and d["padded_N"] == 33


def _long_video(n):
    spec = SyntheticSpec(n_clips=1, length=n, radius_range=(5.0, 5.0), seed=3)
    return generate_synthetic_corpus(spec)[0]


def test_execute_reproducible_across_workers(tiny):
    src = _long_video(9)
    plan = plan_schedule(9, 2)
    assert [r.mode for r in plan.runs[:2]] == ["initial", "extension"]
    ref = make_reference(src.clip.frames[2], (1,), "edit", 3)
    base = EditRequest(src.clip, src.tokens, reference=ref, steps=3, seed=7)
    outs = [
        execute_schedule(plan, src.clip, base, tiny.edit, tiny.interp, tiny.codec, tiny.schedule, workers=w)
        for w in (1, 4, 1)
    ]
    assert outs[0].video.length == 9 and outs[0].calls == len(plan.runs)
    for o in outs[1:]:
        assert torch.equal(o.video.frames, outs[0].video.frames)
    # keyframes come from keyframe runs, interiors from interpolation runs
    first = outs[0]
    k0 = first.run_outputs[0]
    assert torch.equal(first.video.frames[2], k0[1])
    interp = first.run_outputs[plan.interpolation_runs[0].run_id]
    assert torch.equal(first.video.frames[1], interp[1])
    # extension run references the frame produced by the initial run
    ext = plan.runs[1]
    assert torch.equal(first.references[ext.run_id][0], k0[-1])


def test_execute_requires_interp_model(tiny):
    src = _long_video(9)
    ref = make_reference(src.clip.frames[4], (1,), "edit", 3)
    with pytest.raises(ValueError, match="interpolation"):
        execute_schedule(plan_schedule(9, 4), src.clip, EditRequest(src.clip, reference=ref), tiny.edit, None,
                         tiny.codec, tiny.schedule)
    with pytest.raises(ValueError, match="reference"):
        execute_schedule(plan_schedule(9, 4), src.clip, EditRequest(src.clip), tiny.edit, tiny.interp,
                         tiny.codec, tiny.schedule)
