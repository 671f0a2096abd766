import json

import pytest
import torch
from hypothesis import given, strategies as st

from oracles import anchor_identities, dyadic
from tridentvid.clipio import quantize, read_clip, write_clip, write_frame
from tridentvid.codec import VideoClip
from tridentvid.conditioning import make_reference
from tridentvid.pipeline import (
    DEFAULT_ALPHA,
    DEFAULT_GUIDANCE,
    DEFAULT_STEPS,
    EditRequest,
    PipelineError,
    anchor_prior_noise,
    edge_overlap,
    edit_clip,
    initial_noise,
    keyframe_distance,
    load_request,
    request_hash,
    sweep_scales,
)


def test_defaults():
    assert (DEFAULT_STEPS, DEFAULT_GUIDANCE, DEFAULT_ALPHA) == (30, 9.0, 0.03)
    req = EditRequest(VideoClip(torch.zeros(2, 3, 8, 8)))
    assert (req.steps, req.guidance, req.alpha, req.s_app, req.s_struct) == (30, 9.0, 0.03, 1.0, None)


@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4, 8, 16]), st.sampled_from([0.03125, 0.5, 1 / 1024, 3 / 128]))
def test_anchor_identities_exact(seed, l, alpha):
    gen = torch.Generator().manual_seed(seed)
    eps = dyadic((l, 4, 8, 8), gen)
    key = dyadic((4, 8, 8), gen)
    assert anchor_identities(anchor_prior_noise, eps, key, alpha) == []


def test_anchor_at_default_alpha():
    gen = torch.Generator().manual_seed(0)
    eps = torch.randn(5, 4, 8, 8, generator=gen, dtype=torch.float64)
    key = torch.randn(4, 8, 8, generator=gen, dtype=torch.float64)
    out = anchor_prior_noise(eps, key, 0.03)
    assert torch.equal(anchor_prior_noise(eps, key, 0.0), eps)
    assert torch.allclose(out[1:] - out[:-1], eps[1:] - eps[:-1], rtol=0, atol=1e-15)
    assert torch.allclose(out.mean(0) - eps.mean(0), 0.03 * key, rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        anchor_prior_noise(eps, key[:2], 0.03)


def test_initial_noise_seeded():
    assert torch.equal(initial_noise((2, 3), 4), initial_noise((2, 3), 4))
    assert not torch.equal(initial_noise((2, 3), 4), initial_noise((2, 3), 5))


def test_request_validation():
    clip = VideoClip(torch.zeros(2, 3, 8, 8))
    with pytest.raises(ValueError):
        EditRequest(clip, alpha=-1)
    with pytest.raises(ValueError):
        EditRequest(clip, s_struct=2)
    assert EditRequest(clip, "red circle").prompt == ("red", "circle")
    assert request_hash(EditRequest(clip, seed=1)) != request_hash(EditRequest(clip, seed=2))


def _req(m, **kw):
    clip = m.corpus[0].clip
    kw.setdefault("steps", 4)
    kw.setdefault("prompt", m.corpus[0].tokens)
    return EditRequest(clip, **kw)


def test_edit_runs_and_records_provenance(tiny):
    ref = make_reference(tiny.corpus[1].clip.frames[2], None, "edit", 5)
    res = edit_clip(_req(tiny, reference=ref, seed=3), tiny.edit, tiny.codec, tiny.schedule)
    assert res.edited.frames.shape == (5, 3, 32, 32)
    assert res.edited.frames.abs().max() <= 1
    p = res.provenance
    assert p["seed"] == 3 and p["s_struct"] == 1.0 and p["structure_kind"] == "edge"
    assert p["request"]["reference"]["indices"] == [2]


def test_edit_bitwise_reproducible(tiny):
    ref = make_reference(tiny.corpus[1].clip.frames[2], None, "edit", 5)
    a = edit_clip(_req(tiny, reference=ref, seed=3), tiny.edit, tiny.codec, tiny.schedule)
    b = edit_clip(_req(tiny, reference=ref, seed=3), tiny.edit, tiny.codec, tiny.schedule)
    c = edit_clip(_req(tiny, reference=ref, seed=4), tiny.edit, tiny.codec, tiny.schedule)
    assert torch.equal(a.edited.frames, b.edited.frames)
    assert not torch.equal(a.edited_latents.latents, c.edited_latents.latents)


def test_alpha_changes_output(tiny):
    ref = make_reference(tiny.corpus[1].clip.frames[2], None, "edit", 5)
    a = edit_clip(_req(tiny, reference=ref, alpha=0.0), tiny.edit, tiny.codec, tiny.schedule)
    b = edit_clip(_req(tiny, reference=ref, alpha=0.03), tiny.edit, tiny.codec, tiny.schedule)
    assert not torch.equal(a.edited_latents.latents, b.edited_latents.latents)


def test_pipeline_errors_name_stage(tiny):
    with pytest.raises(PipelineError) as info:
        edit_clip(_req(tiny, prompt=("purple",)), tiny.edit, tiny.codec, tiny.schedule)
    assert info.value.stage == "prompt"
    with pytest.raises(PipelineError) as info:
        edit_clip(_req(tiny, structure_kind="normals"), tiny.edit, tiny.codec, tiny.schedule)
    assert info.value.stage == "structure"
    bad = make_reference(tiny.corpus[0].clip.frames[0], (4,), "edit", 5)
    short = EditRequest(VideoClip(tiny.corpus[0].clip.frames[:3]), steps=2, reference=bad)
    with pytest.raises(PipelineError) as info:
        edit_clip(short, tiny.edit, tiny.codec, tiny.schedule)
    assert info.value.stage == "reference"


def test_appearance_gate_ignores_reference(tiny):
    r1 = make_reference(tiny.corpus[1].clip.frames[2], None, "edit", 5)
    r2 = make_reference(tiny.corpus[2].clip.frames[2], None, "edit", 5)
    a = edit_clip(_req(tiny, reference=r1, s_app=0.0, alpha=0.0), tiny.edit, tiny.codec, tiny.schedule)
    b = edit_clip(_req(tiny, reference=r2, s_app=0.0, alpha=0.0), tiny.edit, tiny.codec, tiny.schedule)
    assert torch.equal(a.edited.frames, b.edited.frames)


def test_sweep_rows(tiny):
    ref = make_reference(tiny.corpus[1].clip.frames[2], None, "edit", 5)
    rows = sweep_scales(_req(tiny, reference=ref, steps=2), "structure", [0, 0.25, 0.5, 0.75, 1], tiny.edit,
                        tiny.codec, tiny.schedule)
    assert [r[0] for r in rows] == [0, 0.25, 0.5, 0.75, 1]
    assert all(0 <= r[1] <= 1 for r in rows)
    rows = sweep_scales(_req(tiny, reference=ref, steps=2), "appearance", [0, 1], tiny.edit, tiny.codec, tiny.schedule)
    assert rows[0][1] == keyframe_distance(rows[0][2].edited, ref)
    with pytest.raises(ValueError):
        sweep_scales(_req(tiny), "structure", [], tiny.edit, tiny.codec, tiny.schedule)
    with pytest.raises(ValueError):
        sweep_scales(_req(tiny), "appearance", [1], tiny.edit, tiny.codec, tiny.schedule)


def test_edge_overlap_bounds():
    gen = torch.Generator().manual_seed(0)
    clip = VideoClip(torch.rand(2, 3, 16, 16, generator=gen) * 2 - 1)
    assert edge_overlap(clip, clip) == pytest.approx(1.0)
    flat = VideoClip(torch.zeros(2, 3, 16, 16))
    assert edge_overlap(flat, clip) == 0.0


def test_request_file(tmp_path, tiny):
    clip = quantize(tiny.corpus[0].clip)
    write_clip(clip, tmp_path / "src")
    write_frame(clip.frames[2], tmp_path / "ref.png")
    (tmp_path / "req.json").write_text(json.dumps({
        "source": "src", "prompt": "red circle static bg_gray", "reference": {"frames": ["ref.png"]}, "seed": 5,
    }))
    req = load_request(tmp_path / "req.json", {"steps": 3, "alpha": None})
    assert req.steps == 3 and req.alpha == 0.03 and req.seed == 5
    assert req.reference.indices == (2,)
    assert torch.equal(req.source.frames, read_clip(tmp_path / "src").frames)
    assert torch.equal(req.reference.frames[0], clip.frames[2])
    (tmp_path / "bad.json").write_text(json.dumps({"source": "src", "colour": 1}))
    with pytest.raises(ValueError, match="unknown"):
        load_request(tmp_path / "bad.json")
