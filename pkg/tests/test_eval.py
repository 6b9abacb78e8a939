import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from onlinetrack.evaluation import ablation, metrics
from onlinetrack.evaluation.sequence_io import (SequenceError, boxes_from_results, dumps_results, load_sequence,
                                                parse_groundtruth, read_results, results_document,
                                                save_sequence, write_results)
from onlinetrack.evaluation.synth import PRESETS, SynthSpec, gen_synthetic, render_background_only
from onlinetrack.featmap import Rect
from onlinetrack.tracker import TrackerConfig


def auc_oracle(ious):
    # plain double loop over the 101 thresholds
    total = 0.0
    for k in range(101):
        t = k / 100
        total += sum(1 for v in ious if v > t) / len(ious)
    return total / 101


# ------------------------------------------------------------------- metrics

@pytest.mark.parametrize("value,expect", [(1.0, 100 / 101), (0.0, 0.0), (0.5, 50 / 101)])
def test_auc_examples(value, expect):
    assert metrics.success_auc([value] * 17) == pytest.approx(expect, abs=1e-12)


def test_auc_matches_oracle(rng):
    ious = rng.random(40)
    assert metrics.success_auc(ious) == pytest.approx(auc_oracle(ious), abs=1e-12)


def test_auc_errors():
    with pytest.raises(ValueError):
        metrics.success_auc([])
    with pytest.raises(ValueError):
        metrics.success_auc([1.2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=30))
def test_auc_monotone(pairs):
    lo = [min(a, b) for a, b in pairs]
    hi = [max(a, b) for a, b in pairs]
    assert metrics.success_auc(hi) >= metrics.success_auc(lo)


def test_precision_examples():
    c = [(10.0, 10.0), (50.0, 3.0)]
    assert metrics.precision_at(c, c) == 1.0
    assert metrics.precision_at([(21.0, 0.0)] * 3, [(0.0, 0.0)] * 3, 20) == 0.0
    assert metrics.precision_at([(20.0, 0.0)], [(0.0, 0.0)], 20) == 1.0
    pred = [(5.0, 0.0)] * 4 + [(0.0, 50.0)] * 4
    assert metrics.precision_at(pred, [(0.0, 0.0)] * 8) == 0.5


def test_precision_errors():
    with pytest.raises(ValueError):
        metrics.precision_at([(0, 0)], [(0, 0), (1, 1)])
    with pytest.raises(ValueError):
        metrics.precision_at([(0, 0)], [(0, 0)], 0.0)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 100), min_size=1, max_size=20), st.floats(0.1, 50), st.floats(0.0, 50))
def test_precision_monotone_in_radius(errs, r, dr):
    pred = [(e, 0.0) for e in errs]
    gt = [(0.0, 0.0)] * len(errs)
    assert metrics.precision_at(pred, gt, r + dr) >= metrics.precision_at(pred, gt, r)


def test_summarize():
    gt = [Rect(10, 10, 4, 4)] * 3
    s = metrics.summarize(gt, gt)
    assert s == {"auc": pytest.approx(100 / 101), "precision": 1.0, "mean_iou": 1.0}


# --------------------------------------------------------------------- synth

def test_synth_deterministic():
    a = gen_synthetic(SynthSpec("distractor", frames=8, seed=4))
    b = gen_synthetic(SynthSpec("distractor", frames=8, seed=4))
    assert a.groundtruth == b.groundtruth
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    c = gen_synthetic(SynthSpec("distractor", frames=8, seed=5))
    assert not np.array_equal(a.frames[3], c.frames[3])


def test_static_gt_constant():
    seq = gen_synthetic(SynthSpec("static", frames=10, seed=1))
    assert len(set(seq.groundtruth)) == 1
    assert seq.groundtruth[0] == Rect(128.0, 128.0, 32.0, 32.0)


@pytest.mark.parametrize("preset", PRESETS)
@pytest.mark.parametrize("seed", [0, 7])
def test_gt_inside_image(preset, seed):
    spec = SynthSpec(preset, frames=100, seed=seed)
    seq = gen_synthetic(spec)
    S = spec.image_size
    for r in seq.groundtruth:
        assert r.cx - r.w / 2 >= 0 and r.cy - r.h / 2 >= 0
        assert r.cx + r.w / 2 <= S and r.cy + r.h / 2 <= S
    assert all(f.shape == (S, S) and f.min() >= 0 and f.max() <= 1 for f in seq.frames)


def test_target_drawn_where_gt_says():
    # render-difference oracle: the target changes pixels inside the box only
    spec = SynthSpec("static", frames=3, seed=2)
    seq = gen_synthetic(spec)
    bg = render_background_only(spec)
    diff = np.abs(seq.frames[0] - bg[0]) > 1e-9
    ys, xs = np.nonzero(diff)
    r = seq.groundtruth[0]
    assert ys.min() >= r.cy - r.h / 2 and ys.max() < r.cy + r.h / 2
    assert xs.min() >= r.cx - r.w / 2 and xs.max() < r.cx + r.w / 2


def test_occlusion_frames_are_hidden():
    spec = SynthSpec("occlusion", frames=100, seed=0)
    seq = gen_synthetic(spec)
    bg = render_background_only(spec)
    assert len(seq.occluded) >= 5
    for i in seq.occluded:
        np.testing.assert_array_equal(seq.frames[i], bg[i])
    visible = [i for i in range(len(seq)) if i not in seq.occluded]
    assert not np.array_equal(seq.frames[visible[0]], bg[visible[0]])


def test_synth_spec_errors():
    with pytest.raises(ValueError, match="preset"):
        SynthSpec("nope")
    with pytest.raises(ValueError):
        SynthSpec(frames=1)
    with pytest.raises(ValueError):
        SynthSpec(image_size=32)


# ----------------------------------------------------------------------- I/O

def test_sequence_round_trip(tmp_path):
    seq = gen_synthetic(SynthSpec("deform", frames=4, seed=3))
    save_sequence(seq, tmp_path / "s")
    back = load_sequence(tmp_path / "s")
    assert len(back) == 4 and back.name == "s"
    for a, b in zip(seq.groundtruth, back.groundtruth):
        assert b.to_xywh() == pytest.approx(a.to_xywh(), rel=1e-15, abs=1e-12)
    # 8-bit storage
    assert np.max(np.abs(back.frames[2] - seq.frames[2])) <= 0.5 / 255 + 1e-9


def test_groundtruth_parsing():
    boxes = parse_groundtruth("10,20,30,40\n\n1 2 3 4\n")
    assert boxes[0] == Rect(25.0, 40.0, 30.0, 40.0)
    assert boxes[1].to_xywh() == (1.0, 2.0, 3.0, 4.0)
    for bad in ("1,2,3", "a,b,c,d", "0,0,-1,5"):
        with pytest.raises(SequenceError):
            parse_groundtruth(bad)


def test_load_errors(tmp_path):
    seq = gen_synthetic(SynthSpec("static", frames=3, seed=0))
    d = save_sequence(seq, tmp_path / "s")
    (d / "groundtruth.txt").unlink()
    with pytest.raises(SequenceError, match="groundtruth.txt"):
        load_sequence(d)
    d = save_sequence(seq, tmp_path / "t")
    (d / "frames" / "00000002.png").unlink()
    with pytest.raises(SequenceError):
        load_sequence(d)
    with pytest.raises(SequenceError):
        load_sequence(tmp_path / "missing")


def test_results_round_trip(tmp_path):
    boxes = [Rect(10.5, 20.25, 8.0, 6.0), Rect(11.0, 21.0, 8.0, 6.0)]
    flags = [{"target_absent": False}, {"target_absent": True}]
    doc = results_document("x", boxes, [0.9, 0.1], flags, {"auc": 0.5, "precision": 1.0, "mean_iou": 0.4}, 3)
    assert list(doc["frames"][0]) == ["frame", "box", "score", "flags"]
    assert list(doc["summary"]) == ["auc", "precision", "mean_iou", "fps"] and doc["summary"]["fps"] is None
    p = write_results(tmp_path / "r.json", doc)
    back = read_results(p)
    assert boxes_from_results(back) == boxes
    assert dumps_results(back) == p.read_text()
    (tmp_path / "bad.json").write_text("[]")
    with pytest.raises(SequenceError):
        read_results(tmp_path / "bad.json")


# ------------------------------------------------------------------ ablation

def test_group_row_counts():
    assert len(ablation.group_settings("G1")) == 7
    assert len(ablation.group_settings("G2")) == 2
    assert len(ablation.group_settings("G3")) == 3
    assert len(ablation.group_settings("G4")) == 1
    lams = [s.overrides["lambda_fusion"] for s in ablation.group_settings("G1")]
    assert lams == [0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0]
    assert [s.overrides["template_interval"] for s in ablation.group_settings("G3")] == [1, 5, 10]
    assert ablation.no_update_setting().overrides["template_update"] is False
    with pytest.raises(ValueError):
        ablation.group_settings("G9")


def test_ablation_report_deterministic():
    suite = ablation.make_suite("static", 1, 0, frames=4)
    cfg = TrackerConfig(augment_count=4, memory_capacity=20)
    sets = ablation.group_settings("G2")
    a = ablation.format_report(ablation.run_ablation("G2", cfg, suite, sets))
    b = ablation.format_report(ablation.run_ablation("G2", cfg, suite, sets))
    assert a == b
    rep = ablation.parse_report(a)
    assert [r["setting"] for r in rep["rows"]] == ["attention=off", "attention=on"]
    assert all(0 <= r["mean_iou"] <= 1 for r in rep["rows"])
    assert json.loads(a[a.index("{"):])["sequences"] == ["static-0000"]


def test_ablation_empty_suite():
    with pytest.raises(ValueError):
        ablation.run_ablation("G1", TrackerConfig(), [])
