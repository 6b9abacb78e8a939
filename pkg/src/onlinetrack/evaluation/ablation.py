"""Ablation groups over synthetic suites.

Four groups, each a list of config overrides run over the same suite:

* G1: fusion weight sweep, compression only, no short-term template.
* G2: attention off / on at lambda 0.8, no short-term template.
* G3: short-term template interval 1 / 5 / 10 at lambda 0.8 with attention.
  :func:`no_update_setting` gives the matching run with template update off.
* G4: template update guided by the online score alone (lambda 0), T = 5.
"""
from __future__ import annotations

import copy
import dataclasses
import json
import logging
from dataclasses import dataclass

import numpy as np

from .. import tracker as trk
from ..featmap import Rect
from .metrics import summarize
from .synth import SynthSpec, gen_synthetic

log = logging.getLogger(__name__)

GROUPS = ("G1", "G2", "G3", "G4")
G1_LAMBDAS = (0.0, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0)
G3_INTERVALS = (1, 5, 10)
DEFAULT_PRESET = {"G1": "distractor", "G2": "distractor", "G3": "deform", "G4": "deform"}

# config fields that change what init() builds; runs differing only in other
# fields can start from a copy of the same initial state
INIT_FIELDS = ("attention", "augment_count", "memory_capacity")


@dataclass(frozen=True)
class Setting:
    label: str
    overrides: dict


def group_settings(group: str) -> list[Setting]:
    if group == "G1":
        return [Setting(f"lambda={v:.1f}", {"lambda_fusion": v, "attention": False, "template_update": False})
                for v in G1_LAMBDAS]
    if group == "G2":
        return [Setting(f"attention={'on' if a else 'off'}",
                        {"lambda_fusion": 0.8, "attention": a, "template_update": False})
                for a in (False, True)]
    if group == "G3":
        return [Setting(f"T={t}", {"lambda_fusion": 0.8, "attention": True, "template_update": True,
                                   "template_interval": t})
                for t in G3_INTERVALS]
    if group == "G4":
        return [Setting("lambda=0.0 T=5", {"lambda_fusion": 0.0, "attention": False, "template_update": True,
                                           "template_interval": 5})]
    raise ValueError(f"unknown ablation group {group!r}; choose from {GROUPS}")


def no_update_setting() -> Setting:
    """G3's baseline: same fusion and attention, short-term template never refreshed."""
    return Setting("T=-", {"lambda_fusion": 0.8, "attention": True, "template_update": False})


def make_suite(preset: str, count: int, seed: int, frames: int = 100) -> list[SynthSpec]:
    if count < 1:
        raise ValueError("suite needs at least one sequence")
    return [SynthSpec(preset=preset, frames=frames, seed=seed + i) for i in range(count)]


def track_sequence(seq, cfg: trk.TrackerConfig, seed: int, state=None):
    """Run the tracker over ``seq``; returns (boxes, targets). ``state`` skips init."""
    if state is None:
        state = trk.init(seq.frames[0], seq.groundtruth[0], cfg, seed)
    boxes: list[Rect] = [state.target.rect]
    targets = [state.target]
    for frame in seq.frames[1:]:
        state, target = trk.step(state, frame, cfg)
        boxes.append(target.rect)
        targets.append(target)
    return boxes, targets


def run_ablation(group: str, base_cfg: trk.TrackerConfig, suite: list[SynthSpec],
                 settings: list[Setting] | None = None, radius_px: float = 20.0) -> dict:
    """Mean IoU / AUC / precision per setting, averaged over the suite."""
    if not suite:
        raise ValueError("suite must not be empty")
    settings = group_settings(group) if settings is None else settings
    cfgs = [dataclasses.replace(base_cfg, **s.overrides) for s in settings]
    per = [[] for _ in settings]
    for spec in suite:
        seq = gen_synthetic(spec)
        inits = {}
        for k, cfg in enumerate(cfgs):
            key = tuple(getattr(cfg, f) for f in INIT_FIELDS)
            if key not in inits:
                inits[key] = trk.init(seq.frames[0], seq.groundtruth[0], cfg, spec.seed)
            boxes, _ = track_sequence(seq, cfg, spec.seed, copy.deepcopy(inits[key]))
            per[k].append(summarize(boxes, seq.groundtruth, radius_px))
        log.info("%s %s done", group, seq.name)
    rows = []
    for s, stats in zip(settings, per):
        rows.append({
            "setting": s.label,
            "mean_iou": float(np.mean([m["mean_iou"] for m in stats])),
            "auc": float(np.mean([m["auc"] for m in stats])),
            "precision": float(np.mean([m["precision"] for m in stats])),
            "per_sequence_iou": [m["mean_iou"] for m in stats],
        })
    return {"group": group, "sequences": [f"{sp.preset}-{sp.seed:04d}" for sp in suite],
            "frames": suite[0].frames, "rows": rows}


def format_report(report: dict) -> str:
    """Aligned table followed by the full report as JSON."""
    width = max(len("setting"), *(len(r["setting"]) for r in report["rows"]))
    lines = [f"# ablation {report['group']} over {len(report['sequences'])} sequences",
             f"{'setting':<{width}}  {'mean_iou':>8}  {'auc':>6}  {'pr':>6}"]
    for r in report["rows"]:
        lines.append(f"{r['setting']:<{width}}  {r['mean_iou']:8.4f}  {r['auc']:6.4f}  {r['precision']:6.4f}")
    rounded = json.loads(json.dumps(report), parse_float=lambda v: round(float(v), 6))
    return "\n".join(lines) + "\n\n" + json.dumps(rounded, indent=1) + "\n"


def parse_report(text: str) -> dict:
    return json.loads(text[text.index("{"):])
