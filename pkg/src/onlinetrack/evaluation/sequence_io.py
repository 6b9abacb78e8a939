"""Sequence directories and results files.

Layout::

    <seq>/frames/00000001.png ...
    <seq>/groundtruth.txt          one ``x,y,w,h`` line per frame (top-left corner)
"""
from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from ..featmap import Rect
from ..features import load_image, save_image
from .synth import Sequence

FRAME_RE = re.compile(r"^(\d{8})\.(png|bmp|tif|tiff|pgm|ppm)$", re.IGNORECASE)


class SequenceError(ValueError):
    """Malformed sequence directory or annotation file."""


def parse_groundtruth(text: str, source="groundtruth.txt") -> list[Rect]:
    boxes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = [p for p in re.split(r"[,\s]+", line.strip()) if p]
        if len(parts) != 4:
            raise SequenceError(f"{source}:{lineno}: expected x,y,w,h, got {line.strip()!r}")
        try:
            x, y, w, h = (float(p) for p in parts)
        except ValueError:
            raise SequenceError(f"{source}:{lineno}: non-numeric box {line.strip()!r}") from None
        if not (w > 0 and h > 0) or not all(np.isfinite((x, y, w, h))):
            raise SequenceError(f"{source}:{lineno}: box needs finite values and positive size")
        boxes.append(Rect.from_xywh(x, y, w, h))
    return boxes


def format_groundtruth(boxes) -> str:
    # repr round-trips each stored float exactly
    return "".join(",".join(repr(float(v)) for v in r.to_xywh()) + "\n" for r in boxes)


def frame_paths(seq_dir) -> list[Path]:
    fdir = Path(seq_dir) / "frames"
    if not fdir.is_dir():
        raise SequenceError(f"missing frames directory {fdir}")
    found = sorted((int(m.group(1)), p) for p in fdir.iterdir() if (m := FRAME_RE.match(p.name)))
    if not found:
        raise SequenceError(f"no frames named like 00000001.png in {fdir}")
    numbers = [n for n, _ in found]
    if numbers != list(range(1, len(found) + 1)):
        raise SequenceError(f"frame numbers in {fdir} must run 1..{len(found)} without gaps")
    return [p for _, p in found]


def load_sequence(seq_dir) -> Sequence:
    seq_dir = Path(seq_dir)
    if not seq_dir.is_dir():
        raise SequenceError(f"sequence directory {seq_dir} does not exist")
    gt_path = seq_dir / "groundtruth.txt"
    if not gt_path.is_file():
        raise SequenceError(f"missing {gt_path}")
    boxes = parse_groundtruth(gt_path.read_text(), str(gt_path))
    paths = frame_paths(seq_dir)
    if len(paths) != len(boxes):
        raise SequenceError(f"{len(paths)} frames but {len(boxes)} boxes in {gt_path}")
    if len(paths) < 2:
        raise SequenceError("a sequence needs at least 2 frames")
    frames = []
    for p in paths:
        try:
            frames.append(load_image(p))
        except (OSError, ValueError) as exc:
            raise SequenceError(f"cannot read frame {p}: {exc}") from None
    if len({f.shape for f in frames}) != 1:
        raise SequenceError("all frames must have the same size")
    return Sequence(frames, boxes, seq_dir.name)


def save_sequence(seq: Sequence, seq_dir) -> Path:
    seq_dir = Path(seq_dir)
    fdir = seq_dir / "frames"
    fdir.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames, 1):
        save_image(fdir / f"{i:08d}.png", frame)
    (seq_dir / "groundtruth.txt").write_text(format_groundtruth(seq.groundtruth))
    return seq_dir


# ------------------------------------------------------------------- results

def _num(v, digits=6):
    return None if v is None else round(float(v), digits)


def results_document(name, boxes, scores, flags, summary, seed=None, config=None) -> dict:
    """Results as an ordered dict-of-lists ready for :func:`write_results`."""
    if not (len(boxes) == len(scores) == len(flags)):
        raise ValueError("boxes, scores and flags need one entry per frame")
    frames = [{"frame": i,
               "box": [_num(v) for v in r.to_xywh()],
               "score": _num(s),
               "flags": dict(f)}
              for i, (r, s, f) in enumerate(zip(boxes, scores, flags), 1)]
    doc = {"sequence": name, "seed": seed}
    if config is not None:
        doc["config"] = dict(config)
    doc["frames"] = frames
    doc["summary"] = {k: _num(summary.get(k)) for k in ("auc", "precision", "mean_iou", "fps")}
    return doc


def dumps_results(doc) -> str:
    return json.dumps(doc, indent=1) + "\n"


def write_results(path, doc):
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(dumps_results(doc))
    os.replace(tmp, path)
    return path


def read_results(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SequenceError(f"{path}: not a results file ({exc})") from None
    if not isinstance(doc, dict) or "frames" not in doc:
        raise SequenceError(f"{path}: not a results file (no frames)")
    return doc


def boxes_from_results(doc) -> list[Rect]:
    try:
        return [Rect.from_xywh(*f["box"]) for f in doc["frames"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise SequenceError(f"malformed frame record: {exc}") from None
