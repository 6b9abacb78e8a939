"""Command-line front end.

    onlinetrack track  --sequence DIR --output results.json --seed 0 [--config FILE]
    onlinetrack synth  --preset static --frames 50 --seed 0 --output DIR
    onlinetrack eval   --results results.json --sequence DIR
    onlinetrack ablate --group G1 --seed 0 --output report.txt [--preset P --count 20]
    onlinetrack bench  --frames 100 --seed 0 [--output bench.json]

Exit codes: 0 success, 1 internal error, 2 bad input, 3 bad config.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import tracker as trk
from ._accel import backend
from .evaluation import ablation, metrics
from .evaluation.sequence_io import (SequenceError, boxes_from_results, load_sequence, read_results,
                                     results_document, save_sequence, write_results)
from .evaluation.synth import PRESETS, SynthSpec, gen_synthetic
from .featmap import Rect
from .features import save_image, to_gray

log = logging.getLogger("onlinetrack")

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_CONFIG = 0, 1, 2, 3


class InputError(Exception):
    pass


def _fmt(v):
    return "null" if v is None else f"{v:.4f}"


def summary_line(summary: dict) -> str:
    return f"auc={_fmt(summary['auc'])} pr={_fmt(summary['precision'])} fps={_fmt(summary.get('fps'))}"


def _config(path) -> trk.TrackerConfig:
    if path is None:
        return trk.TrackerConfig()
    try:
        return trk.load_config(path)
    except OSError as exc:
        raise trk.ConfigError(f"cannot read config {path}: {exc.strerror}") from None


def draw_box(img, rect: Rect, value=1.0):
    """Grey copy of ``img`` with a one-pixel rectangle outline."""
    out = np.array(to_gray(img), dtype=np.float64)
    H, W = out.shape
    x0, y0 = int(round(rect.cx - rect.w / 2)), int(round(rect.cy - rect.h / 2))
    x1, y1 = int(round(rect.cx + rect.w / 2)) - 1, int(round(rect.cy + rect.h / 2)) - 1
    xs = slice(max(x0, 0), min(x1, W - 1) + 1)
    ys = slice(max(y0, 0), min(y1, H - 1) + 1)
    for y in (y0, y1):
        if 0 <= y < H:
            out[y, xs] = value
    for x in (x0, x1):
        if 0 <= x < W:
            out[ys, x] = value
    return out


def run_tracker(seq, cfg, seed):
    """Track ``seq``; returns (boxes, scores, flags, step_seconds)."""
    state = trk.init(seq.frames[0], seq.groundtruth[0], cfg, seed)
    t0 = state.target
    boxes, scores = [t0.rect], [t0.confidence]
    flags = [{"target_absent": False, "distractor_present": False, "updated": False, "template": t0.template}]
    start = time.perf_counter()
    for frame in seq.frames[1:]:
        state, t = trk.step(state, frame, cfg)
        boxes.append(t.rect)
        scores.append(t.confidence)
        flags.append({"target_absent": t.target_absent, "distractor_present": t.distractor_present,
                      "updated": t.updated, "template": t.template})
    return boxes, scores, flags, time.perf_counter() - start


# ------------------------------------------------------------------ commands

def cmd_track(args) -> int:
    cfg = _config(args.config)
    try:
        seq = load_sequence(args.sequence)
    except SequenceError as exc:
        raise InputError(str(exc)) from None
    boxes, scores, flags, seconds = run_tracker(seq, cfg, args.seed)
    summary = metrics.summarize(boxes, seq.groundtruth, args.radius)
    fps = (len(seq) - 1) / seconds if seconds > 0 else float("inf")
    # wall-clock fps would break byte-identical results, so it is opt-in
    summary["fps"] = fps if args.record_fps else None
    doc = results_document(seq.name, boxes, scores, flags, summary, args.seed,
                           {f: getattr(cfg, f) for f in cfg.__dataclass_fields__})
    write_results(args.output, doc)
    if args.dump_overlays:
        odir = Path(args.dump_overlays)
        odir.mkdir(parents=True, exist_ok=True)
        for i, (frame, rect) in enumerate(zip(seq.frames, boxes), 1):
            save_image(odir / f"{i:08d}.png", draw_box(frame, rect))
    print(summary_line({**summary, "fps": fps}))
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(preset=args.preset, frames=args.frames, seed=args.seed, image_size=args.size)
    seq = gen_synthetic(spec)
    save_sequence(seq, args.output)
    print(f"wrote {len(seq)} frames to {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        doc = read_results(args.results)
        pred = boxes_from_results(doc)
        seq = load_sequence(args.sequence)
    except (SequenceError, OSError) as exc:
        raise InputError(str(exc)) from None
    if len(pred) != len(seq):
        raise InputError(f"{args.results} has {len(pred)} frames, {args.sequence} has {len(seq)}")
    summary = metrics.summarize(pred, seq.groundtruth, args.radius)
    summary["fps"] = doc.get("summary", {}).get("fps")
    if args.output:
        Path(args.output).write_text(json.dumps({k: summary[k] for k in ("auc", "precision", "mean_iou", "fps")},
                                                indent=1) + "\n")
    print(summary_line(summary) + f" mean_iou={summary['mean_iou']:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if args.group not in ablation.GROUPS:
        raise trk.ConfigError(f"unknown ablation group {args.group!r}; choose from {', '.join(ablation.GROUPS)}")
    cfg = _config(args.config)
    preset = args.preset or ablation.DEFAULT_PRESET[args.group]
    try:
        suite = ablation.make_suite(preset, args.count, args.seed, args.frames)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    settings = ablation.group_settings(args.group)
    if args.no_update_row:
        settings.append(ablation.no_update_setting())
    report = ablation.run_ablation(args.group, cfg, suite, settings, radius_px=args.radius)
    text = ablation.format_report(report)
    if args.output:
        path = Path(args.output)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    sys.stdout.write(text.split("\n\n", 1)[0] + "\n")
    return EXIT_OK


def bench(frames: int, size: int, seed: int, cfg: trk.TrackerConfig = trk.TrackerConfig()) -> dict:
    seq = gen_synthetic(SynthSpec(preset="static", frames=frames + 1, seed=seed, image_size=size))
    t = time.perf_counter()
    state = trk.init(seq.frames[0], seq.groundtruth[0], cfg, seed)
    init_s = time.perf_counter() - t
    t = time.perf_counter()
    for frame in seq.frames[1:]:
        trk.step(state, frame, cfg)
    seconds = time.perf_counter() - t
    return {"backend": backend(), "frames": frames, "image_size": size, "search_size": trk.SEARCH_SIZE,
            "init_seconds": init_s, "seconds": seconds, "fps": frames / seconds}


def cmd_bench(args) -> int:
    if args.frames < 10:
        raise InputError("bench needs --frames >= 10")
    try:
        SynthSpec(image_size=args.size)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    res = bench(args.frames, args.size, args.seed, _config(args.config))
    if args.output:
        Path(args.output).write_text(json.dumps(res, indent=1) + "\n")
    print(f"frames={res['frames']} seconds={res['seconds']:.3f} fps={res['fps']:.2f} backend={res['backend']}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onlinetrack", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    t = sub.add_parser("track", help="track one sequence directory and write a results file")
    t.add_argument("--sequence", required=True)
    t.add_argument("--output", required=True)
    t.add_argument("--seed", type=int, required=True)
    t.add_argument("--config")
    t.add_argument("--radius", type=float, default=20.0, help="precision radius in pixels")
    t.add_argument("--dump-overlays", metavar="DIR", help="write frames with the predicted box drawn")
    t.add_argument("--record-fps", action="store_true", help="store measured fps in the results file")
    t.set_defaults(func=cmd_track)

    s = sub.add_parser("synth", help="write a synthetic sequence directory")
    s.add_argument("--preset", choices=PRESETS, required=True)
    s.add_argument("--frames", type=int, default=50)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--size", type=int, default=256, help="image side in pixels")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("eval", help="score a results file against a sequence's ground truth")
    e.add_argument("--results", required=True)
    e.add_argument("--sequence", required=True)
    e.add_argument("--radius", type=float, default=20.0)
    e.add_argument("--output")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation group over a synthetic suite")
    a.add_argument("--group", required=True, help="one of " + ", ".join(ablation.GROUPS))
    a.add_argument("--seed", type=int, required=True)
    a.add_argument("--preset", choices=PRESETS, help="suite preset (default depends on the group)")
    a.add_argument("--count", type=int, default=20, help="sequences in the suite")
    a.add_argument("--frames", type=int, default=100)
    a.add_argument("--radius", type=float, default=20.0)
    a.add_argument("--config")
    a.add_argument("--output")
    a.add_argument("--no-update-row", action="store_true",
                   help="append a run with template update off (the G3 baseline)")
    a.set_defaults(func=cmd_ablate)

    b = sub.add_parser("bench", help="time the tracking loop on a synthetic sequence")
    b.add_argument("--frames", type=int, default=100)
    b.add_argument("--size", type=int, default=256, help="image side in pixels")
    b.add_argument("--seed", type=int, required=True)
    b.add_argument("--config")
    b.add_argument("--output")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except trk.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
