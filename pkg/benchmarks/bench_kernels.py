"""Numba vs pure-numpy kernels, one at a time and through the whole step loop.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--frames 30] [--json out.json]

The end-to-end rows run ``onlinetrack bench`` in a subprocess per backend
(``ONLINETRACK_NO_NUMBA`` is read at import time).
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from onlinetrack import kernels


def cases(rng):
    img = rng.random((300, 300))
    gy, gx = np.gradient(rng.random((256, 256)))
    return {
        # search features (9, 32, 32) against a template (9, 16, 16)
        "xcorr_valid": (kernels.xcorr_valid_np, kernels.xcorr_valid_nb,
                        (rng.standard_normal((9, 32, 32)), rng.standard_normal((9, 16, 16)))),
        "sample_bilinear": (kernels.sample_bilinear_np, kernels.sample_bilinear_nb,
                            (img, 10.3, 7.7, 0.9, 256, 256, 0.5)),
        "orientation_cells": (kernels.orientation_cells_np, kernels.orientation_cells_nb,
                              (gx, gy, 8, 8)),
    }


def time_call(fn, args, repeat):
    fn(*args)  # warm-up, includes jit compile for the numba variant
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def kernel_rows(repeat, seed=0):
    rows = []
    for name, (f_np, f_nb, args) in cases(np.random.default_rng(seed)).items():
        diff = float(np.max(np.abs(f_np(*args) - f_nb(*args))))
        t_np, t_nb = time_call(f_np, args, repeat), time_call(f_nb, args, repeat)
        rows.append({"kernel": name, "numpy_ms": 1e3 * t_np, "numba_ms": 1e3 * t_nb,
                     "speedup": t_np / t_nb, "max_abs_diff": diff})
    return rows


def loop_row(frames, disable):
    env = dict(os.environ, ONLINETRACK_NO_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-m", "onlinetrack", "bench", "--frames", str(frames),
                          "--seed", "0", "--output", "/dev/stdout"],
                         env=env, capture_output=True, text=True, check=True).stdout
    return json.loads(out[:out.rindex("}") + 1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--frames", type=int, default=30)
    ap.add_argument("--json", help="also write the numbers here")
    args = ap.parse_args(argv)

    rows = kernel_rows(args.repeat)
    print(f"{'kernel':<18} {'numpy ms':>9} {'numba ms':>9} {'speedup':>8} {'max diff':>9}")
    for r in rows:
        print(f"{r['kernel']:<18} {r['numpy_ms']:9.3f} {r['numba_ms']:9.3f} {r['speedup']:8.1f} {r['max_abs_diff']:9.1e}")

    loops = {b: loop_row(args.frames, b == "numpy") for b in ("numba", "numpy")}
    print(f"\nstep loop, {args.frames} frames")
    for b, r in loops.items():
        print(f"{b:<8} fps={r['fps']:.2f}  init={r['init_seconds']:.2f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "loop": loops}, fh, indent=1)


if __name__ == "__main__":
    main()
