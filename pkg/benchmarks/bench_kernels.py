"""Micro-benchmark: compiled patch kernels vs the pure-numpy fallback.

Times im2col / col2im directly against both backends in-process, then times
a full conv2d forward+backward in two subprocesses (one with LGEST_NO_EXT=1)
so each run exercises the backend the package would actually select.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from lgest.kernels import fallback

try:
    from lgest.kernels import _convkern
except ImportError:
    _convkern = None

# (n, c, hp, wp, k, stride) on pre-padded inputs
GEOMETRIES = [
    (8, 16, 19, 19, 3, 1),
    (8, 16, 19, 19, 3, 2),
    (32, 8, 11, 11, 3, 1),
    (4, 32, 35, 35, 5, 1),
]


def median_ms(fn, repeats: int) -> float:
    fn()
    fn()
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def bench_raw(repeats: int) -> None:
    print("raw kernels (median of %d runs)" % repeats)
    header = "%-28s %12s %12s %9s" % ("op / geometry", "numpy ms", "cython ms", "speedup")
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for n, c, hp, wp, k, stride in GEOMETRIES:
        ho = (hp - k) // stride + 1
        wo = (wp - k) // stride + 1
        xp = rng.standard_normal((n, c, hp, wp))
        cols = fallback.im2col(xp, k, stride, ho, wo)
        if _convkern is not None:
            assert fallback.im2col(xp, k, stride, ho, wo).tobytes() == \
                _convkern.im2col(xp, k, stride, ho, wo).tobytes()
            assert fallback.col2im(cols, c, hp, wp, k, stride, ho, wo).tobytes() == \
                _convkern.col2im(cols, c, hp, wp, k, stride, ho, wo).tobytes()
        label = "n%d c%d %dx%d k%d s%d" % (n, c, hp, wp, k, stride)
        for opname, np_fn, cy_fn in (
            (
                "im2col",
                lambda: fallback.im2col(xp, k, stride, ho, wo),
                (lambda: _convkern.im2col(xp, k, stride, ho, wo)) if _convkern else None,
            ),
            (
                "col2im",
                lambda: fallback.col2im(cols, c, hp, wp, k, stride, ho, wo),
                (lambda: _convkern.col2im(cols, c, hp, wp, k, stride, ho, wo)) if _convkern else None,
            ),
        ):
            t_np = median_ms(np_fn, repeats)
            if cy_fn is None:
                print("%-28s %12.3f %12s %9s" % (opname + " " + label, t_np, "n/a", "n/a"))
            else:
                t_cy = median_ms(cy_fn, repeats)
                print(
                    "%-28s %12.3f %12.3f %8.2fx"
                    % (opname + " " + label, t_np, t_cy, t_np / t_cy)
                )


def conv_worker(repeats: int) -> None:
    """Time conv2d forward+backward under whichever backend import selected."""
    from lgest import tensor as T
    from lgest.kernels import BACKEND
    from lgest.rng import Rng
    from lgest.tensor import Tape, Tensor

    rng = Rng(1)
    x = Tensor(rng.normal((16, 16, 19, 19)))
    w = Tensor(rng.normal((32, 16, 3, 3), sigma=0.1), requires_grad=True)
    b = Tensor(rng.normal((32,)), requires_grad=True)

    def fwd():
        return T.conv2d(x, w, b, stride=1, padding=1)

    def fwd_bwd():
        with Tape() as tape:
            out = T.conv2d(x, w, b, stride=1, padding=1)
            tape.backward(out.sum())

    print(json.dumps({
        "backend": BACKEND,
        "forward_ms": median_ms(fwd, repeats),
        "forward_backward_ms": median_ms(fwd_bwd, repeats),
    }))


def bench_conv(repeats: int) -> None:
    rows = {}
    for name, no_ext in (("numpy", "1"), ("cython", "")):
        env = dict(os.environ)
        if no_ext:
            env["LGEST_NO_EXT"] = no_ext
        else:
            env.pop("LGEST_NO_EXT", None)
        out = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--conv-worker",
             "--repeats", str(repeats)],
            capture_output=True, text=True, env=env, check=True,
        )
        rows[name] = json.loads(out.stdout.strip().splitlines()[-1])
    if rows["cython"]["backend"] != "cython":
        print("\nconv2d: compiled backend unavailable; fallback timings only")
        print("forward %.3f ms, forward+backward %.3f ms"
              % (rows["numpy"]["forward_ms"], rows["numpy"]["forward_backward_ms"]))
        return
    print("\nconv2d 16x16x19x19 -> 32ch, k3 s1 p1 (median of %d runs)" % repeats)
    header = "%-20s %12s %12s %9s" % ("pass", "numpy ms", "cython ms", "speedup")
    print(header)
    print("-" * len(header))
    for key, label in (("forward_ms", "forward"), ("forward_backward_ms", "forward+backward")):
        t_np, t_cy = rows["numpy"][key], rows["cython"][key]
        print("%-20s %12.3f %12.3f %8.2fx" % (label, t_np, t_cy, t_np / t_cy))


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--repeats", type=int, default=9)
    parser.add_argument("--conv-worker", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.conv_worker:
        conv_worker(args.repeats)
        return
    if _convkern is None:
        print("note: compiled extension not importable; numpy timings only")
    bench_raw(args.repeats)
    bench_conv(args.repeats)


if __name__ == "__main__":
    main()
