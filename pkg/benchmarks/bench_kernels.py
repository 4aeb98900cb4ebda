"""Compare the compiled and numpy conv kernels on a few representative shapes.

    python3 benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import timeit

import numpy as np

from voxlow import kernels

CASES = [
    # name, x shape, w shape, stride, pad
    ("conv3d 3x3x3 (1,4,8,16,16)->8", (1, 4, 8, 16, 16), (8, 4, 3, 3, 3), (1, 1, 1), (1, 1, 1)),
    ("conv3d depth-sum (1,2,12,60,60)", (1, 2, 12, 60, 60), (1, 2, 12, 1, 1), (1, 1, 1), (0, 0, 0)),
    ("conv2d 11x11 (1,1,60,60)->2", (1, 1, 60, 60), (2, 1, 11, 11), (1, 1), (5, 5)),
    ("conv2d 3x3 (1,32,32,32)->32", (1, 32, 32, 32), (32, 32, 3, 3), (1, 1), (1, 1)),
]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    backends = sorted(kernels.BACKENDS)
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'case':36s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, xs, ws, stride, pad in CASES:
        x = rng.normal(size=xs).astype(np.float32)
        w = rng.normal(size=ws).astype(np.float32)
        b = rng.normal(size=ws[0]).astype(np.float32)
        fn = kernels.conv3d if len(xs) == 5 else kernels.conv2d
        times = {}
        outs = {}
        for be in backends:
            outs[be] = fn(x, w, b, stride, pad, backend=be)
            times[be] = min(timeit.repeat(lambda: fn(x, w, b, stride, pad, backend=be), number=1, repeat=args.repeats))
        row = f"{name:36s}" + "".join(f"{times[be] * 1e3:10.2f}ms" for be in backends)
        if len(backends) > 1:
            same = outs["cython"].tobytes() == outs["python"].tobytes()
            row += f"  {times['python'] / times['cython']:8.1f}x" + ("" if same else "  (outputs differ!)")
        print(row)


if __name__ == "__main__":
    main()
