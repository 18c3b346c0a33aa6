"""Time every hot kernel under the numba and numpy backends.

    python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import json
import timeit

import numpy as np

from vidpert import _kernels as K


def cases(rng):
    x = rng.standard_normal((8, 16, 32, 32))
    cols = K.im2col(x, 3, 1, 1)
    i1, i2 = rng.uniform(0, 255, (2, 32, 32))
    field = rng.standard_normal((3, 32, 32))
    u, v = rng.uniform(-2, 2, (2, 32, 32))
    return {
        "im2col": lambda: K.im2col(x, 3, 1, 1),
        "col2im": lambda: K.col2im(cols, x.shape, 3, 1, 1),
        "horn_schunck": lambda: K.horn_schunck(i1, i2, 10.0, 100),
        "bilinear_warp": lambda: K.bilinear_warp(field, u, v),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = ["numpy"] + (["numba"] if K.HAVE_NUMBA else [])
    results = {}
    for name in backends:
        K.set_backend(name)
        for kernel, fn in cases(np.random.default_rng(0)).items():
            fn()  # compile / warm caches
            best = min(timeit.repeat(fn, number=1, repeat=args.repeat))
            results.setdefault(kernel, {})[name] = best * 1e3
    print(f"{'kernel':16s}" + "".join(f"{b + ' ms':>12s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for kernel, row in results.items():
        line = f"{kernel:16s}" + "".join(f"{row[b]:12.3f}" for b in backends)
        if len(backends) == 2:
            line += f"{row['numpy'] / row['numba']:11.1f}x"
        print(line)
    print(json.dumps(results, sort_keys=True))


if __name__ == "__main__":
    main()
