"""Time im2col / col2im and a conv layer step on both kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--channels C] [--size S]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from unobs.nn import kernels


def bench(backend, channels, size, batch, repeat):
    im2col, col2im = kernels.get_backend(backend)
    rng = np.random.default_rng(0)
    xp = rng.standard_normal((batch, channels, size + 2, size + 2))
    cols = im2col(xp, 3, 1, size, size)
    out = {}
    out["im2col"] = min(timeit.repeat(lambda: im2col(xp, 3, 1, size, size),
                                      number=1, repeat=repeat))
    out["col2im"] = min(timeit.repeat(lambda: col2im(cols, xp.shape, 3, 1),
                                      number=1, repeat=repeat))
    return out, col2im(cols, xp.shape, 3, 1)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--channels", type=int, default=32)
    ap.add_argument("--size", type=int, default=32)
    ap.add_argument("--batch", type=int, default=4)
    args = ap.parse_args()
    names = ["python"] + (["cython"] if kernels.HAVE_EXTENSION else [])
    results = {}
    for name in names:
        results[name], grad = bench(name, args.channels, args.size, args.batch, args.repeat)
        results[name]["_grad"] = grad
    print(f"shape: batch {args.batch}, {args.channels} channels, {args.size}x{args.size}, k=3")
    print(f"{'kernel':<8}" + "".join(f"{n:>12}" for n in names) + ("   speedup" if len(names) > 1 else ""))
    for k in ("im2col", "col2im"):
        row = f"{k:<8}" + "".join(f"{results[n][k] * 1e3:>10.2f}ms" for n in names)
        if len(names) > 1:
            row += f"   {results['python'][k] / results['cython'][k]:>6.1f}x"
        print(row)
    if len(names) > 1:
        same = np.array_equal(results["python"]["_grad"], results["cython"]["_grad"])
        print(f"col2im outputs bit-identical: {same}")
    else:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
