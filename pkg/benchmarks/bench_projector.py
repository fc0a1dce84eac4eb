"""Time system-matrix assembly with the compiled and the pure-Python Siddon kernels.

Usage: python benchmarks/bench_projector.py [--size 128] [--views 180] [--repeat 3]
"""
import argparse
import time

import numpy as np
import scipy.sparse as sp

from osdm.geometry import FanBeamGeometry
from osdm.projector import KERNELS, fan_rays


def assemble(kernel, geom, n, s):
    o, d = fan_rays(geom)
    r, p, length = kernel(o, d, n, n, s)
    return sp.csr_matrix((length, (r, p)), shape=(len(o), n * n))


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--views", type=int, default=180)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    geom = FanBeamGeometry(n_views=args.views)
    s = 0.16 * 128 / args.size
    mats = {}
    for name, kernel in KERNELS.items():
        best = np.inf
        for _ in range(args.repeat):
            t = time.perf_counter()
            mats[name] = assemble(kernel, geom, args.size, s)
            best = min(best, time.perf_counter() - t)
        print(f"{name:>7}: {best * 1e3:8.1f} ms  ({mats[name].nnz} nonzeros)")
    if len(mats) == 2:
        diff = abs(mats["cython"] - mats["python"]).max()
        print(f"max |cython - python| = {diff:.3e}")
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
