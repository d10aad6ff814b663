"""Compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--quick]
"""
import argparse
import time

import numpy as np

from heatdiff import kernels
from heatdiff.fields import neighbor_offsets


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def lipschitz_case(res, n, m, seed=0):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((res,) * n + (m,)).cumsum(axis=0) / res
    offs = neighbor_offsets(n)
    lens = np.linalg.norm(offs, axis=1) / res
    return vals, offs, lens


def transport_case(k, n, seed=0):
    rng = np.random.default_rng(seed)
    a, b = rng.random(k), rng.random(k)
    a /= a.sum()
    b /= b.sum()
    A, B = rng.random((k, n)), rng.random((k, n))
    C = np.linalg.norm(A[:, None] - B[None], axis=-1)
    return a, b, C


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true")
    args = ap.parse_args()
    if kernels.BACKEND != "compiled":
        print("compiled kernels are not built; only the fallback is timed")
    backends = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])
    lip = [(64, 2, 1), (32, 3, 2)] if args.quick else [(256, 2, 1), (64, 3, 2), (4096, 1, 3)]
    tra = [(40, 2), (80, 2)] if args.quick else [(100, 2), (200, 2), (400, 2)]
    print(f"{'kernel':<22}{'size':<14}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}  agree")
    for res, n, m in lip:
        v, o, l = lipschitz_case(res, n, m)
        times, outs = [], []
        for b in backends:
            t, out = _time(lambda: kernels.grid_lipschitz(v, o, l, 2.0, backend=b), args.repeat)
            times.append(t)
            outs.append(out)
        agree = all(abs(x - outs[0]) <= 1e-12 * abs(outs[0]) for x in outs)
        sp = times[0] / times[-1]
        print(f"{'grid_lipschitz':<22}{f'{res}^{n} m={m}':<14}" + "".join(f"{t:12.4f}" for t in times)
              + f"{sp:10.1f}  {agree}")
    for k, n in tra:
        a, b, C = transport_case(k, n)
        times, outs = [], []
        for be in backends:
            t, out = _time(lambda: kernels.transport_simplex(a, b, C, backend=be), 1 if be == "python" else args.repeat)
            times.append(t)
            outs.append(out[3])
        agree = all(abs(x - outs[0]) <= 1e-10 for x in outs)
        sp = times[0] / times[-1]
        print(f"{'transport_simplex':<22}{f'{k}x{k}':<14}" + "".join(f"{t:12.4f}" for t in times)
              + f"{sp:10.1f}  {agree}")


if __name__ == "__main__":
    main()
