"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 50]

The numba side is skipped when NEURIK_NUMBA=0 is set.
"""

import argparse
import time

import numpy as np

from neurik import kernels as k
from neurik.kinematics import Skeleton


def best_of(fn, args, repeat):
    fn(*args)  # compile / warm caches
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    sk = Skeleton.default()
    n = 16 * 64
    x = rng.normal(size=(n, 256))
    gamma, beta = np.ones(256), np.zeros(256)
    y, xhat, rstd = k.layer_norm_fwd_np(x, gamma, beta, 1e-5)
    att = rng.normal(size=(64 * 4 * 16, 16))
    p = k.softmax_rows_np(att)
    r6 = rng.normal(size=(n * sk.J, 6))
    rot, _ = k.gram_schmidt_np(r6)
    rot = rot.reshape(n, sk.J, 3, 3)
    offsets = np.broadcast_to(sk.offsets(np.zeros(sk.S)), (n, sk.J, 3)).copy()
    parents = np.asarray(sk.parents, dtype=np.int64)
    frames = rng.normal(size=(n, sk.K, 3))
    return [
        ("layer_norm fwd", "layer_norm_fwd", (x, gamma, beta, 1e-5)),
        ("layer_norm bwd", "layer_norm_bwd", (y, xhat, rstd, gamma)),
        ("softmax fwd", "softmax_rows", (att,)),
        ("softmax bwd", "softmax_rows_bwd", (att, p)),
        ("gram-schmidt", "gram_schmidt", (r6,)),
        ("forward kinematics", "fk", (parents, offsets, rot, np.zeros((n, 3)))),
        ("standardize", "standardize_frames", (frames,)),
    ]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for label, stem, a in cases(rng):
        t_np = best_of(getattr(k, stem + "_np"), a, args.repeat)
        if k.NUMBA_ENABLED:
            t_nb = best_of(getattr(k, stem + "_nb"), a, args.repeat)
            print(f"{label:<20}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")
        else:
            print(f"{label:<20}{t_np * 1e3:>10.3f}{'-':>10}{'-':>9}")


if __name__ == "__main__":
    main()
