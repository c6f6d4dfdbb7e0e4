"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Each kernel is called once per backend before timing so JIT compilation
is excluded. The numpy fallback is what runs under QFOCK_DISABLE_NUMBA=1.
"""

import argparse
import timeit

import numpy as np

from qfock import kernels


def cases(rng):
    s, L = 4, 7
    x = rng.standard_normal((2, s**L)) + 1j * rng.standard_normal((2, s**L))
    letters = np.arange(s, dtype=np.int64)
    keys = rng.integers(0, 3, 16).astype(np.int64)
    stars = np.zeros(16, dtype=np.bool_)
    stars[rng.permutation(16)[:8]] = True
    perms = np.array([rng.permutation(9) + 1 for _ in range(20000)], dtype=np.int64)
    return {
        "rstar_step": (x, s, L, 0.4),
        "annihilate_letters": (x, s, L, 0.4, letters),
        "annihilation_coo": (2, 14, 1, 0.4),
        "pairing_histogram": (keys, stars, True),
        "inversions_batch": (perms,),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if "numba" not in kernels.IMPLEMENTATIONS:
        raise SystemExit("numba kernels unavailable; nothing to compare")
    nb, npy = kernels.IMPLEMENTATIONS["numba"], kernels.IMPLEMENTATIONS["numpy"]
    print(f"{'kernel':<20} {'numba [ms]':>12} {'numpy [ms]':>12} {'speedup':>9}")
    for name, a in cases(np.random.default_rng(0)).items():
        times = []
        for impl in (nb, npy):
            fn = impl[name]
            fn(*a)
            times.append(min(timeit.repeat(lambda: fn(*a), number=1, repeat=args.repeat)) * 1e3)
        print(f"{name:<20} {times[0]:>12.3f} {times[1]:>12.3f} {times[1] / times[0]:>8.1f}x")


if __name__ == "__main__":
    main()
