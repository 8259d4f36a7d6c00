"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from desvq import _backend
from desvq.numerics import SVD_TOL


def cases(rng):
    m64 = rng.standard_normal((128, 64))
    w = rng.standard_normal((512, 512))
    scale = np.full_like(w, 0.1)
    zero = np.full_like(w, 7.0)
    band = rng.standard_normal((201, 512))
    g = rng.standard_normal((512, 512))

    def jacobi(mod, m):
        def run():
            mod.jacobi_sweeps(m.copy(), np.eye(m.shape[1]), SVD_TOL, 100)
        return run

    return {
        "jacobi 128x64": lambda mod: jacobi(mod, m64),
        "jacobi 32x32": lambda mod: jacobi(mod, m64[:32, :32]),
        "quantize_codes 512x512": lambda mod: lambda: mod.quantize_codes(w, scale, zero, 15),
        "round_half_away 512x512": lambda mod: lambda: mod.round_half_away(w),
        "band_scatter n=100 512": lambda mod: lambda: mod.band_scatter(band, 512),
        "band_gather n=100 512": lambda mod: lambda: mod.band_gather(g, 100),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _backend.compiled is None:
        raise SystemExit("compiled extension not built; run `python setup.py build_ext --inplace`")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'cython ms':>12}{'numpy ms':>12}{'speedup':>10}")
    for name, make in cases(rng).items():
        times = []
        for mod in (_backend.compiled, _backend.fallback):
            fn = make(mod)
            n = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
            times.append(min(timeit.repeat(fn, number=n, repeat=args.repeat)) / n * 1e3)
        print(f"{name:<26}{times[0]:>12.3f}{times[1]:>12.3f}{times[1] / times[0]:>9.1f}x")


if __name__ == "__main__":
    main()
