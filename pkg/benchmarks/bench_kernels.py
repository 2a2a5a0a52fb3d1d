"""Compiled core vs numpy fallback on the hot kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from iblkit import _kernels


def cases(rng):
    sigma = rng.uniform(0, 5, (4096, 64))
    delta = rng.uniform(0.001, 0.05, (4096, 64))
    gw, gf = rng.normal(size=sigma.shape), rng.normal(size=4096)
    cs, gs = np.linspace(0.05, 1, 16), np.linspace(0.02, 1, 16)
    off = rng.random((16, 16, 2))

    def composite(mod):
        w, tf = mod.composite_forward(sigma, delta)
        mod.composite_backward(sigma, delta, w, tf, gw, gf)

    return {
        "composite fwd+bwd 4096x64": composite,
        "lut_integrate 16x16 cells x 1024": lambda mod: mod.lut_integrate(cs, gs, 1024, off),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled core not built; only the fallback is available")
    backends = [("numpy", _kernels.fallback)]
    if _kernels.compiled is not None:
        backends.append(("compiled", _kernels.compiled))
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} " + " ".join(f"{n:>10s}" for n, _ in backends) + "   speedup")
    for name, fn in cases(rng).items():
        times = [min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) for _, mod in backends]
        ratio = f"{times[0] / times[-1]:8.1f}x" if len(times) > 1 else "       -"
        print(f"{name:36s} " + " ".join(f"{1e3 * t:8.1f}ms" for t in times) + f"  {ratio}")


if __name__ == "__main__":
    main()
