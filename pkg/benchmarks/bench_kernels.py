"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from selexit import kernels


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(f"  {label:<8} {best * 1e3:9.2f} ms")
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = ["python"] + (["cython"] if kernels.BACKEND == "cython" else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing the fallback only")
    rng = np.random.default_rng(0)

    cases = []
    for m, n in ((10_000, 4), (200_000, 12)):
        conf, hard = rng.random((m, n)), rng.random((m, n))
        cases.append((f"gate_walk {m}x{n}",
                      lambda b, c=conf, h=hard: kernels.gate_walk(c, h, 0.8, 0.7, backend=b)))
    for trials, n in ((100_000, 4), (100_000, 12)):
        u = rng.random((trials, n, 4))
        q, qd, a, b_ = (np.full(n, v) for v in (0.2, 0.2, 0.9, 0.6))
        cases.append((f"simulate_walk {trials}x{n}",
                      lambda b, u=u, q=q, qd=qd, a=a, bb=b_: kernels.simulate_walk(u, q, qd, a, bb, b)))

    for name, fn in cases:
        print(name)
        times = {b: bench(b, lambda b=b: fn(b), args.repeat) for b in backends}
        if "cython" in times:
            print(f"  speedup  {times['python'] / times['cython']:9.1f}x")


if __name__ == "__main__":
    main()
