"""Time the compiled and pure-Python kernel backends on random masks.

    python benchmarks/bench_kernels.py --sizes 32 64 96 --repeat 3

Both backends are checked for identical output before timing.
"""
import argparse
import time

import numpy as np

from lesionbench import available_backends
from lesionbench.components import label_components, overlap_table
from lesionbench.volume_io import GridGeometry, LabelVolume


def random_mask(n, density, rng):
    # smooth noise so components look like blobs rather than salt
    noise = rng.random((n, n, n))
    for axis in range(3):
        noise = (noise + np.roll(noise, 1, axis) + np.roll(noise, -1, axis)) / 3
    cut = np.quantile(noise, 1 - density)
    return LabelVolume(GridGeometry((n, n, n), (1.0, 1.0, 1.0)), noise > cut)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 96])
    ap.add_argument("--density", type=float, default=0.1)
    ap.add_argument("--connectivity", type=int, default=18, choices=(6, 18, 26))
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the python backend only")
    rng = np.random.default_rng(args.seed)
    print(f"{'grid':>6} {'backend':>9} {'label s':>9} {'overlap s':>10} {'components':>11}")
    for n in args.sizes:
        ref = random_mask(n, args.density, rng)
        pred = random_mask(n, args.density, rng)
        results = {}
        for b in backends:
            rc = label_components(ref, args.connectivity, b)
            pc = label_components(pred, args.connectivity, b)
            results[b] = (rc, overlap_table(rc, pc, b))
            t_label = best_of(lambda: label_components(ref, args.connectivity, b), args.repeat)
            t_overlap = best_of(lambda: overlap_table(rc, pc, b), args.repeat)
            print(f"{n:>5}^3 {b:>9} {t_label:>9.4f} {t_overlap:>10.4f} {rc.count:>11}")
        if len(results) == 2:
            (a_cc, a_ot), (b_cc, b_ot) = results.values()
            assert np.array_equal(a_cc.labels, b_cc.labels), "backends disagree on labels"
            assert a_ot.to_dict() == b_ot.to_dict(), "backends disagree on overlaps"


if __name__ == "__main__":
    main()
