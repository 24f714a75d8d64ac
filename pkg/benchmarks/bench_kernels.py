"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--points 65536] [--repeat 5]

Both implementations are called directly, so one process covers both
backends regardless of GPREG_DISABLE_JIT.
"""

import argparse
import timeit

import numpy as np

from gpreg import kernels
from gpreg.expr import compile_tree, parse, random_tree

TREES = {
    "translation": "(sub x (const 12.5))",
    "rotation": "(add (rotx (const 0.2618)) (const 8))",
    "mixed": "(add (mul (sin (div x (const 37))) (irbf x y (const 9))) (pow (cos y) (const 2)))",
}


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=65_536)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    n = args.points
    xs = rng.uniform(0, 255, n)
    ys = rng.uniform(0, 255, n)
    img = rng.integers(0, 256, (256, 256)).astype(np.uint8)
    bins = rng.integers(0, 32, n).astype(np.int64)
    values = rng.integers(0, 256, n).astype(np.uint8)

    deep = compile_tree(random_tree(np.random.default_rng(1), 8, (256, 256), "full"))
    progs = {name: compile_tree(parse(text)) for name, text in TREES.items()}
    progs["random depth 8"] = deep

    rows = []
    for name, p in progs.items():
        args_ = (p.ops, p.consts, xs, ys, 256.0, 256.0, p.stack_size)
        rows.append(
            (f"eval {name}", best_of(lambda: kernels.eval_program_nb(*args_), args.repeat), best_of(lambda: kernels.eval_program_np(*args_), args.repeat))
        )
    rows.append(
        (
            "bilinear sample",
            best_of(lambda: kernels.bilinear_sample_nb(img, xs, ys), args.repeat),
            best_of(lambda: kernels.bilinear_sample_np(img, xs, ys), args.repeat),
        )
    )
    rows.append(
        (
            "joint histogram",
            best_of(lambda: kernels.mapped_joint_histogram_nb(bins, img, xs, ys, 8, 32), args.repeat),
            best_of(lambda: kernels.mapped_joint_histogram_np(bins, img, xs, ys, 8, 32), args.repeat),
        )
    )
    counts = kernels.mapped_joint_histogram_np(bins, img, xs, ys, 8, 32)[0]
    rows.append(
        (
            "mutual information",
            best_of(lambda: kernels.mutual_information_nb(counts), args.repeat),
            best_of(lambda: kernels.mutual_information_np(counts), args.repeat),
        )
    )
    rows.append(
        (
            "splat",
            best_of(lambda: kernels.splat_nb(values, xs, ys, 256, 256), args.repeat),
            best_of(lambda: kernels.splat_np(values, xs, ys, 256, 256), args.repeat),
        )
    )

    print(f"{n} points, best of {args.repeat}")
    print(f"{'kernel':<28}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, t_nb, t_np in rows:
        print(f"{name:<28}{t_nb * 1e3:>10.3f}{t_np * 1e3:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
