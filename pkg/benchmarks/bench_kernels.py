#!/usr/bin/env python3
"""Time the numba kernels against their numpy twins.

Numba versions are called once before timing so compilation is excluded.

    python benchmarks/bench_kernels.py --side 32 --n 20 --repeat 5
"""

import argparse
import json
import timeit

import numpy as np

from patchseg import Neighborhood, PatchShape, TrainingSet, build_kde_prior
from patchseg._accel import HAVE_NUMBA
from patchseg.kernels import BACKENDS
from patchseg.lattice import extract_patches


def make_inputs(side, n, patch_radius, search_radius, seed):
    rng = np.random.default_rng(seed)
    shape = PatchShape.box(patch_radius, 2)
    images = rng.normal(size=(n, side, side))
    labels = np.where(rng.random((n, side, side)) < 0.5, 1, -1).astype(np.int8)
    train = TrainingSet(images, labels)
    Y = rng.normal(size=(side, side))
    nbr = Neighborhood.box(search_radius).table(train.lattice)
    test = np.ascontiguousarray(extract_patches(Y, shape))
    tr = np.ascontiguousarray(np.stack([extract_patches(img, shape) for img in images]))
    flat = np.ascontiguousarray(labels.reshape(n, -1))
    prior = build_kde_prior(train, 1.0, Neighborhood.box(search_radius), shape, PatchShape.box(1, 2), 3)
    kde_args = (
        test,
        prior.pix_block,
        prior.block_ptr,
        prior.entry_patch,
        prior.entry_cand,
        prior.block_ncand,
        prior.cand_patch.shape[1],
        1.0,
    )
    scores = BACKENDS["numpy"]["kde_scores"](*kde_args)
    target = rng.uniform(-1, 1, (side * side, prior.cand_patch.shape[2]))
    return {
        "nn_scan": (test, tr, flat, nbr),
        "wmv_scan": (test, tr, flat, nbr, 0.5),
        "gap_scan": (tr, flat, nbr),
        "kde_scores": kde_args,
        "xi_argmax": (scores, prior.pix_block, prior.cand_patch, prior.block_ncand, target, 1.0 / side**2, 0.5),
    }


def best_time(func, args, repeat):
    return min(timeit.repeat(lambda: func(*args), number=1, repeat=repeat))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--side", type=int, default=24)
    parser.add_argument("--n", type=int, default=10)
    parser.add_argument("--patch-radius", type=int, default=2)
    parser.add_argument("--search-radius", type=int, default=1)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", action="store_true", help="print results as JSON")
    args = parser.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    inputs = make_inputs(args.side, args.n, args.patch_radius, args.search_radius, args.seed)
    results = {}
    for name, kargs in inputs.items():
        fast, slow = BACKENDS["numba"][name], BACKENDS["numpy"][name]
        fast(*kargs)
        t_nb = best_time(fast, kargs, args.repeat)
        t_np = best_time(slow, kargs, args.repeat)
        results[name] = {"numba_s": t_nb, "numpy_s": t_np, "speedup": t_np / t_nb if t_nb > 0 else float("inf")}

    if args.json:
        print(json.dumps(results, indent=2))
        return
    print(f"side={args.side} n={args.n} patch_radius={args.patch_radius} search_radius={args.search_radius}")
    print(f"{'kernel':<12}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, r in results.items():
        print(f"{name:<12}{r['numba_s']:>12.5f}{r['numpy_s']:>12.5f}{r['speedup']:>9.1f}x")


if __name__ == "__main__":
    main()
