"""Command-line interface.

Exit codes: 0 success, 2 config/schema error, 3 contract violation,
4 ADMM did not converge (on every trial, or on the single image segmented).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractViolation
from .experiment import ExperimentConfig, admm_config, run_experiment, write_results
from .io import read_image, write_image
from .lattice import Neighborhood, PatchShape
from .metrics import mv_baseline
from .models import PointwiseModel, TrainingSet, load_model, sample_pair, verify_jigsaw
from .multipoint import admm_segment
from .pointwise import PointwiseConfig, segment_pointwise, separation_gap
from .theory import BoundParams, bound_terms, is_vacuous, monte_carlo_error, required_gap, required_n

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONTRACT = 3
EXIT_NOT_CONVERGED = 4


def _jsonable(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def _emit(doc: dict) -> None:
    print(json.dumps({k: _jsonable(v) for k, v in doc.items()}, indent=2))


def load_training_dir(path) -> TrainingSet:
    """Read ``NNNN_image.pseg`` / ``NNNN_label.pseg`` pairs from a directory."""
    path = Path(path)
    images = sorted(path.glob("*_image.pseg"))
    if not images:
        raise ConfigError(f"no *_image.pseg files in {path}")
    ys, ls = [], []
    for img in images:
        lab = img.with_name(img.name.replace("_image.pseg", "_label.pseg"))
        if not lab.exists():
            raise ConfigError(f"missing label file {lab}")
        ys.append(read_image(img)[0])
        ls.append(read_image(lab)[0])
    try:
        return TrainingSet(np.stack(ys), np.stack(ls))
    except ValueError as exc:
        raise ConfigError(f"training images in {path} do not share one lattice") from exc


def cmd_generate(args) -> int:
    model = load_model(args.model)
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    manifest = {"model": str(args.model), "seed": args.seed, "train": [], "test": []}
    for split, count in (("train", args.n_train), ("test", args.n_test)):
        (out / split).mkdir(parents=True, exist_ok=True)
        for k in range(count):
            image, label = sample_pair(model, rng)
            stem = out / split / f"{k:04d}"
            write_image(f"{stem}_image.pseg", image, "intensity")
            write_image(f"{stem}_label.pseg", label, "label")
            manifest[split].append(f"{split}/{k:04d}")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return EXIT_OK


def cmd_segment(args) -> int:
    train = load_training_dir(args.train)
    Y, kind = read_image(args.image)
    if kind != "intensity":
        raise ConfigError(f"{args.image} is not an intensity image")
    ndim = train.lattice.ndim
    code = EXIT_OK
    if args.method == "mv":
        labels = mv_baseline(train)
    elif args.method in ("nn", "wmv"):
        theta = math.inf if args.method == "nn" else args.theta
        cfg = PointwiseConfig(
            Neighborhood.box(args.search_radius),
            PatchShape.box(args.patch_radius, ndim, args.boundary),
            theta,
        )
        labels = segment_pointwise(Y, train, cfg)
    else:
        params = {
            "patch_radius": args.patch_radius,
            "label_patch_radius": args.label_patch_radius,
            "search_radius": args.search_radius,
            "boundary": args.boundary,
            "gamma": args.gamma,
            "alpha": args.alpha,
            "beta": args.beta,
            "block_side": args.block_side,
            "max_iter": args.max_iter,
            "tol": args.tol,
            "step": args.step,
            "inner_iters": args.inner_iters,
            "init": args.init,
            "freeze_duals": False,
        }
        result = admm_segment(Y, train, admm_config(params, ndim))
        labels = result.labels
        if args.diagnostics:
            with open(args.diagnostics, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["iteration", "residual", "objective"])
                writer.writerows(result.diagnostics())
        if not result.converged:
            code = EXIT_NOT_CONVERGED
    write_image(args.out, labels, "label")
    return code


def cmd_gap(args) -> int:
    train = load_training_dir(args.train)
    gap = separation_gap(
        train,
        Neighborhood.box(args.search_radius),
        PatchShape.box(args.patch_radius, train.lattice.ndim, args.boundary),
    )
    _emit({"gap": gap, "n": train.n})
    return EXIT_OK


def _need(args, *names):
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        raise ConfigError("missing arguments: " + ", ".join("--" + m.replace("_", "-") for m in missing))


def cmd_bound(args) -> int:
    if args.solve_n:
        _need(args, "eps", "n_pixels", "c_max", "rho_min")
        _emit({"required_n": required_n(args.eps, args.n_pixels, args.c_max, args.rho_min)})
        return EXIT_OK
    if args.solve_gap:
        _need(args, "eps", "n_neighbors", "n", "sigma")
        _emit({"required_gap": required_gap(args.eps, args.n_neighbors, args.n, args.sigma)})
        return EXIT_OK
    _need(args, "n_pixels", "c_max", "n", "rho_min", "n_neighbors", "gap", "sigma")
    params = BoundParams(args.n_pixels, args.c_max, args.n, args.rho_min, args.n_neighbors, args.gap, args.sigma)
    t1, t2 = bound_terms(params)
    _emit({"bound": t1 + t2, "term1": t1, "term2": t2, "vacuous": is_vacuous(t1 + t2)})
    return EXIT_OK


def cmd_verify(args) -> int:
    model = load_model(args.model)
    if not isinstance(model, PointwiseModel):
        raise ConfigError("verify needs a pointwise model")
    report = verify_jigsaw(model)
    doc = {"jigsaw_holds": report.holds, "violations": [list(v) for v in report.violations]}
    if not args.monte_carlo:
        print(json.dumps(doc, indent=2))
        return EXIT_OK if report.holds else EXIT_CONTRACT
    radius = args.search_radius if args.search_radius is not None else model.jigsaw.radius
    if radius is None:
        raise ConfigError("--search-radius is required when N* is an explicit offset list")
    n = args.n or required_n(args.eps, model.lattice.size, model.c_max, model.rho_min)
    trial = monte_carlo_error(
        model, args.algorithm, n, Neighborhood.box(radius), theta=args.theta, trials=args.trials, seed=args.seed
    )
    if args.out:
        Path(args.out).write_text(trial.to_json())
    summary = trial.csv_row()
    summary["within_bound"] = trial.vacuous or trial.ci_high <= trial.bound
    doc.update(summary)
    print(json.dumps({k: _jsonable(v) for k, v in doc.items()}, indent=2))
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = args.out or cfg.output_dir
    if out is None:
        raise ConfigError("no output directory: pass --out or set output_dir")
    result = run_experiment(cfg)
    write_results(result, out)
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    return EXIT_NOT_CONVERGED if result.admm_never_converged else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample training/test pairs from a model")
    p.add_argument("--model", required=True)
    p.add_argument("--n-train", type=int, required=True)
    p.add_argument("--n-test", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("segment", help="segment one image from a training directory")
    p.add_argument("--method", choices=["mv", "nn", "wmv", "admm"], required=True)
    p.add_argument("--train", required=True, help="directory of NNNN_image/NNNN_label .pseg files")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--patch-radius", type=int, default=2)
    p.add_argument("--label-patch-radius", type=int, default=1)
    p.add_argument("--search-radius", type=int, default=2)
    p.add_argument("--boundary", choices=["clamp", "mirror"], default="clamp")
    p.add_argument("--theta", type=float, default=1.0)
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--block-side", type=int, default=3)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--step", type=float, default=0.1)
    p.add_argument("--inner-iters", type=int, default=10)
    p.add_argument("--init", choices=["wmv", "cold"], default="wmv")
    p.add_argument("--diagnostics", help="CSV path for the ADMM residual/objective trace")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("gap", help="separation gap of a training set")
    p.add_argument("--train", required=True)
    p.add_argument("--patch-radius", type=int, default=0)
    p.add_argument("--search-radius", type=int, default=1)
    p.add_argument("--boundary", choices=["clamp", "mirror"], default="clamp")
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("bound", help="evaluate the pixel-error bound or solve for n / gap")
    for name, typ in (
        ("--n-pixels", int),
        ("--c-max", int),
        ("--n", int),
        ("--rho-min", float),
        ("--n-neighbors", int),
        ("--gap", float),
        ("--sigma", float),
        ("--eps", float),
    ):
        p.add_argument(name, type=typ)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--solve-n", action="store_true")
    group.add_argument("--solve-gap", action="store_true")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("verify", help="jigsaw check and Monte Carlo bound verification")
    p.add_argument("--model", required=True)
    p.add_argument("--monte-carlo", action="store_true")
    p.add_argument("--algorithm", choices=["nn", "wmv"], default="nn")
    p.add_argument("--n", type=int, help="training set size (default: required_n(eps))")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--theta", type=float)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--search-radius", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the full TrialReport JSON here")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("experiment", help="run the MV/1NN/WMV/ADMM comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
