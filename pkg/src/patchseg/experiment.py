"""Four-way comparison (MV, 1NN, WMV, ADMM) on synthetic data.

Every trial samples a fresh training set and one test pair from the model,
runs each requested algorithm on the same data and records hard Dice and
pixel error. Trials get independent seeds spawned from the root seed, so the
output does not depend on the worker count or on the order algorithms are
listed in the config.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from ._accel import n_workers
from .errors import ConfigError, ContractViolation
from .lattice import Neighborhood, PatchShape
from .metrics import hard_dice, mv_baseline, pixel_error_rate
from .models import load_model, model_from_dict, sample_pair, sample_training_set
from .multipoint import AdmmConfig, admm_segment
from .pointwise import PointwiseConfig, segment_pointwise

ALGORITHMS = ("mv", "nn", "wmv", "admm")

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_theta = {"oneOf": [{"type": "number", "minimum": 0}, {"const": "inf"}]}
_pointwise_params = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "patch_radius": {"type": "integer", "minimum": 0},
        "search_radius": {"type": "integer", "minimum": 0},
        "boundary": {"enum": ["clamp", "mirror"]},
        "theta": _theta,
    },
}
_admm_params = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "patch_radius": {"type": "integer", "minimum": 0},
        "label_patch_radius": {"type": "integer", "minimum": 0},
        "search_radius": {"type": "integer", "minimum": 0},
        "boundary": {"enum": ["clamp", "mirror"]},
        "gamma": {"type": "number", "exclusiveMinimum": 0},
        "alpha": {"type": "number", "minimum": 0},
        "beta": {"type": "number", "minimum": 0},
        "block_side": _pos_int,
        "max_iter": _pos_int,
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "step": {"type": "number", "exclusiveMinimum": 0},
        "inner_iters": _pos_int,
        "init": {"enum": ["wmv", "cold"]},
        "freeze_duals": {"type": "boolean"},
    },
}

EXPERIMENT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["n_train", "n_trials", "algorithms"],
    "oneOf": [{"required": ["model"]}, {"required": ["model_path"]}],
    "properties": {
        "model": {"type": "object"},
        "model_path": {"type": "string"},
        "n_train": _pos_int,
        "n_trials": _pos_int,
        "algorithms": {"type": "array", "items": {"enum": list(ALGORITHMS)}, "minItems": 1, "uniqueItems": True},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string"},
        "nn": _pointwise_params,
        "wmv": _pointwise_params,
        "admm": _admm_params,
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "required": ["train_index", "validation_index"],
            "properties": {
                "gamma": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "beta": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "alpha": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
                "search_radius": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "train_index": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                "validation_index": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
            },
        },
    },
}

POINTWISE_DEFAULTS = {"patch_radius": 2, "search_radius": 2, "boundary": "clamp"}
ADMM_DEFAULTS = {
    "patch_radius": 2,
    "label_patch_radius": 1,
    "search_radius": 2,
    "boundary": "clamp",
    "gamma": 1.0,
    "alpha": 0.0,
    "beta": 1.0,
    "block_side": 3,
    "max_iter": 50,
    "tol": 1e-3,
    "step": 0.1,
    "inner_iters": 10,
    "init": "wmv",
    "freeze_duals": False,
}


@dataclass
class ExperimentConfig:
    model: object
    n_train: int
    n_trials: int
    algorithms: tuple
    seed: int = 0
    output_dir: str | None = None
    nn: dict = field(default_factory=dict)
    wmv: dict = field(default_factory=dict)
    admm: dict = field(default_factory=dict)
    grid: dict | None = None

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | str = ".") -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, EXPERIMENT_SCHEMA)
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid experiment config: {exc.message}") from exc
        if "model" in doc:
            model = model_from_dict(doc["model"], base_dir)
        else:
            model = load_model(Path(base_dir) / doc["model_path"])
        return cls(
            model=model,
            n_train=doc["n_train"],
            n_trials=doc["n_trials"],
            algorithms=tuple(a for a in ALGORITHMS if a in doc["algorithms"]),
            seed=doc.get("seed", 0),
            output_dir=doc.get("output_dir"),
            nn={**POINTWISE_DEFAULTS, **doc.get("nn", {})},
            wmv={**POINTWISE_DEFAULTS, "theta": 1.0, **doc.get("wmv", {})},
            admm={**ADMM_DEFAULTS, **doc.get("admm", {})},
            grid=doc.get("grid"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(doc, path.parent)


def _theta(value) -> float:
    return math.inf if value == "inf" else float(value)


def pointwise_config(params: dict, ndim: int, nn: bool) -> PointwiseConfig:
    theta = math.inf if nn else _theta(params["theta"])
    return PointwiseConfig(
        Neighborhood.box(params["search_radius"]),
        PatchShape.box(params["patch_radius"], ndim, params["boundary"]),
        theta,
    )


def admm_config(params: dict, ndim: int) -> AdmmConfig:
    return AdmmConfig(
        neighborhood=Neighborhood.box(params["search_radius"]),
        intensity_patch=PatchShape.box(params["patch_radius"], ndim, params["boundary"]),
        label_patch=PatchShape.box(params["label_patch_radius"], ndim, params["boundary"]),
        gamma=float(params["gamma"]),
        alpha=float(params["alpha"]),
        beta=float(params["beta"]),
        block_side=int(params["block_side"]),
        max_iter=int(params["max_iter"]),
        tol=float(params["tol"]),
        step=float(params["step"]),
        inner_iters=int(params["inner_iters"]),
        init=params["init"],
        freeze_duals=bool(params["freeze_duals"]),
    )


def _suite_sources(side: int = 16) -> list:
    r, c = np.mgrid[:side, :side]
    mid = (side - 1) / 2.0
    disk = (r - mid) ** 2 + (c - mid) ** 2 <= 30
    rect = (r >= 3) & (r <= 12) & (c >= 4) & (c <= 10)
    ellipse = (r - 9) ** 2 / 25 + (c - 6) ** 2 / 12 <= 1
    return [np.where(m, 1, -1).tolist() for m in (disk, rect, ellipse)]


def standard_suite_doc(seed: int = 1) -> dict:
    """Synthetic comparison suite: three shapes on 16x16, 5% flips, sigma 0.5, n 20, 20 trials."""
    sources = [{"prob": 1.0 / 3.0, "labels": lab} for lab in _suite_sources()]
    pointwise = {"patch_radius": 2, "search_radius": 1}
    return {
        "model": {
            "kind": "latent_source",
            "sources": sources,
            "alpha": math.log(19.0),
            "distance": "hamming",
            "noise": {"family": "gaussian", "sigma": 0.5},
        },
        "n_train": 20,
        "n_trials": 20,
        "algorithms": list(ALGORITHMS),
        "seed": seed,
        "nn": pointwise,
        "wmv": {**pointwise, "theta": 0.5},
        "admm": {
            "patch_radius": 2,
            "label_patch_radius": 2,
            "search_radius": 1,
            "gamma": 4.0,
            "beta": 1e-4,
        },
    }


def standard_suite(seed: int = 1) -> ExperimentConfig:
    return ExperimentConfig.from_dict(standard_suite_doc(seed))


def run_algorithm(name: str, Y, train, cfg: ExperimentConfig, admm_params: dict | None = None):
    """Segment ``Y``; returns (labels, extra info dict)."""
    ndim = train.lattice.ndim
    if name == "mv":
        return mv_baseline(train), {}
    if name in ("nn", "wmv"):
        params = cfg.nn if name == "nn" else cfg.wmv
        return segment_pointwise(Y, train, pointwise_config(params, ndim, nn=name == "nn")), {}
    if name == "admm":
        res = admm_segment(Y, train, admm_config(admm_params or cfg.admm, ndim))
        return res.labels, {"converged": res.converged, "iterations": res.iterations, "diagnostics": res.diagnostics()}
    raise ContractViolation(f"unknown algorithm {name!r}")


def _run_trial(index: int, seed, cfg: ExperimentConfig, admm_params: dict):
    rng = np.random.default_rng(seed)
    rows, diag = [], []
    try:
        train = sample_training_set(cfg.model, cfg.n_train, rng)
        Y, truth = sample_pair(cfg.model, rng)
    except ContractViolation as exc:
        return [_failed_row(index, a, exc) for a in cfg.algorithms], diag
    for name in cfg.algorithms:
        try:
            labels, info = run_algorithm(name, Y, train, cfg, admm_params)
        except ContractViolation as exc:
            rows.append(_failed_row(index, name, exc))
            continue
        rows.append(
            {
                "trial": index,
                "algorithm": name,
                "dice": hard_dice(labels, truth),
                "pixel_error": pixel_error_rate(labels, truth),
                "converged": info.get("converged", ""),
                "iterations": info.get("iterations", ""),
                "status": "ok",
            }
        )
        for it, resid, obj in info.get("diagnostics", []):
            diag.append({"trial": index, "iteration": it, "residual": resid, "objective": obj})
    return rows, diag


def _failed_row(index, name, exc):
    return {
        "trial": index,
        "algorithm": name,
        "dice": math.nan,
        "pixel_error": math.nan,
        "converged": "",
        "iterations": "",
        "status": f"failed: {exc}",
    }


def grid_search(cfg: ExperimentConfig, seed) -> tuple[dict, list]:
    """Pick ADMM parameters maximizing mean validation Dice.

    A pool of pairs is sampled once; ``train_index`` selects the training
    subset and ``validation_index`` the pairs segmented with it.
    """
    grid = cfg.grid
    rng = np.random.default_rng(seed)
    idx_train = list(grid["train_index"])
    idx_val = list(grid["validation_index"])
    if set(idx_train) & set(idx_val):
        raise ConfigError("grid train and validation indices overlap")
    pool = sample_training_set(cfg.model, max(idx_train + idx_val) + 1, rng)
    train = pool.subset(idx_train)
    axes = {k: grid.get(k, [cfg.admm[k]]) for k in ("gamma", "beta", "alpha", "search_radius")}
    rows = []
    best, best_score = None, -math.inf
    for values in itertools.product(*axes.values()):
        params = {**cfg.admm, **dict(zip(axes, values))}
        acfg = admm_config(params, pool.lattice.ndim)
        dice = [hard_dice(admm_segment(pool.images[v], train, acfg).labels, pool.labels[v]) for v in idx_val]
        score = float(np.mean(dice))
        rows.append({**dict(zip(axes, values)), "mean_dice": score})
        if score > best_score:
            best, best_score = params, score
    return best, rows


@dataclass
class ExperimentResult:
    rows: list
    summary: dict
    diagnostics: list
    grid_rows: list = field(default_factory=list)

    @property
    def admm_never_converged(self) -> bool:
        flags = [r["converged"] for r in self.rows if r["algorithm"] == "admm" and r["status"] == "ok"]
        return bool(flags) and not any(flags)


def summarize(rows: list, algorithms) -> dict:
    summary = {}
    for name in algorithms:
        ok = [r for r in rows if r["algorithm"] == name and r["status"] == "ok"]
        dice = [r["dice"] for r in ok]
        err = [r["pixel_error"] for r in ok]
        entry = {"trials": len(ok), "failed": sum(1 for r in rows if r["algorithm"] == name) - len(ok)}
        if dice:
            mean = float(np.mean(dice))
            half = 1.96 * float(np.std(dice, ddof=1)) / math.sqrt(len(dice)) if len(dice) > 1 else 0.0
            entry.update(
                mean_dice=mean,
                median_dice=float(statistics.median(dice)),
                dice_ci=[mean - half, mean + half],
                mean_pixel_error=float(np.mean(err)),
            )
        if name == "admm" and ok:
            entry["converged_fraction"] = float(np.mean([bool(r["converged"]) for r in ok]))
        summary[name] = entry
    return summary


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    root = np.random.SeedSequence(cfg.seed)
    grid_seed, *trial_seeds = root.spawn(cfg.n_trials + 1)
    admm_params = cfg.admm
    grid_rows = []
    if cfg.grid is not None and "admm" in cfg.algorithms:
        admm_params, grid_rows = grid_search(cfg, grid_seed)

    workers = workers or n_workers()
    jobs = list(enumerate(trial_seeds))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(lambda job: _run_trial(job[0], job[1], cfg, admm_params), jobs))
    else:
        results = [_run_trial(i, s, cfg, admm_params) for i, s in jobs]
    rows = [r for trial_rows, _ in results for r in trial_rows]
    diagnostics = [d for _, trial_diag in results for d in trial_diag]
    summary = summarize(rows, cfg.algorithms)
    if grid_rows:
        summary["grid_best"] = {k: admm_params[k] for k in ("gamma", "beta", "alpha", "search_radius")}
    return ExperimentResult(rows, summary, diagnostics, grid_rows)


TRIAL_FIELDS = ("trial", "algorithm", "dice", "pixel_error", "converged", "iterations", "status")


def _write_csv(path: Path, rows: list, fields) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def write_results(result: ExperimentResult, out_dir) -> None:
    """Write trials.csv, summary.json and, when present, ADMM diagnostics and grid tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "trials.csv", result.rows, TRIAL_FIELDS)
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True))
    if result.diagnostics:
        _write_csv(out / "admm_diagnostics.csv", result.diagnostics, ("trial", "iteration", "residual", "objective"))
    if result.grid_rows:
        _write_csv(out / "grid.csv", result.grid_rows, tuple(result.grid_rows[0]))
