"""Generative models for synthetic intensity/label image pairs.

Two models are provided:

* :class:`PointwiseModel` - every pixel carries its own mixture of
  (weight, mean, label) components plus sub-Gaussian noise. Sampling draws a
  component per pixel, writes the label and ``mean + noise`` as the pixel's
  intensity. The induced distribution of a patch ``Y[i]`` is again a diagonal
  sub-Gaussian mixture (see :func:`patch_mixture`), whose components are the
  configurations of site components under the patch.
* :class:`LatentSourceModel` - ``k`` canonical label images, each drawn with
  probability ``pi_g`` and perturbed pixelwise with Hamming strength ``alpha``;
  intensities are ``intensity_map[label] + noise``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError, ContractViolation
from .lattice import Lattice, Neighborhood, PatchShape

NOISE_FAMILIES = ("gaussian", "uniform")
DISTANCE_KINDS = ("hamming", "one_minus_soft_dice")
WEIGHT_TOL = 1e-9
MEAN_TOL = 1e-12


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean i.i.d. noise, sub-Gaussian with parameter ``sigma``.

    ``gaussian`` draws N(0, sigma^2); ``uniform`` draws Uniform[-sigma, sigma].
    """

    family: str = "gaussian"
    sigma: float = 1.0

    def __post_init__(self):
        if self.family not in NOISE_FAMILIES:
            raise ContractViolation(f"noise family must be one of {NOISE_FAMILIES}")
        if not self.sigma >= 0 or not math.isfinite(self.sigma):
            raise ContractViolation("noise sigma must be finite and nonnegative")

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if self.family == "gaussian":
            return rng.normal(0.0, self.sigma, size=shape)
        return rng.uniform(-self.sigma, self.sigma, size=shape)


@dataclass(frozen=True)
class MixtureComponent:
    weight: float
    mean: tuple[float, ...]
    label: int

    def __post_init__(self):
        mean = tuple(float(m) for m in np.atleast_1d(self.mean))
        object.__setattr__(self, "mean", mean)
        if not 0 < self.weight <= 1 + WEIGHT_TOL:
            raise ContractViolation(f"component weight must lie in (0, 1], got {self.weight}")
        if self.label not in (1, -1):
            raise ContractViolation(f"component label must be +1 or -1, got {self.label}")


@dataclass(frozen=True)
class PixelMixtureModel:
    components: tuple[MixtureComponent, ...]
    noise: NoiseSpec

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ContractViolation("a mixture needs at least one component")
        if len({len(c.mean) for c in comps}) != 1:
            raise ContractViolation("component means must share one length")
        total = sum(c.weight for c in comps)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ContractViolation(f"component weights sum to {total}, expected 1")
        object.__setattr__(self, "components", comps)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return len(self.components[0].mean)


@dataclass(frozen=True, eq=False)
class PointwiseModel:
    """Per-pixel mixture model over a lattice.

    ``sites[p]`` is the scalar-mean mixture at flat pixel ``p``. ``patch`` is
    the intensity patch shape whose induced mixtures the jigsaw condition and
    the error bound refer to; ``jigsaw`` is the declared neighborhood N*.
    """

    lattice: Lattice
    patch: PatchShape
    sites: tuple[PixelMixtureModel, ...]
    rho_min: float
    jigsaw: Neighborhood
    noise: NoiseSpec

    def __post_init__(self):
        if len(self.sites) != self.lattice.size:
            raise ContractViolation("need exactly one site mixture per pixel")
        if any(s.dim != 1 for s in self.sites):
            raise ContractViolation("site mixtures carry scalar means")
        if not 0 < self.rho_min <= 1:
            raise ContractViolation("rho_min must lie in (0, 1]")
        object.__setattr__(self, "_tables", _site_tables(self.sites))
        # the declared rho_min must lower-bound every induced patch weight
        if self.min_patch_weight() < self.rho_min - WEIGHT_TOL:
            raise ContractViolation(
                f"declared rho_min {self.rho_min} exceeds smallest patch component weight {self.min_patch_weight()}"
            )

    @property
    def c_max(self) -> int:
        return max(patch_mixture(self, p).n_components for p in range(self.lattice.size))

    def min_patch_weight(self) -> float:
        return _min_patch_weight(self.lattice, self.patch, self.sites)


def _min_patch_weight(lattice, patch, sites) -> float:
    # smallest configuration weight: product of each distinct site's smallest weight
    site_min = np.array([min(c.weight for c in s.components) for s in sites])
    table = patch.index_table(lattice)
    return float(min(np.prod(site_min[np.unique(row)]) for row in table))


def _site_tables(sites):
    cmax = max(s.n_components for s in sites)
    P = len(sites)
    weights = np.zeros((P, cmax))
    means = np.zeros((P, cmax))
    labels = np.ones((P, cmax), dtype=np.int8)
    counts = np.zeros(P, dtype=np.int64)
    for p, site in enumerate(sites):
        counts[p] = site.n_components
        for c, comp in enumerate(site.components):
            weights[p, c] = comp.weight
            means[p, c] = comp.mean[0]
            labels[p, c] = comp.label
    return weights, means, labels, counts


PATCH_MIXTURE_LIMIT = 100_000


def patch_mixture(model: PointwiseModel, pixel: int) -> PixelMixtureModel:
    """Mixture followed by the patch ``Y[pixel]`` under the site model.

    Components are the joint configurations of the site components under the
    patch; configurations with equal (mean vector, center label) are merged.
    """
    table = model.patch.index_table(model.lattice)[pixel]
    zero = (0,) * model.lattice.ndim
    if zero not in model.patch.offsets:
        raise ContractViolation("patch shape must contain the zero offset to define a center label")
    center = int(table[model.patch.offsets.index(zero)])
    # entries that resolve to the same site share one draw
    unique_sites = list(dict.fromkeys(int(q) for q in table))
    n_configs = math.prod(len(model.sites[q].components) for q in unique_sites)
    if n_configs > PATCH_MIXTURE_LIMIT:
        raise ContractViolation(f"patch mixture at pixel {pixel} has {n_configs} configurations")
    merged: dict[tuple, float] = {}
    for choice in product(*(range(len(model.sites[q].components)) for q in unique_sites)):
        pick = dict(zip(unique_sites, choice))
        w = 1.0
        for q in unique_sites:
            w *= model.sites[q].components[pick[q]].weight
        mean = tuple(model.sites[q].components[pick[q]].mean[0] for q in table)
        label = model.sites[center].components[pick[center]].label
        merged[(mean, label)] = merged.get((mean, label), 0.0) + w
    comps = tuple(MixtureComponent(w, mean, label) for (mean, label), w in merged.items())
    return PixelMixtureModel(comps, model.noise)


@dataclass(frozen=True, eq=False)
class LatentSourceModel:
    """Canonical label images with Hamming perturbation and a label-to-intensity map."""

    sources: np.ndarray  # (k, *dims) int8
    probs: np.ndarray  # (k,)
    alpha: float
    noise: NoiseSpec
    intensity_map: dict = field(default_factory=lambda: {1: 1.0, -1: 0.0})
    distance: str = "hamming"
    label_patch: PatchShape | None = None

    def __post_init__(self):
        src = np.asarray(self.sources)
        if src.ndim < 2:
            raise ContractViolation("sources must be an array of label images (k, *dims)")
        if not np.all((src == 1) | (src == -1)):
            raise ContractViolation("latent label images must contain only +1/-1")
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.shape != (src.shape[0],) or np.any(probs < 0) or abs(probs.sum() - 1) > WEIGHT_TOL:
            raise ContractViolation("source probabilities must be nonnegative, one per source, summing to 1")
        if not self.alpha >= 0:
            raise ContractViolation("alpha must be nonnegative")
        if self.distance not in DISTANCE_KINDS:
            raise ContractViolation(f"distance must be one of {DISTANCE_KINDS}")
        imap = {int(k): float(v) for k, v in self.intensity_map.items()}
        if set(imap) != {1, -1}:
            raise ContractViolation("intensity map needs entries for +1 and -1")
        object.__setattr__(self, "sources", src.astype(np.int8))
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "intensity_map", imap)

    @property
    def k(self) -> int:
        return self.sources.shape[0]

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.sources.shape[1:])

    @property
    def flip_probability(self) -> float:
        return float(expit(-self.alpha))


@dataclass(frozen=True, eq=False)
class TrainingSet:
    images: np.ndarray  # (n, *dims) float64
    labels: np.ndarray  # (n, *dims) int8

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float64)
        labels = np.asarray(self.labels)
        if images.ndim < 2 or images.shape[0] < 1:
            raise ContractViolation("training set needs at least one pair")
        if images.shape != labels.shape:
            raise ContractViolation("training images and labels must share one lattice")
        if not np.all((labels == 1) | (labels == -1)):
            raise ContractViolation("training labels must be +1/-1")
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels.astype(np.int8))

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.images.shape[1:])

    def subset(self, index) -> "TrainingSet":
        index = np.asarray(index, dtype=np.int64)
        return TrainingSet(self.images[index], self.labels[index])

    def __len__(self):
        return self.n


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------


def sample_pointwise_pair(model: PointwiseModel, rng: np.random.Generator):
    """Draw one (intensity, label) image pair from a pointwise model."""
    weights, means, labels, counts = model._tables
    P = model.lattice.size
    cum = np.cumsum(weights, axis=1)
    draw = rng.random(P)
    comp = (draw[:, None] >= cum).sum(axis=1)
    comp = np.minimum(comp, counts - 1)
    rows = np.arange(P)
    label = labels[rows, comp]
    image = means[rows, comp] + model.noise.sample(rng, P)
    return image.reshape(model.lattice.dims), label.reshape(model.lattice.dims).astype(np.int8)


def sample_latent_source_pair(model: LatentSourceModel, rng: np.random.Generator):
    """Draw (intensity, label, source index) from a latent source model."""
    if model.distance != "hamming":
        raise ContractViolation("exact perturbation sampling is only available for the hamming distance")
    g = int(rng.choice(model.k, p=model.probs))
    base = model.sources[g]
    flips = rng.random(base.shape) < model.flip_probability
    label = np.where(flips, -base, base).astype(np.int8)
    image = np.where(label > 0, model.intensity_map[1], model.intensity_map[-1])
    image = image + model.noise.sample(rng, base.shape)
    return image, label, g


def sample_pair(model, rng: np.random.Generator):
    if isinstance(model, LatentSourceModel):
        image, label, _ = sample_latent_source_pair(model, rng)
        return image, label
    return sample_pointwise_pair(model, rng)


def sample_training_set(model, n: int, rng: np.random.Generator) -> TrainingSet:
    if n < 1:
        raise ContractViolation("training set size must be at least 1")
    pairs = [sample_pair(model, rng) for _ in range(n)]
    return TrainingSet(np.stack([p[0] for p in pairs]), np.stack([p[1] for p in pairs]))


# ---------------------------------------------------------------------------
# jigsaw condition and block construction
# ---------------------------------------------------------------------------


@dataclass
class JigsawReport:
    holds: bool
    violations: list = field(default_factory=list)


def verify_jigsaw(model: PointwiseModel) -> JigsawReport:
    """Check every patch component at i appears at some j in N*(i).

    A match needs the same mean (each entry within 1e-12), the same label and
    weight at least ``rho_min`` at pixel j. Violations are (pixel, component
    index) with the component index into ``patch_mixture(model, pixel)``.
    """
    P = model.lattice.size
    mixtures = [patch_mixture(model, p) for p in range(P)]
    table = model.jigsaw.table(model.lattice)
    violations = []
    for p in range(P):
        neighbors = [int(j) for j in table[p] if j >= 0]
        for c, comp in enumerate(mixtures[p].components):
            mean = np.asarray(comp.mean)
            found = False
            for j in neighbors:
                for other in mixtures[j].components:
                    if (
                        other.label == comp.label
                        and other.weight >= model.rho_min - WEIGHT_TOL
                        and np.all(np.abs(np.asarray(other.mean) - mean) <= MEAN_TOL)
                    ):
                        found = True
                        break
                if found:
                    break
            if not found:
                violations.append((p, c))
    return JigsawReport(not violations, violations)


def build_block_model(
    lattice: Lattice,
    block_side: int,
    tables: Sequence[Sequence[tuple[float, float, int]]],
    noise: NoiseSpec,
    patch: PatchShape | None = None,
    jigsaw_radius: int | None = None,
) -> PointwiseModel:
    """Block-constant pointwise model.

    Pixels are grouped into blocks of side ``block_side`` per axis (row-major
    block numbering); ``tables[b]`` lists the ``(weight, mean, label)``
    components shared by every pixel of block ``b``. N* defaults to the
    centered box of radius ``block_side`` and ``rho_min`` to the smallest
    induced patch weight.
    """
    if block_side < 1:
        raise ContractViolation("block side must be at least 1")
    if not tables or any(len(t) == 0 for t in tables):
        raise ContractViolation("every block needs a nonempty component table")
    patch = patch or PatchShape.single(lattice.ndim)
    grid = tuple(-(-s // block_side) for s in lattice.dims)
    n_blocks = math.prod(grid)
    if len(tables) != n_blocks:
        raise ContractViolation(f"lattice {lattice.dims} with block side {block_side} has {n_blocks} blocks, got {len(tables)} tables")
    mixtures = [
        PixelMixtureModel(tuple(MixtureComponent(float(w), (float(m),), int(lab)) for w, m, lab in table), noise)
        for table in tables
    ]
    sites = tuple(mixtures[b] for b in block_index(lattice, block_side))
    radius = block_side if jigsaw_radius is None else jigsaw_radius
    jigsaw = Neighborhood.box(radius)
    rho_min = _min_patch_weight(lattice, patch, sites)
    return PointwiseModel(lattice, patch, sites, rho_min, jigsaw, noise)


def block_index(lattice: Lattice, block_side: int) -> np.ndarray:
    """Row-major block id of every pixel for blocks of side ``block_side``."""
    grid = tuple(-(-s // block_side) for s in lattice.dims)
    return np.ravel_multi_index(tuple((lattice.coords() // block_side).T), grid).astype(np.int64)


# ---------------------------------------------------------------------------
# JSON model documents
# ---------------------------------------------------------------------------


def _patch_from_doc(doc, ndim, default=None) -> PatchShape:
    if doc is None:
        return default or PatchShape.single(ndim)
    boundary = doc.get("boundary", "clamp")
    if "offsets" in doc:
        return PatchShape(tuple(map(tuple, doc["offsets"])), boundary)
    return PatchShape.box(doc.get("radius", 0), ndim, boundary)


def _patch_to_doc(shape: PatchShape) -> dict:
    return {"offsets": [list(o) for o in shape.offsets], "boundary": shape.boundary}


def _noise_from_doc(doc) -> NoiseSpec:
    return NoiseSpec(doc.get("family", "gaussian"), float(doc.get("sigma", 1.0)))


def model_from_dict(doc: dict, base_dir: Path | str = ".") -> PointwiseModel | LatentSourceModel:
    """Build a model from its JSON document; see README for the schema."""
    from .io import read_image

    try:
        kind = doc["kind"]
        if kind == "pointwise":
            lattice = Lattice(tuple(doc["dims"]))
            noise = _noise_from_doc(doc.get("noise", {}))
            patch = _patch_from_doc(doc.get("patch"), lattice.ndim)
            if "blocks" in doc:
                blocks = doc["blocks"]
                model = build_block_model(
                    lattice,
                    int(blocks["side"]),
                    [[(c["weight"], c["mean"], c["label"]) for c in t] for t in blocks["tables"]],
                    noise,
                    patch=patch,
                    jigsaw_radius=doc.get("jigsaw", {}).get("radius"),
                )
                if "rho_min" in doc or "offsets" in doc.get("jigsaw", {}):
                    jig = doc.get("jigsaw", {})
                    jigsaw = Neighborhood.explicit(jig["offsets"]) if "offsets" in jig else model.jigsaw
                    model = PointwiseModel(lattice, patch, model.sites, float(doc.get("rho_min", model.rho_min)), jigsaw, noise)
                return model
            sites = tuple(
                PixelMixtureModel(tuple(MixtureComponent(c["weight"], (c["mean"],), c["label"]) for c in comps), noise)
                for comps in doc["sites"]
            )
            jig = doc["jigsaw"]
            jigsaw = Neighborhood.explicit(jig["offsets"]) if "offsets" in jig else Neighborhood.box(jig["radius"])
            return PointwiseModel(lattice, patch, sites, float(doc["rho_min"]), jigsaw, noise)
        if kind == "latent_source":
            images = []
            for src in doc["sources"]:
                if "image" in src:
                    arr, _ = read_image(Path(base_dir) / src["image"])
                    images.append(arr)
                else:
                    images.append(np.asarray(src["labels"], dtype=np.int8))
            probs = [float(s["prob"]) for s in doc["sources"]]
            imap = doc.get("intensity_map", {"+1": 1.0, "-1": 0.0})
            ndim = images[0].ndim
            return LatentSourceModel(
                np.stack(images),
                np.asarray(probs),
                float(doc["alpha"]) if doc["alpha"] != "inf" else math.inf,
                _noise_from_doc(doc.get("noise", {})),
                {int(k): float(v) for k, v in imap.items()},
                doc.get("distance", "hamming"),
                _patch_from_doc(doc.get("label_patch"), ndim),
            )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed model document: {exc!r}") from exc
    raise ConfigError(f"unknown model kind {doc.get('kind')!r}")


def model_to_dict(model) -> dict:
    """Inverse of :func:`model_from_dict` (latent images are written inline)."""
    if isinstance(model, LatentSourceModel):
        return {
            "kind": "latent_source",
            "sources": [{"prob": float(p), "labels": s.tolist()} for s, p in zip(model.sources, model.probs)],
            "alpha": "inf" if math.isinf(model.alpha) else model.alpha,
            "distance": model.distance,
            "intensity_map": {"+1": model.intensity_map[1], "-1": model.intensity_map[-1]},
            "noise": {"family": model.noise.family, "sigma": model.noise.sigma},
            "label_patch": _patch_to_doc(model.label_patch or PatchShape.single(model.lattice.ndim)),
        }
    jig = model.jigsaw
    return {
        "kind": "pointwise",
        "dims": list(model.lattice.dims),
        "patch": _patch_to_doc(model.patch),
        "noise": {"family": model.noise.family, "sigma": model.noise.sigma},
        "rho_min": model.rho_min,
        "jigsaw": {"offsets": [list(o) for o in jig.offsets]} if jig.offsets is not None else {"radius": jig.radius},
        "sites": [
            [{"weight": c.weight, "mean": c.mean[0], "label": c.label} for c in site.components] for site in model.sites
        ],
    }


def load_model(path) -> PointwiseModel | LatentSourceModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read model {path}: {exc}") from exc
    return model_from_dict(doc, path.parent)


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model), indent=2))
