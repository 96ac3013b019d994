"""Pointwise nearest-neighbor and weighted majority voting segmentation.

Each pixel is labeled from its own intensity patch by an exhaustive scan over
training patches ``Y_u[j]`` for every training image ``u`` and every ``j`` in
the search neighborhood ``N(i)``. Ties are broken toward +1; the nearest
neighbor argmin is unique after ordering candidates by ``(u, flat j)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractViolation
from .lattice import Lattice, Neighborhood, PatchShape, extract_patches
from .models import TrainingSet

INFINITY = math.inf


@dataclass(frozen=True)
class PointwiseConfig:
    """Search neighborhood, intensity patch shape and vote scale ``theta``.

    ``theta = math.inf`` selects nearest-neighbor segmentation.
    """

    neighborhood: Neighborhood
    patch: PatchShape
    theta: float = INFINITY

    def __post_init__(self):
        if not (self.theta == INFINITY or (math.isfinite(self.theta) and self.theta >= 0)):
            raise ContractViolation("theta must be a finite nonnegative number or math.inf")

    @property
    def is_nn(self) -> bool:
        return self.theta == INFINITY


def default_theta(sigma: float) -> float:
    """Vote scale 1/(8 sigma^2) under which the error bound is stated."""
    if sigma <= 0:
        return INFINITY
    return 1.0 / (8.0 * sigma * sigma)


@dataclass(frozen=True)
class VotePair:
    """Weighted votes ``V+`` and ``V-`` in factored form.

    ``V = exp(log_scale) * scaled`` with ``log_scale = -theta * min distance``;
    comparisons use the scaled sums, which never underflow for the winner.
    """

    log_scale: float
    scaled_plus: float
    scaled_minus: float

    @property
    def v_plus(self) -> float:
        return math.exp(self.log_scale) * self.scaled_plus

    @property
    def v_minus(self) -> float:
        return math.exp(self.log_scale) * self.scaled_minus

    @property
    def label(self) -> int:
        return 1 if self.scaled_plus >= self.scaled_minus else -1


def _prepare(Y, train: TrainingSet, cfg: PointwiseConfig):
    lattice = train.lattice
    Y = lattice.check_image(Y)
    test = extract_patches(Y, cfg.patch)
    tr = np.stack([extract_patches(img, cfg.patch) for img in train.images])
    labels = train.labels.reshape(train.n, -1)
    nbr = cfg.neighborhood.table(lattice)
    if nbr.shape[1] == 0 or np.any(nbr[:, 0] < 0):
        raise ContractViolation("search neighborhood is empty for some pixel after clipping")
    return lattice, np.ascontiguousarray(test), np.ascontiguousarray(tr), np.ascontiguousarray(labels), nbr


def _one_pixel(lattice: Lattice, pixel, test, nbr):
    p = lattice.flat(pixel)
    return test[p : p + 1], nbr[p : p + 1]


def nn_label(pixel, Y, train: TrainingSet, cfg: PointwiseConfig):
    """Nearest-neighbor label at ``pixel`` and its argmin ``(u, j)``.

    ``j`` is returned as a coordinate tuple.
    """
    lattice, test, tr, labels, nbr = _prepare(Y, train, cfg)
    q, row = _one_pixel(lattice, pixel, test, nbr)
    out, bu, bj, _ = kernels.nn_scan(q, tr, labels, row)
    return int(out[0]), (int(bu[0]), lattice.unflat(bj[0]))


def wmv_votes(pixel, Y, train: TrainingSet, cfg: PointwiseConfig) -> VotePair:
    if cfg.is_nn:
        raise ContractViolation("wmv_votes needs a finite theta")
    lattice, test, tr, labels, nbr = _prepare(Y, train, cfg)
    q, row = _one_pixel(lattice, pixel, test, nbr)
    dmin, sp, sm = kernels.wmv_scan(q, tr, labels, row, float(cfg.theta))
    return VotePair(-cfg.theta * float(dmin[0]), float(sp[0]), float(sm[0]))


def vote_terms(pixel, Y, train: TrainingSet, cfg: PointwiseConfig):
    """Per-candidate squared distances and labels, in scan order (u, then j).

    Each vote term is ``exp(-theta * dist)``; exposed for checking the factored
    vote representation term by term.
    """
    lattice, test, tr, labels, nbr = _prepare(Y, train, cfg)
    p = lattice.flat(pixel)
    js = nbr[p][nbr[p] >= 0]
    diff = tr[:, js, :] - test[p][None, None, :]
    dist = np.einsum("ujt,ujt->uj", diff, diff).reshape(-1)
    return dist, labels[:, js].reshape(-1)


def wmv_label(pixel, Y, train: TrainingSet, cfg: PointwiseConfig) -> int:
    if cfg.is_nn:
        return nn_label(pixel, Y, train, cfg)[0]
    return wmv_votes(pixel, Y, train, cfg).label


def segment_pointwise(Y, train: TrainingSet, cfg: PointwiseConfig) -> np.ndarray:
    """Label every pixel independently; returns an int8 label image."""
    lattice, test, tr, labels, nbr = _prepare(Y, train, cfg)
    if cfg.is_nn:
        out = kernels.nn_scan(test, tr, labels, nbr)[0]
    else:
        _, sp, sm = kernels.wmv_scan(test, tr, labels, nbr, float(cfg.theta))
        out = np.where(sp >= sm, 1, -1).astype(np.int8)
    return out.reshape(lattice.dims)


def separation_gap(train: TrainingSet, neighborhood: Neighborhood, patch: PatchShape) -> float:
    """Smallest squared distance between training patches with different labels.

    Minimum over u, v, pixel i and j in N(i) with ``L_u(i) != L_v(j)`` of
    ``||Y_u[i] - Y_v[j]||^2``; ``math.inf`` when no such pair exists.
    """
    lattice = train.lattice
    tr = np.ascontiguousarray(np.stack([extract_patches(img, patch) for img in train.images]))
    labels = np.ascontiguousarray(train.labels.reshape(train.n, -1))
    return float(kernels.gap_scan(tr, labels, neighborhood.table(lattice)))
