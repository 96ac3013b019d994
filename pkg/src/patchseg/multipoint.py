"""Multipoint segmentation by ADMM over local label-patch estimates.

The segmenter maximizes

    F(L; alpha) + (1/|I|) sum_i log p~(Y[i] | xi_i) - (beta/2) sum_i ||L[i] - xi_i||^2

over a relaxed label image ``L`` in [-1, 1] and local label patches ``xi_i``,
subject to ``L[i] = xi_i``, using scaled-form ADMM:

1. xi-step: each ``xi_i`` is picked from its block's candidate label patches,
   maximizing the KDE log score minus the coupling penalty (independent per
   pixel).
2. L-step: merge overlapping estimates. With ``alpha = 0`` this is the
   clipped average of ``xi_i - u_i`` over all patches covering a pixel;
   otherwise projected gradient ascent with backtracking.
3. dual step: ``u_i += L[i] - xi_i``.

``F(L; alpha) = log((1/n) sum_u exp(-alpha d(L, L_u)))`` uses the training
label images as proxies for the latent ones, with ``d = 1 - soft Dice``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp, softmax

from . import kernels
from .errors import ContractViolation
from .lattice import Lattice, Neighborhood, PatchShape, extract_patches
from .models import TrainingSet, block_index
from .pointwise import PointwiseConfig, segment_pointwise


def binarize(L) -> np.ndarray:
    """Threshold a relaxed label image at 0; exact zeros go to +1."""
    return np.where(np.asarray(L) >= 0, 1, -1).astype(np.int8)


# ---------------------------------------------------------------------------
# relaxed Dice and the proxy objective
# ---------------------------------------------------------------------------


def soft_dice(L, Lam) -> float:
    """Dice overlap of relaxed label images with values in [-1, 1].

    Both images entirely -1 (empty foregrounds) gives 1.
    """
    Lt = (np.asarray(L, dtype=np.float64).ravel() + 1.0) / 2.0
    Mt = (np.asarray(Lam, dtype=np.float64).ravel() + 1.0) / 2.0
    if Lt.shape != Mt.shape:
        raise ContractViolation("soft_dice needs images on the same lattice")
    den = np.dot(Lt, Lt) + np.dot(Mt, Mt)
    if den == 0.0:
        return 1.0
    return float(2.0 * np.dot(Lt, Mt) / den)


def soft_dice_grad(L, Lam) -> np.ndarray:
    """Gradient of :func:`soft_dice` with respect to ``L`` (same shape as ``L``)."""
    L = np.asarray(L, dtype=np.float64)
    Lt = (L.ravel() + 1.0) / 2.0
    Mt = (np.asarray(Lam, dtype=np.float64).ravel() + 1.0) / 2.0
    den = np.dot(Lt, Lt) + np.dot(Mt, Mt)
    if den == 0.0:
        return np.zeros_like(L)
    a = np.dot(Lt, Mt)
    g = (2.0 * Mt * den - 4.0 * a * Lt) / (den * den)
    return (0.5 * g).reshape(L.shape)


def label_distance(L, Lu, kind: str = "one_minus_soft_dice") -> float:
    if kind == "one_minus_soft_dice":
        return 1.0 - soft_dice(L, Lu)
    if kind == "hamming":
        # fraction of disagreeing pixels; |L - Lu| / 2 for relaxed values
        return float(np.mean(np.abs(np.asarray(L, float) - np.asarray(Lu, float))) / 2.0)
    raise ContractViolation(f"unknown distance kind {kind!r}")


def _distances(L, train_labels, kind):
    return np.array([label_distance(L, Lu, kind) for Lu in train_labels])


def proxy_objective_F(L, train_labels, alpha: float, kind: str = "one_minus_soft_dice") -> float:
    if len(train_labels) < 1:
        raise ContractViolation("proxy objective needs at least one training label image")
    if alpha == 0:
        return 0.0
    d = _distances(L, train_labels, kind)
    return float(logsumexp(-alpha * d) - math.log(len(d)))


def proxy_weights(L, train_labels, alpha: float, kind: str = "one_minus_soft_dice") -> np.ndarray:
    """Softmax weights ``w_u`` proportional to ``exp(-alpha d(L, L_u))``."""
    return softmax(-alpha * _distances(L, train_labels, kind))


def proxy_objective_grad(L, train_labels, alpha: float, kind: str = "one_minus_soft_dice") -> np.ndarray:
    L = np.asarray(L, dtype=np.float64)
    if alpha == 0:
        return np.zeros_like(L)
    if kind != "one_minus_soft_dice":
        raise ContractViolation("proxy objective gradient needs the differentiable soft Dice distance")
    w = proxy_weights(L, train_labels, alpha, kind)
    grad = np.zeros_like(L)
    for wu, Lu in zip(w, train_labels):
        # d = 1 - dice, so -alpha * grad d = alpha * grad dice
        grad += wu * soft_dice_grad(L, Lu)
    return alpha * grad


# ---------------------------------------------------------------------------
# KDE patch prior
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KdePatchPrior:
    """Block-shared kernel density estimate of intensity patches per label patch.

    Entries of block ``b`` live in ``entry_*[block_ptr[b]:block_ptr[b+1]]``;
    ``cand_patch[b, :block_ncand[b]]`` are its distinct label patches in
    canonical order (lexicographically descending, so +1 sorts first).
    """

    lattice: Lattice
    gamma: float
    neighborhood: Neighborhood
    intensity_patch: PatchShape
    label_patch: PatchShape
    block_side: int
    pix_block: np.ndarray
    block_ptr: np.ndarray
    entry_patch: np.ndarray
    entry_cand: np.ndarray
    block_ncand: np.ndarray
    cand_patch: np.ndarray

    @property
    def n_blocks(self) -> int:
        return len(self.block_ncand)

    def candidates(self, block: int) -> np.ndarray:
        return self.cand_patch[block, : self.block_ncand[block]]

    def scores(self, Y) -> np.ndarray:
        """KDE log score of every candidate at every pixel, shape (P, cmax)."""
        Y = self.lattice.check_image(Y)
        test = np.ascontiguousarray(extract_patches(Y, self.intensity_patch))
        return kernels.kde_scores(
            test,
            self.pix_block,
            self.block_ptr,
            self.entry_patch,
            self.entry_cand,
            self.block_ncand,
            self.cand_patch.shape[1],
            float(self.gamma),
        )


def build_kde_prior(
    train: TrainingSet,
    gamma: float,
    neighborhood: Neighborhood,
    intensity_patch: PatchShape,
    label_patch: PatchShape,
    block_side: int = 3,
) -> KdePatchPrior:
    """Pool ``(Y_u[j], L_u[j])`` over u and over j in the union of N(p), p in the block."""
    if gamma <= 0:
        raise ContractViolation("KDE bandwidth parameter gamma must be positive")
    if block_side < 1:
        raise ContractViolation("block side must be at least 1")
    lattice = train.lattice
    ypatch = np.stack([extract_patches(img, intensity_patch) for img in train.images])
    lpatch = np.stack([extract_patches(lab, label_patch) for lab in train.labels]).astype(np.int8)
    pix_block = block_index(lattice, block_side)
    nbr = neighborhood.table(lattice)
    n_blocks = int(pix_block.max()) + 1

    ptr = [0]
    patches, cands, ncand, cand_lists = [], [], [], []
    for b in range(n_blocks):
        rows = nbr[pix_block == b]
        pool = np.unique(rows[rows >= 0])
        if pool.size == 0:
            raise ContractViolation(f"block {b} has an empty KDE pool")
        yl = ypatch[:, pool, :].reshape(-1, ypatch.shape[-1])
        ll = lpatch[:, pool, :].reshape(-1, lpatch.shape[-1])
        uniq, inverse = np.unique(-ll, axis=0, return_inverse=True)
        patches.append(yl)
        cands.append(inverse.reshape(-1))
        cand_lists.append(-uniq)
        ncand.append(len(uniq))
        ptr.append(ptr[-1] + len(yl))

    cmax = max(ncand)
    cand_patch = np.zeros((n_blocks, cmax, label_patch.d), dtype=np.float64)
    for b, c in enumerate(cand_lists):
        cand_patch[b, : len(c)] = c
    return KdePatchPrior(
        lattice=lattice,
        gamma=float(gamma),
        neighborhood=neighborhood,
        intensity_patch=intensity_patch,
        label_patch=label_patch,
        block_side=block_side,
        pix_block=pix_block,
        block_ptr=np.asarray(ptr, dtype=np.int64),
        entry_patch=np.ascontiguousarray(np.concatenate(patches)),
        entry_cand=np.concatenate(cands).astype(np.int64),
        block_ncand=np.asarray(ncand, dtype=np.int64),
        cand_patch=cand_patch,
    )


def kde_log_score(Yp, xi, prior: KdePatchPrior, block: int) -> float:
    """``log sum exp(-gamma ||Yp - Y_u[j]||^2)`` over entries whose label patch is ``xi``.

    The Gaussian normalizer is dropped. Returns ``-inf`` if ``xi`` is not a
    candidate of ``block``.
    """
    cands = prior.candidates(block)
    match = np.flatnonzero(np.all(cands == np.asarray(xi, dtype=np.float64)[None, :], axis=1))
    if match.size == 0:
        return -math.inf
    lo, hi = prior.block_ptr[block], prior.block_ptr[block + 1]
    sel = prior.entry_patch[lo:hi][prior.entry_cand[lo:hi] == match[0]]
    diff = sel - np.asarray(Yp, dtype=np.float64)[None, :]
    return float(logsumexp(-prior.gamma * np.einsum("et,et->e", diff, diff)))


# ---------------------------------------------------------------------------
# ADMM
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AdmmConfig:
    """Parameters of the multipoint segmenter.

    ``init`` is ``"wmv"`` (binarized pointwise WMV with theta = gamma) or
    ``"cold"`` (all -1). ``freeze_duals`` keeps the multipliers at zero.
    """

    neighborhood: Neighborhood
    intensity_patch: PatchShape
    label_patch: PatchShape
    gamma: float = 1.0
    alpha: float = 0.0
    beta: float = 1.0
    block_side: int = 3
    max_iter: int = 50
    tol: float = 1e-3
    step: float = 0.1
    inner_iters: int = 10
    distance: str = "one_minus_soft_dice"
    init: str = "wmv"
    freeze_duals: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.beta < 0 or self.alpha < 0:
            raise ContractViolation("alpha and beta must be nonnegative")
        if self.gamma <= 0:
            raise ContractViolation("gamma must be positive")
        if self.tol <= 0 or self.max_iter < 1 or self.step <= 0 or self.inner_iters < 1:
            raise ContractViolation("tol, max_iter, step and inner_iters must be positive")
        if self.init not in ("wmv", "cold"):
            raise ContractViolation("init must be 'wmv' or 'cold'")


@dataclass
class AdmmState:
    L: np.ndarray  # (P,) relaxed labels in [-1, 1]
    xi: np.ndarray  # (P, d') current local estimates
    cand: np.ndarray  # (P,) candidate index of xi within its block
    u: np.ndarray  # (P, d') scaled duals
    table: np.ndarray  # (P, d') flat pixel of each label patch entry
    alpha: float
    beta: float
    iteration: int = 0

    def primal_residual(self) -> float:
        return float(np.max(np.abs(self.L[self.table] - self.xi)))


def init_state(L0, cfg: AdmmConfig, lattice: Lattice) -> AdmmState:
    table = cfg.label_patch.index_table(lattice)
    L = np.clip(np.asarray(L0, dtype=np.float64).reshape(-1), -1.0, 1.0)
    xi = L[table].copy()
    return AdmmState(
        L=L,
        xi=xi,
        cand=np.full(lattice.size, -1, dtype=np.int64),
        u=np.zeros_like(xi),
        table=table,
        alpha=cfg.alpha,
        beta=cfg.beta,
    )


def xi_update(state: AdmmState, Y, prior: KdePatchPrior, cfg: AdmmConfig, scores=None) -> AdmmState:
    """Pick each xi_i maximizing score/|I| - (beta/2)||xi - (L[i] + u_i)||^2.

    Ties go to the smallest canonical candidate index. ``scores`` may carry
    precomputed ``prior.scores(Y)``.
    """
    if scores is None:
        scores = prior.scores(Y)
    target = np.ascontiguousarray(state.L[state.table] + state.u)
    idx = kernels.xi_argmax(
        scores,
        prior.pix_block,
        prior.cand_patch,
        prior.block_ncand,
        target,
        1.0 / prior.lattice.size,
        state.beta / 2.0,
    )
    xi = prior.cand_patch[prior.pix_block, idx]
    return replace(state, xi=xi, cand=idx)


def _cover(state: AdmmState, P: int):
    v = state.xi - state.u
    flat = state.table.ravel()
    count = np.bincount(flat, minlength=P).astype(np.float64)
    total = np.bincount(flat, weights=v.ravel(), minlength=P)
    return count, total


def merge_objective(L, state: AdmmState, train_labels, cfg: AdmmConfig) -> float:
    """F(L; alpha) - (beta/2) sum_i ||L[i] - xi_i + u_i||^2."""
    resid = L[state.table] - state.xi + state.u
    F = proxy_objective_F(L.reshape(train_labels.shape[1:]), train_labels, state.alpha, cfg.distance)
    return F - 0.5 * state.beta * float(np.sum(resid * resid))


# objective changes below this (relative) level are floating-point noise
_ROUNDING = 1e-13


def merge_update_L(
    state: AdmmState,
    train_labels,
    cfg: AdmmConfig,
    method: str = "auto",
    inner_iters: int | None = None,
    inner_tol: float = 0.0,
) -> AdmmState:
    """Merge local estimates into a consistent relaxed label image.

    ``method="auto"`` uses the covering-average closed form when alpha is 0
    and projected gradient ascent otherwise; ``"gradient"`` forces the latter.
    Gradient steps that decrease the objective (beyond rounding noise) are
    retried with half the step.
    """
    train_labels = np.asarray(train_labels)
    P = state.L.size
    count, total = _cover(state, P)
    covered = count > 0
    if method == "auto" and state.alpha == 0:
        L = state.L.copy()
        L[covered] = np.clip(total[covered] / count[covered], -1.0, 1.0)
        return replace(state, L=L)

    shape = train_labels.shape[1:]
    L = state.L.copy()
    eta = cfg.step
    J = merge_objective(L, state, train_labels, cfg)
    for _ in range(inner_iters or cfg.inner_iters):
        grad = proxy_objective_grad(L.reshape(shape), train_labels, state.alpha, cfg.distance).reshape(-1)
        grad = grad - state.beta * (count * L - total)
        slack = _ROUNDING * max(1.0, abs(J))
        for _ in range(60):
            cand = np.clip(L + eta * grad, -1.0, 1.0)
            Jc = merge_objective(cand, state, train_labels, cfg)
            if Jc >= J - slack:
                break
            eta *= 0.5
        else:
            break
        change = float(np.max(np.abs(cand - L)))
        L, J = cand, Jc
        if change <= inner_tol:
            break
    return replace(state, L=L)


def dual_update(state: AdmmState) -> AdmmState:
    return replace(state, u=state.u + state.L[state.table] - state.xi)


@dataclass
class AdmmResult:
    labels: np.ndarray
    relaxed: np.ndarray
    converged: bool
    iterations: int
    residuals: list = field(default_factory=list)
    objectives: list = field(default_factory=list)

    def diagnostics(self):
        """Rows (iteration, primal residual, objective) for CSV output."""
        return [(k + 1, r, o) for k, (r, o) in enumerate(zip(self.residuals, self.objectives))]


def admm_objective(state: AdmmState, scores, train_labels, cfg: AdmmConfig) -> float:
    P = state.L.size
    F = proxy_objective_F(state.L.reshape(np.asarray(train_labels).shape[1:]), train_labels, state.alpha, cfg.distance)
    epll = float(np.sum(scores[np.arange(P), state.cand])) / P
    resid = state.L[state.table] - state.xi
    return F + epll - 0.5 * state.beta * float(np.sum(resid * resid))


def admm_segment(Y, train: TrainingSet, cfg: AdmmConfig, prior: KdePatchPrior | None = None) -> AdmmResult:
    """Run ADMM from the configured initialization; returns the best iterate.

    The best iterate is the one with the smallest primal residual. ``converged``
    reports whether the residual reached ``cfg.tol`` within ``cfg.max_iter``.
    """
    lattice = train.lattice
    Y = lattice.check_image(Y)
    if prior is None:
        prior = build_kde_prior(train, cfg.gamma, cfg.neighborhood, cfg.intensity_patch, cfg.label_patch, cfg.block_side)
    scores = prior.scores(Y)
    if cfg.init == "wmv":
        L0 = segment_pointwise(Y, train, PointwiseConfig(cfg.neighborhood, cfg.intensity_patch, cfg.gamma))
    else:
        L0 = -np.ones(lattice.dims)
    state = init_state(L0, cfg, lattice)
    train_labels = train.labels.astype(np.float64)

    residuals, objectives = [], []
    best_L, best_r = state.L.copy(), math.inf
    converged = False
    for k in range(cfg.max_iter):
        state = xi_update(state, Y, prior, cfg, scores=scores)
        state = merge_update_L(state, train_labels, cfg)
        if not cfg.freeze_duals:
            state = dual_update(state)
        state.iteration = k + 1
        r = state.primal_residual()
        residuals.append(r)
        objectives.append(admm_objective(state, scores, train_labels, cfg))
        if r < best_r:
            best_L, best_r = state.L.copy(), r
        if r <= cfg.tol:
            converged = True
            break
    return AdmmResult(
        labels=binarize(best_L).reshape(lattice.dims),
        relaxed=best_L.reshape(lattice.dims),
        converged=converged,
        iterations=len(residuals),
        residuals=residuals,
        objectives=objectives,
    )
