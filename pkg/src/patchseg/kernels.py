"""Hot loops: exhaustive patch scans, vote accumulation, gap search, KDE scores.

Each kernel has a numba version (``*_nb``) and a numpy version (``*_np``);
the public name is bound to one of them at import time (see ``_accel``).
Both versions accumulate squared distances over patch entries in the same
sequential order and visit candidates (u, j) in the same order, so nearest
neighbor results and tie-breaking agree exactly between backends. Vote
sums and KDE scores go through ``exp``/``log``, whose numba and numpy
implementations may differ in the last few ulps.

Shared array conventions
------------------------
test : (P, d) float64
    Query patches, one per pixel.
train : (n, Q, d) float64
    Training patches for every training image and pixel.
labels : (n, Q) int8
    Center labels of the training patches.
nbr : (P, K) int64
    Neighbor flat indices per pixel, ascending, padded with -1 at the end.
"""

import numpy as np

from ._accel import njit, pick


# ---------------------------------------------------------------------------
# nearest neighbor scan
# ---------------------------------------------------------------------------


@njit
def _nn_scan_nb(test, train, labels, nbr):
    P, d = test.shape
    n = train.shape[0]
    K = nbr.shape[1]
    out = np.empty(P, dtype=np.int8)
    best_u = np.empty(P, dtype=np.int64)
    best_j = np.empty(P, dtype=np.int64)
    best_d = np.empty(P, dtype=np.float64)
    for p in range(P):
        bd = np.inf
        bu = -1
        bj = -1
        for u in range(n):
            for k in range(K):
                j = nbr[p, k]
                if j < 0:
                    break
                acc = 0.0
                for t in range(d):
                    diff = train[u, j, t] - test[p, t]
                    acc += diff * diff
                if acc < bd:
                    bd = acc
                    bu = u
                    bj = j
        best_d[p] = bd
        best_u[p] = bu
        best_j[p] = bj
        out[p] = labels[bu, bj]
    return out, best_u, best_j, best_d


def _sq_dists_np(train_u, test, cols):
    # sequential accumulation over entries keeps the order of the compiled kernel
    acc = np.zeros(test.shape[0])
    src = train_u[cols]
    for t in range(test.shape[1]):
        diff = src[:, t] - test[:, t]
        acc += diff * diff
    return acc


def _nn_scan_np(test, train, labels, nbr):
    P = test.shape[0]
    n = train.shape[0]
    best_d = np.full(P, np.inf)
    best_u = np.full(P, -1, dtype=np.int64)
    best_j = np.full(P, -1, dtype=np.int64)
    for u in range(n):
        for k in range(nbr.shape[1]):
            j = nbr[:, k]
            valid = j >= 0
            acc = _sq_dists_np(train[u], test, np.where(valid, j, 0))
            better = valid & (acc < best_d)
            best_d = np.where(better, acc, best_d)
            best_u = np.where(better, u, best_u)
            best_j = np.where(better, j, best_j)
    return labels[best_u, best_j].astype(np.int8), best_u, best_j, best_d


nn_scan = pick(_nn_scan_nb, _nn_scan_np)


# ---------------------------------------------------------------------------
# weighted majority votes, max-factored
# ---------------------------------------------------------------------------


@njit
def _wmv_scan_nb(test, train, labels, nbr, theta):
    P, d = test.shape
    n = train.shape[0]
    K = nbr.shape[1]
    dmin = np.empty(P, dtype=np.float64)
    s_plus = np.zeros(P, dtype=np.float64)
    s_minus = np.zeros(P, dtype=np.float64)
    dist = np.empty(n * K, dtype=np.float64)
    for p in range(P):
        m = np.inf
        for u in range(n):
            for k in range(K):
                j = nbr[p, k]
                if j < 0:
                    dist[u * K + k] = np.inf
                    continue
                acc = 0.0
                for t in range(d):
                    diff = train[u, j, t] - test[p, t]
                    acc += diff * diff
                dist[u * K + k] = acc
                if acc < m:
                    m = acc
        dmin[p] = m
        sp = 0.0
        sm = 0.0
        for u in range(n):
            for k in range(K):
                j = nbr[p, k]
                if j < 0:
                    break
                w = np.exp(-theta * (dist[u * K + k] - m))
                if labels[u, j] > 0:
                    sp += w
                else:
                    sm += w
        s_plus[p] = sp
        s_minus[p] = sm
    return dmin, s_plus, s_minus


def _wmv_scan_np(test, train, labels, nbr, theta):
    P = test.shape[0]
    n, K = train.shape[0], nbr.shape[1]
    dist = np.full((n, K, P), np.inf)
    lab = np.zeros((n, K, P), dtype=np.int8)
    for u in range(n):
        for k in range(K):
            j = nbr[:, k]
            valid = j >= 0
            jj = np.where(valid, j, 0)
            dist[u, k] = np.where(valid, _sq_dists_np(train[u], test, jj), np.inf)
            lab[u, k] = np.where(valid, labels[u, jj], 0)
    dmin = dist.reshape(n * K, P).min(axis=0)
    s_plus = np.zeros(P)
    s_minus = np.zeros(P)
    with np.errstate(invalid="ignore"):
        for u in range(n):
            for k in range(K):
                w = np.exp(-theta * (dist[u, k] - dmin))
                s_plus += np.where(lab[u, k] > 0, w, 0.0)
                s_minus += np.where(lab[u, k] < 0, w, 0.0)
    return dmin, s_plus, s_minus


wmv_scan = pick(_wmv_scan_nb, _wmv_scan_np)


# ---------------------------------------------------------------------------
# separation gap
# ---------------------------------------------------------------------------


@njit
def _gap_scan_nb(train, labels, nbr):
    n, Q, d = train.shape
    K = nbr.shape[1]
    best = np.inf
    for i in range(Q):
        for k in range(K):
            j = nbr[i, k]
            if j < 0:
                break
            for u in range(n):
                lu = labels[u, i]
                for v in range(n):
                    if labels[v, j] == lu:
                        continue
                    acc = 0.0
                    for t in range(d):
                        diff = train[u, i, t] - train[v, j, t]
                        acc += diff * diff
                    if acc < best:
                        best = acc
    return best


def _gap_scan_np(train, labels, nbr):
    n, Q, d = train.shape
    best = np.inf
    for i in range(Q):
        for j in nbr[i]:
            if j < 0:
                break
            cross = labels[:, i][:, None] != labels[:, j][None, :]
            if not cross.any():
                continue
            acc = np.zeros((n, n))
            for t in range(d):
                diff = train[:, i, t][:, None] - train[:, j, t][None, :]
                acc += diff * diff
            best = min(best, float(acc[cross].min()))
    return best


gap_scan = pick(_gap_scan_nb, _gap_scan_np)


# ---------------------------------------------------------------------------
# KDE log scores per candidate label patch
# ---------------------------------------------------------------------------


@njit
def _kde_scores_nb(test, pix_block, block_ptr, entry_patch, entry_cand, block_ncand, cmax, gamma):
    P, d = test.shape
    out = np.full((P, cmax), -np.inf)
    for p in range(P):
        b = pix_block[p]
        lo = block_ptr[b]
        hi = block_ptr[b + 1]
        nc = block_ncand[b]
        mx = np.full(nc, -np.inf)
        vals = np.empty(hi - lo)
        for e in range(lo, hi):
            acc = 0.0
            for t in range(d):
                diff = entry_patch[e, t] - test[p, t]
                acc += diff * diff
            v = -gamma * acc
            vals[e - lo] = v
            c = entry_cand[e]
            if v > mx[c]:
                mx[c] = v
        s = np.zeros(nc)
        for e in range(lo, hi):
            c = entry_cand[e]
            s[c] += np.exp(vals[e - lo] - mx[c])
        for c in range(nc):
            if s[c] > 0.0:
                out[p, c] = mx[c] + np.log(s[c])
    return out


def _kde_scores_np(test, pix_block, block_ptr, entry_patch, entry_cand, block_ncand, cmax, gamma):
    P, d = test.shape
    out = np.full((P, cmax), -np.inf)
    for b in np.unique(pix_block):
        rows = np.flatnonzero(pix_block == b)
        lo, hi = block_ptr[b], block_ptr[b + 1]
        acc = np.zeros((rows.size, hi - lo))
        for t in range(d):
            diff = entry_patch[lo:hi, t][None, :] - test[rows, t][:, None]
            acc += diff * diff
        vals = -gamma * acc
        cands = entry_cand[lo:hi]
        for c in range(block_ncand[b]):
            cols = np.flatnonzero(cands == c)
            if cols.size == 0:
                continue
            mx = vals[:, cols].max(axis=1)
            s = np.zeros(rows.size)
            for col in cols:
                s += np.exp(vals[:, col] - mx)
            out[rows, c] = mx + np.log(s)
    return out


kde_scores = pick(_kde_scores_nb, _kde_scores_np)


# ---------------------------------------------------------------------------
# xi-step argmax over candidate label patches
# ---------------------------------------------------------------------------


@njit
def _xi_argmax_nb(scores, pix_block, cand_patch, block_ncand, target, score_scale, half_beta):
    P, dp = target.shape
    best = np.empty(P, dtype=np.int64)
    for p in range(P):
        b = pix_block[p]
        bv = -np.inf
        bc = -1
        for c in range(block_ncand[b]):
            s = scores[p, c]
            if s == -np.inf:
                continue
            acc = 0.0
            for t in range(dp):
                diff = cand_patch[b, c, t] - target[p, t]
                acc += diff * diff
            v = score_scale * s - half_beta * acc
            if v > bv or bc < 0:
                bv = v
                bc = c
        best[p] = bc
    return best


def _xi_argmax_np(scores, pix_block, cand_patch, block_ncand, target, score_scale, half_beta):
    P, dp = target.shape
    cands = cand_patch[pix_block]  # (P, cmax, d')
    acc = np.zeros(cands.shape[:2])
    for t in range(dp):
        diff = cands[:, :, t] - target[:, t][:, None]
        acc += diff * diff
    with np.errstate(invalid="ignore"):
        obj = score_scale * scores - half_beta * acc
    obj = np.where(np.isneginf(scores), -np.inf, obj)
    return np.argmax(obj, axis=1).astype(np.int64)


xi_argmax = pick(_xi_argmax_nb, _xi_argmax_np)


BACKENDS = {
    "numba": {
        "nn_scan": _nn_scan_nb,
        "wmv_scan": _wmv_scan_nb,
        "gap_scan": _gap_scan_nb,
        "kde_scores": _kde_scores_nb,
        "xi_argmax": _xi_argmax_nb,
    },
    "numpy": {
        "nn_scan": _nn_scan_np,
        "wmv_scan": _wmv_scan_np,
        "gap_scan": _gap_scan_np,
        "kde_scores": _kde_scores_np,
        "xi_argmax": _xi_argmax_np,
    },
}
