"""Shared fixtures and independent brute-force oracles.

The oracles here deliberately avoid the package's patch tables and kernels:
patches are read pixel by pixel with explicit clamping, neighborhoods are
enumerated with plain loops.
"""

import math

import numpy as np
import pytest

from patchseg import TrainingSet

ACCEPTANCE_RESULTS = {}


@pytest.fixture
def report():
    """Record one acceptance criterion line: report(number, ok, detail)."""

    def _record(number, ok, detail=""):
        ACCEPTANCE_RESULTS[number] = (bool(ok), detail)
        print(f"acceptance criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------


def oracle_patch(image, center, radius):
    """Square clamp-boundary patch, offsets in row-major order."""
    rows, cols = image.shape
    r0, c0 = center
    out = []
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            r = min(max(r0 + dr, 0), rows - 1)
            c = min(max(c0 + dc, 0), cols - 1)
            out.append(float(image[r, c]))
    return out


def oracle_neighbors(shape, center, radius):
    """Box neighborhood clipped to the lattice, row-major."""
    rows, cols = shape
    r0, c0 = center
    return [
        (r, c)
        for r in range(max(r0 - radius, 0), min(r0 + radius, rows - 1) + 1)
        for c in range(max(c0 - radius, 0), min(c0 + radius, cols - 1) + 1)
    ]


def oracle_sq(a, b):
    return sum((x - y) * (x - y) for x, y in zip(a, b))


def oracle_segment(Y, images, labels, patch_radius, search_radius, theta):
    """Naive double loop over pixels and (u, j) candidates; theta=inf is 1NN."""
    rows, cols = Y.shape
    out = np.zeros((rows, cols), dtype=np.int8)
    for r in range(rows):
        for c in range(cols):
            q = oracle_patch(Y, (r, c), patch_radius)
            best, best_label = math.inf, 0
            v_plus = v_minus = 0.0
            for u in range(len(images)):
                for j in oracle_neighbors(Y.shape, (r, c), search_radius):
                    dist = oracle_sq(q, oracle_patch(images[u], j, patch_radius))
                    lab = int(labels[u][j])
                    if dist < best:
                        best, best_label = dist, lab
                    if lab == 1:
                        v_plus += math.exp(-theta * dist) if math.isfinite(theta) else 0.0
                    else:
                        v_minus += math.exp(-theta * dist) if math.isfinite(theta) else 0.0
            if math.isinf(theta):
                out[r, c] = best_label
            else:
                out[r, c] = 1 if v_plus >= v_minus else -1
    return out


def oracle_gap(images, labels, patch_radius, search_radius):
    best = math.inf
    n = len(images)
    rows, cols = images[0].shape
    for u in range(n):
        for v in range(n):
            for r in range(rows):
                for c in range(cols):
                    for j in oracle_neighbors((rows, cols), (r, c), search_radius):
                        if labels[u][r, c] != labels[v][j]:
                            d = oracle_sq(oracle_patch(images[u], (r, c), patch_radius), oracle_patch(images[v], j, patch_radius))
                            best = min(best, d)
    return best


def random_instance(rng, max_side=8, max_n=5, max_patch_radius=1, max_search_radius=2):
    rows = int(rng.integers(2, max_side + 1))
    cols = int(rng.integers(2, max_side + 1))
    n = int(rng.integers(1, max_n + 1))
    images = rng.random((n, rows, cols))
    labels = rng.choice(np.array([-1, 1], dtype=np.int8), size=(n, rows, cols))
    Y = rng.random((rows, cols))
    return Y, TrainingSet(images, labels), int(rng.integers(0, max_patch_radius + 1)), int(rng.integers(0, max_search_radius + 1))
