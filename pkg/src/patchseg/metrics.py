"""Segmentation scores and the majority-voting baseline."""

import numpy as np

from .errors import ContractViolation
from .models import TrainingSet
from .multipoint import binarize, soft_dice


def hard_dice(a, b) -> float:
    """Dice overlap of two +1/-1 label images (both empty counts as 1)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractViolation("label images must share one lattice")
    return soft_dice(a.astype(np.float64), b.astype(np.float64))


def pixel_error_rate(a, b) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractViolation("label images must share one lattice")
    return float(np.count_nonzero(a != b)) / a.size


def mv_baseline(train: TrainingSet) -> np.ndarray:
    """Per-pixel mean of the training label images, thresholded at 0 (ties to +1)."""
    return binarize(train.labels.astype(np.float64).mean(axis=0))
