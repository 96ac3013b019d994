"""Patch-based segmentation under a latent source model.

Synthetic data from per-pixel mixture and latent-label models, pointwise
nearest-neighbor / weighted majority voting, multipoint ADMM segmentation,
and an error-bound harness.
"""

from .errors import ConfigError, ContractViolation
from .lattice import Lattice, Neighborhood, PatchShape, extract_patch, extract_patches, neighborhood_pixels, sq_dist
from .metrics import hard_dice, mv_baseline, pixel_error_rate
from .models import (
    LatentSourceModel,
    MixtureComponent,
    NoiseSpec,
    PixelMixtureModel,
    PointwiseModel,
    TrainingSet,
    build_block_model,
    sample_pair,
    sample_latent_source_pair,
    sample_pointwise_pair,
    sample_training_set,
    verify_jigsaw,
)
from .multipoint import (
    AdmmConfig,
    admm_segment,
    build_kde_prior,
    kde_log_score,
    proxy_objective_F,
    proxy_objective_grad,
    soft_dice,
    soft_dice_grad,
)
from .pointwise import PointwiseConfig, nn_label, segment_pointwise, separation_gap, wmv_label, wmv_votes
from .theory import BoundParams, monte_carlo_error, required_gap, required_n, theorem1_bound

__version__ = "0.1.0"
