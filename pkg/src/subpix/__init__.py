"""Subpixel refinement for patch-based stereo and optical flow matching.

Cost-volume interpolation (parabola, equiangular, paraboloid, separable and
anisotropic schemes) and feature-space interpolation (closed-form and
iterative barycentric refiners for NCC, SSD and SAD families), plus the
evaluation metrics and file formats needed to score them.
"""

from .cost import (CostKind, CostVolume, SearchRange, build_cost_volume, discrete_best,
                   discrete_best_field, score)
from .errors import (ArgumentError, DegenerateError, EmptyDomainError, FormatError, StateError,
                     SubpixError, UndefinedResultError)
from .evaluation import EvalReport, evaluate, inlier_mask, mae, md, rmse, snr_pixel_locking
from .features import FeatureVolume, Whitening, build_feature_volume, whiten
from .matching import MatchResult, match
from .refine1d import (CostTriplet, IntervalFeatures, Status, SubpixelResult, equiangular_refine,
                       feature_refine_1d, ncc_feature_refine_1d, parabola_refine,
                       refine_interval_pair, sad_feature_refine_1d, shimizu_cancellation_1d,
                       ssd_feature_refine_1d, weighted_median)
from .refine_nd import (BarycentricSolution, CostNeighborhood, RefinementResult, TargetSet,
                        anisotropic_refine_2d, barycentric_refine, feature_refine_nd,
                        ncc_barycentric_refine, paraboloid_refine_2d, sad_barycentric_refine,
                        separable_refine, ssd_barycentric_refine)
from .synth import SyntheticPair, grid_oracle_1d, grid_oracle_nd, make_shifted_pair, make_texture
from .tensor import CLAMP, REJECT, Border, PatchWindow, make_square_window, patch

__version__ = "0.1.0"
