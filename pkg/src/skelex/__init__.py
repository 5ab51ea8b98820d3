"""skelex: scale-associated side-output networks for skeleton extraction."""

from .tensor import (BackboneSpec, ConvSpec, Parameter, PoolSpec, SgdMomentum,
                     StageSpec, desk_backbone, vgg16_backbone)
from .gt import (StageTargets, Transform, augment, distance_transform,
                 quantize_scale, quantize_scale_map, skeletonize,
                 stage_targets)
from .network import (LossBreakdown, NetworkParams, SsoActivations,
                      class_balance_weights, forward, init_params,
                      scale_regression_loss, total_objective,
                      weighted_softmax_loss)
from .infer import SkeletonResponse, ThinnedSkeleton, nms_thin, predict, \
    threshold_binarize
from .evaluate import PRCurve, SegmentationScore, match_skeletons, pr_curve, \
    seg_scores
from .apps import (ScoredBox, SkeletonSegment, detection_rate_curve,
                   fsds_scale_estimate, group_segments, reconstruct_mask,
                   rescore_proposals)
from .train import TrainConfig, TrainingDiverged, load_checkpoint, \
    save_checkpoint
from .config import default_config, load_config

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
