"""tinydet: a desk-scale anchor-free detector built on a minimal autodiff engine."""

__version__ = "0.1.0"

from .tensor import (
    Tensor, Tape, backward, wrap_leaves,
    conv2d, concat_channels, split_channels, pointwise,
    global_avg_pool, upsample_nearest, take_flat, sum_all, mean_all,
    add, sub, mul, div, minimum, maximum, neg, scale, exp, log,
    sigmoid, silu, relu, softplus, arctan, pow_const, clamp,
)
from .gradcheck import GradCheckReport, grad_check
from .spd import SpdConfig, depth_to_space, init_spd_params, space_to_depth, spd_conv
from .cspok import (
    CspokConfig, OkmConfig, cspok_block, init_cspok_arrays, init_okm_arrays, okm,
)
from .losses import (
    ScoreTarget, VflParams, bce_loss_map, ciou_loss, ciou_terms, focal_loss,
    focal_loss_map, iou, varifocal_loss, varifocal_loss_map,
)
from .coco import (
    BoxAnnotation, Category, CocoImage, Detection, load_coco, load_detections,
    save_coco, save_detections,
)
from .evaluation import (
    EvalResult, MatchResult, average_precision, evaluate, format_table,
    match_detections,
)
from .synth import Dataset, SynthSpec, generate_synthetic, load_dataset, small_target_ratio
from .model import ForwardResult, LevelOutput, Model, ModelConfig, build_model
from .assign import (
    Assignment, PositiveSample, assign_targets, decode_and_nms, decode_boxes,
    grid_centers, score_target_pairs,
)
from .train import EpochRecord, ablate, config_hash, evaluate_untrained, train_demo, training_loss
