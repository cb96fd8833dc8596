"""Occlusion-robustness benchmark toolkit for small image classifiers."""

from .codec import decode_image, encode_image
from .cutmix import cutmix_batch, cutmix_pair, mix_labels, sample_box, sample_lambda
from .dataset import (
    DatasetManifest,
    DatasetSplit,
    encode_label,
    filter_min_images,
    load_manifest,
    stratified_split,
)
from .evaluate import ConditionResult, EvalReport, compare_models, evaluate_condition, topk_error
from .inpaint import RecoveryStrategy, harmonic_inpaint, mirror_fill, recover
from .masks import (
    DEFAULT_GEOMETRY,
    MaskBitmap,
    MaskGeometry,
    apply_mask,
    generate_mask,
    mask_area_fraction,
    occlude_dataset,
)
from .nn import ModelParams, forward, init_model, load_checkpoint, save_checkpoint, soft_cross_entropy
from .rng import derive
from .trainer import ScheduleConfig, TrainConfig, lr_find, one_cycle, sgd_momentum_step, train
from .transforms import (
    AugmentParams,
    adjust_lighting,
    affine_transform,
    apply_augmentation,
    hflip,
    resize_bilinear,
    sample_augmentation,
)

__version__ = "0.1.0"
