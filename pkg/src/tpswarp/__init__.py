"""Thin-plate-spline control-point warping toolkit."""

from .classifier import (
    ClassifierParams,
    TaskLabel,
    classifier_backward,
    classifier_forward,
    init_params,
    predict_task,
    train_classifier,
)
from .flow import WarpResult, compose_flow, densify, scale_flow, warp_features, warp_image
from .geometry import (
    ControlGrid,
    FeatureMap,
    FlowField,
    ImageBuffer,
    Mask,
    Mesh,
    Point2,
    make_regular_grid,
    normalized_to_pixel,
    pixel_to_normalized,
)
from .hierarchy import HeadSchedule, compose_head, run_cascade, upsample_control_points
from .losses import (
    LossWeights,
    cross_entropy,
    flow_loss,
    inter_grid_loss,
    middle_supervision_weights,
    reconstruction_loss,
    total_loss,
)
from .prompts import ChannelProjection, PromptBank, blend_prompts, modulate
from .synth import FAMILIES, DistortionSpec, generate_classifier_dataset, generate_grid, generate_sample
from .tps import SingularSystemError, TpsTransform, eval_tps, radial_basis, solve_tps

__version__ = "0.1.0"
