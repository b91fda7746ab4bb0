"""Desk-scale multi-object 6D pose estimation toolkit.

Forward-only reference implementation: fused feature pyramid, decoupled
rotation/translation heads with residual refinement, visibility-guided
positive-sample selection, and a BOP-format evaluation pipeline.
"""

from .camera import (
    CameraIntrinsics,
    cell_anchor,
    decompose_translation,
    recover_translation,
    tran_loss_xy,
    tran_loss_z,
    translation_error,
)
from .fpn import Pyramid, TSFMWeights, TSFPNWeights, ts_fm_fuse, ts_fpn_forward
from .heads import (
    DecodeResult,
    HeadWeights,
    PoseEstimate,
    RawGridPredictions,
    decode_predictions,
    model_forward,
    rotation_head_forward,
    translation_head_forward,
)
from .metrics import (
    MetricReport,
    ObjectModel,
    add_metric,
    adds_metric,
    aggregate_report,
    auc_metric,
    evaluate,
    match_instances,
    recall_add_s,
)
from .rotation import (
    DegenerateRotationError,
    geodesic_loss,
    geodesic_loss_grad,
    matrix_to_quat,
    quat_loss,
    quat_to_matrix,
    rot6d_to_matrix,
)
from .visibility import (
    Box,
    DegenerateVisibilityError,
    cell_visibility,
    discrepancy_map,
    seed_boundary,
    select_positive_samples,
)
from .weights import ModelWeights, load_model_weights, make_model_weights, save_model_weights

__version__ = "0.1.0"
