"""Hyperspectral patch classification with sparse expert routing.

Public surface: the float64 autodiff substrate (Tensor, Tape, ops), the
model blocks (Dsae, CiemBlock, CiemFpn, Lges, LgestModel), the data
pipeline (cube/label formats, patches, splits, synthetic scenes), metrics,
and the deterministic Rng they all share.
"""

from .ciem import CiemBlock, CiemConfig, GateDecision, Rmoe, top2_gate
from .dsae import Dsae, DsaeConfig, DsaeOutput, channel_schedule
from .fpn import CiemFpn, FpnConfig, PyramidOutput, concat_width, detokenize, tokenize
from .hsi import (
    HsiCube,
    LabelMap,
    PatchBatch,
    extract_patches,
    load_cube,
    load_dataset,
    load_labels,
    normalize,
    save_cube,
    save_labels,
    split_train_test,
    synth_cube,
)
from .lges import ExpertGroup, ExpertGroupConfig, Lges, LgesOutput
from .metrics import (
    MetricsReport,
    average_accuracy,
    compute_metrics,
    confusion_matrix,
    kappa,
    overall_accuracy,
    per_class_recall,
    render_class_map,
)
from .model import (
    LgestConfig,
    LgestModel,
    TrainReport,
    fit,
    lgest_loss,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from .rng import Rng
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "CiemBlock",
    "CiemConfig",
    "CiemFpn",
    "Dsae",
    "DsaeConfig",
    "DsaeOutput",
    "ExpertGroup",
    "ExpertGroupConfig",
    "FpnConfig",
    "GateDecision",
    "HsiCube",
    "LabelMap",
    "Lges",
    "LgesOutput",
    "LgestConfig",
    "LgestModel",
    "MetricsReport",
    "PatchBatch",
    "PyramidOutput",
    "Rmoe",
    "Rng",
    "Tape",
    "Tensor",
    "TrainReport",
    "average_accuracy",
    "channel_schedule",
    "compute_metrics",
    "concat_width",
    "confusion_matrix",
    "detokenize",
    "extract_patches",
    "fit",
    "kappa",
    "lgest_loss",
    "load_checkpoint",
    "load_cube",
    "load_dataset",
    "load_labels",
    "normalize",
    "overall_accuracy",
    "per_class_recall",
    "predict",
    "render_class_map",
    "save_checkpoint",
    "save_cube",
    "save_labels",
    "split_train_test",
    "synth_cube",
    "tokenize",
    "top2_gate",
]
