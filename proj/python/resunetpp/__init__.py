from ._core import (
    REFERENCE_PARAMETERS,
    ConfigError,
    CrfParams,
    DatasetError,
    FormatError,
    Model,
    ModelConfig,
    NumericError,
    ShapeError,
    StateError,
    crf_refine,
    dsc,
    iou,
    read_weight_metadata,
    roc_auc,
)

__all__ = [
    "REFERENCE_PARAMETERS",
    "ConfigError",
    "CrfParams",
    "DatasetError",
    "FormatError",
    "Model",
    "ModelConfig",
    "NumericError",
    "ShapeError",
    "StateError",
    "crf_refine",
    "dsc",
    "iou",
    "read_weight_metadata",
    "roc_auc",
]
