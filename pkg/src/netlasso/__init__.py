"""Dynamic network regression with recurrent graph cells and sparse training."""

__version__ = "0.1.0"

from .tape import (
    ConfigError,
    Gradients,
    ShapeError,
    Tape,
    Tensor,
    backward,
    grad_check,
)
from .attention import EdgeSet, InfluenceMatrix
from .config import ModelConfig, format_config, load_config, parse_config
from .data import (
    DataError,
    Dataset,
    Split,
    chronological_split,
    inverse_zscore,
    load_csv,
    load_edges,
    make_windows,
    save_csv,
    window_count,
    zscore,
)
from .model import (
    GnlModel,
    WindowSample,
    forward_window,
    load_checkpoint,
    predict_horizon,
    save_checkpoint,
)
from .optim import (
    ConvexLassoInstance,
    OptimizerState,
    random_instance,
    soft_threshold,
    verify_theorem_bounds,
)
from .synth import shock_relay
from .training import (
    TrainingError,
    TrainResult,
    evaluate,
    export_attention,
    save_history,
    train,
)

__all__ = [
    "ConfigError",
    "ConvexLassoInstance",
    "DataError",
    "Dataset",
    "EdgeSet",
    "GnlModel",
    "Gradients",
    "InfluenceMatrix",
    "ModelConfig",
    "OptimizerState",
    "ShapeError",
    "Split",
    "Tape",
    "Tensor",
    "TrainResult",
    "TrainingError",
    "WindowSample",
    "backward",
    "chronological_split",
    "evaluate",
    "export_attention",
    "format_config",
    "forward_window",
    "grad_check",
    "inverse_zscore",
    "load_checkpoint",
    "load_config",
    "load_csv",
    "load_edges",
    "make_windows",
    "parse_config",
    "predict_horizon",
    "random_instance",
    "shock_relay",
    "save_checkpoint",
    "save_csv",
    "save_history",
    "soft_threshold",
    "train",
    "verify_theorem_bounds",
    "window_count",
    "zscore",
    "__version__",
]
