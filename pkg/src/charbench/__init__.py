"""Transfer learning for handwritten character recognition on a numpy autodiff core."""

from .arch import MODEL_IDS, ArchSpec, LayerSpec, classifier_in_features, param_count, zoo_spec
from .network import build, load_params, replace_head, save_params, set_freeze_policy
from .train import TrainConfig, fit, pretrain_source, step_lr, transfer

__all__ = [
    "MODEL_IDS", "ArchSpec", "LayerSpec", "classifier_in_features", "param_count", "zoo_spec",
    "build", "load_params", "replace_head", "save_params", "set_freeze_policy",
    "TrainConfig", "fit", "pretrain_source", "step_lr", "transfer",
]
__version__ = "0.1.0"
