from .augment import AugmentationConfig, apply_geometry, augment, replicate_dataset
from .checkpoint import load_model, save_model
from .models import ArchitectureSpec, TrainedModel, build_model
from .train import TrainConfig, penultimate_features, predict_proba, train

__all__ = [
    "ArchitectureSpec",
    "AugmentationConfig",
    "TrainConfig",
    "TrainedModel",
    "apply_geometry",
    "augment",
    "build_model",
    "load_model",
    "penultimate_features",
    "predict_proba",
    "replicate_dataset",
    "save_model",
    "train",
]
