"""Visuo-tactile grasp-outcome prediction with attention fusion, built on a small numpy autograd."""

from .data import DataConfig, GraspDataset, SceneParams, generate_dataset, generate_scenes, label_rule
from .formats import FormatError, load_gan, load_model, save_gan, save_model
from .fusion import FusionConfig, FusionModel
from .gan import GanTrainConfig, generate_paired_toy, mean_ssim, ssim, train_gan, translate
from .tensor import Tensor, grad_check, no_grad
from .training import (Metrics, ModelPredictor, TrainConfig, ablation_suite, evaluate, kfold_cross_validate,
                       minimum_force_policy, oracle_predictor, run_policy, train)

__all__ = [
    "DataConfig", "GraspDataset", "SceneParams", "generate_dataset", "generate_scenes", "label_rule",
    "FormatError", "load_gan", "load_model", "save_gan", "save_model",
    "FusionConfig", "FusionModel",
    "GanTrainConfig", "generate_paired_toy", "mean_ssim", "ssim", "train_gan", "translate",
    "Tensor", "grad_check", "no_grad",
    "Metrics", "ModelPredictor", "TrainConfig", "ablation_suite", "evaluate", "kfold_cross_validate",
    "minimum_force_policy", "oracle_predictor", "run_policy", "train",
]
