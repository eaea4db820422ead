from .model import (
    Architecture,
    ModelParams,
    batch_loss,
    bce_loss,
    bigru,
    forward,
    forward_logits,
    gradients,
    init_params,
    loss_and_gradients,
    predict_proba,
    zero_params,
)
from .persist import load_model, save_model
from .train import EpochLog, TrainConfig, TrainResult, train

__all__ = [
    "Architecture",
    "EpochLog",
    "ModelParams",
    "TrainConfig",
    "TrainResult",
    "batch_loss",
    "bce_loss",
    "bigru",
    "forward",
    "forward_logits",
    "gradients",
    "init_params",
    "load_model",
    "loss_and_gradients",
    "predict_proba",
    "save_model",
    "train",
    "zero_params",
]
