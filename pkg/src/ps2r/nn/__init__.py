from .checkpoint import load_checkpoint, save_checkpoint
from .losses import cross_entropy, entropy, objective, total_loss
from .model import (EDGE_CONV, POINT_MLP, ClassifierConfig, EncoderConfig, ModelParams,
                    Prediction, backward_batch, forward, forward_batch, init_params, knn_graph,
                    softmax)
from .optim import AdamState, NonFiniteGradientError, adam_step
from .train import TrainConfig, TrainingError, predict, predict_batch, prepare_inputs, train

__all__ = [
    "EDGE_CONV", "POINT_MLP", "AdamState", "ClassifierConfig", "EncoderConfig", "ModelParams",
    "NonFiniteGradientError", "Prediction", "TrainConfig", "TrainingError", "adam_step",
    "backward_batch", "cross_entropy", "entropy", "forward", "forward_batch", "init_params",
    "knn_graph", "load_checkpoint", "objective", "predict", "predict_batch", "prepare_inputs",
    "save_checkpoint", "softmax", "total_loss", "train",
]
