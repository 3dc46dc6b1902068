"""Convolutional-LSTM predictive precoder: network, training and checkpoints."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import HistoryWindow, TrainingSet, map_input, unmap_input
from .network import NetShape, NetworkParams, backward, forward, forward_cached, init_params
from .training import TrainHyper, cost, cost_and_gradient, gradient, predict, predict_batch, train

__all__ = [
    "Checkpoint", "HistoryWindow", "NetShape", "NetworkParams", "TrainHyper", "TrainingSet",
    "backward", "cost", "cost_and_gradient", "forward", "forward_cached", "gradient",
    "init_params", "load_checkpoint", "map_input", "predict", "predict_batch",
    "save_checkpoint", "train", "unmap_input",
]
