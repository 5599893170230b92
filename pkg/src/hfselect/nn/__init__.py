"""Minimal reverse-mode autodiff with the layers the classifiers need."""
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (LSTM, Conv1xF, Dense, DropoutSpec, LstmCellParams, Module,
                     TemporalConv, cross_entropy_loss, dropout_forward, l2_penalty,
                     lstm_cell_forward, lstm_layer_forward, one_hot, softmax)
from .optim import Optimizer, OptimizerState, optimizer_step
from .tensor import GraphNotRecorded, ShapeMismatch, Tensor, backward, gradients, no_grad

__all__ = [
    "LSTM", "Conv1xF", "Dense", "DropoutSpec", "GraphNotRecorded", "LstmCellParams",
    "Module", "Optimizer", "OptimizerState", "ShapeMismatch", "TemporalConv", "Tensor",
    "backward", "cross_entropy_loss", "dropout_forward", "gradients", "l2_penalty",
    "load_checkpoint", "lstm_cell_forward", "lstm_layer_forward", "no_grad", "one_hot",
    "optimizer_step", "save_checkpoint", "softmax",
]
