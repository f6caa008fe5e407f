"""Minimal neural-network kernels: layers, losses, Adam, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import numerical_gradient, relative_error
from .layers import (Conv1D, Dense, Dropout, Flatten, Layer, MaxPool1D, ReLU, Sequential, Sigmoid,
                     sigmoid)
from .losses import bce, bce_grad, mse, mse_grad
from .optim import Adam

__all__ = [
    "Adam", "Conv1D", "Dense", "Dropout", "Flatten", "Layer", "MaxPool1D", "ReLU", "Sequential",
    "Sigmoid", "bce", "bce_grad", "load_checkpoint", "mse", "mse_grad", "numerical_gradient",
    "relative_error", "save_checkpoint", "sigmoid",
]
