"""Minimal CNN toolkit: layers with explicit backward passes, losses, optimizers."""

from .gradcheck import grad_check
from .layers import Activation, BatchNorm2D, Conv2D, Dense, Flatten, MaxPool2D, Sequential
from .losses import bce_loss, softmax, weighted_ce_loss
from .optim import SGD, Adam, make_optimizer

__all__ = [
    "Activation", "Adam", "BatchNorm2D", "Conv2D", "Dense", "Flatten", "MaxPool2D",
    "SGD", "Sequential", "bce_loss", "grad_check", "make_optimizer", "softmax", "weighted_ce_loss",
]
