from .layers import Activation, Conv2D, Dense, MaxPool2x2, Network, Upsample2x
from .losses import bce_loss, mse_loss, sigmoid
from .optim import AdamState, adam_init, adam_step
from .gradcheck import grad_check, kink_margin, relative_error
from .io import load_network, save_network

__all__ = [
    "Activation", "Conv2D", "Dense", "MaxPool2x2", "Network", "Upsample2x",
    "bce_loss", "mse_loss", "sigmoid",
    "AdamState", "adam_init", "adam_step",
    "grad_check", "kink_margin", "relative_error",
    "load_network", "save_network",
]
