"""Minimal differentiable building blocks: layers, reverse-mode gradients, Adam."""
from . import checkpoint
from .kernels import BACKEND
from .layers import Activation, ConcatSkip, Conv2d, Dense, Downsample, Layer, Skip, Upsample
from .optim import AdamState, adam_step
from .stack import LayerStack, Tape, backward, forward, mlp, pixelwise

__all__ = [
    "Activation", "AdamState", "BACKEND", "ConcatSkip", "Conv2d", "Dense", "Downsample",
    "Layer", "LayerStack", "Skip", "Tape", "Upsample", "adam_step", "backward",
    "checkpoint", "forward", "mlp", "pixelwise",
]
