from .tensor import Tensor, backward, ShapeError, AutodiffError
from .params import ParamStore, adam_step, NonFiniteGradientError
from .layers import (LayerSpec, Network, dense, conv2d, deconv2d, flatten,
                     unflatten, conv2d_op, deconv2d_op, LEAKY_SLOPE)
from .checkpoint import save_checkpoint, load_checkpoint, CheckpointError

__all__ = [
    "Tensor", "backward", "ShapeError", "AutodiffError",
    "ParamStore", "adam_step", "NonFiniteGradientError",
    "LayerSpec", "Network", "dense", "conv2d", "deconv2d", "flatten",
    "unflatten", "conv2d_op", "deconv2d_op", "LEAKY_SLOPE",
    "save_checkpoint", "load_checkpoint", "CheckpointError",
]
