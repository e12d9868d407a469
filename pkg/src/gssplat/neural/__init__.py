from . import ops
from .heads import GaussianHeads, HeadOutput
from .layers import Conv2d, GroupNorm, Linear, Module, ResBlock, SelfAttention
from .network import FeatureMaps, HybridNet, HybridNetConfig
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, as_tensor, parameter

__all__ = [
    "Adam", "AdamState", "Conv2d", "FeatureMaps", "GaussianHeads", "GroupNorm", "HeadOutput",
    "HybridNet", "HybridNetConfig", "Linear", "Module", "ResBlock", "SelfAttention", "Tensor",
    "adam_step", "as_tensor", "ops", "parameter",
]
