"""Hybrid multi-view network: shared shallow trunk, early-exit colour branch, deeper
semantic branch with self-attention and depth-conditioned decoding."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigurationError, ContractError
from . import ops
from .layers import Conv2d, Linear, Module, ResBlock, SelfAttention
from .tensor import Tensor

TRUNK_BLOCKS = 6   # semantic path depth; the second stride-2 layer sits before block 5
COLOR_BLOCKS = 4   # colour path depth when it branches off early


@dataclass(frozen=True)
class HybridNetConfig:
    shared_blocks: int = 4
    attention_layers: int = 3
    encoder_channels: int = 32
    decoder_channels: int = 32
    n_classes: int = 6
    groups: int = 4
    image_skip: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.shared_blocks not in (2, 4, 6):
            raise ConfigurationError("shared_blocks must be 2, 4 or 6")
        if not 1 <= self.attention_layers <= 4:
            raise ConfigurationError("attention_layers must lie in 1..4")
        if self.encoder_channels % self.groups or self.decoder_channels % self.groups:
            raise ConfigurationError("channel counts must be divisible by groups")
        if self.n_classes < 1:
            raise ConfigurationError("n_classes must be positive")

    @property
    def color_stride(self):
        return 4 if self.shared_blocks > COLOR_BLOCKS else 2

    @property
    def semantic_stride(self):
        return 4

    def to_json(self):
        return json.dumps(asdict(self), indent=1, sort_keys=True)

    @classmethod
    def from_dict(cls, doc):
        return cls(**{k: v for k, v in doc.items() if k in cls.__dataclass_fields__})


@dataclass
class FeatureMaps:
    color: Tensor     # K x H x W x C_d  (F'_r)
    semantic: Tensor  # K x H x W x C_d  (F'_s)
    seg2d: Tensor     # K x H x W x η    (per-view logits)
    color_encoded: Tensor | None = None    # F_r
    semantic_encoded: Tensor | None = None  # F_s


def downsample_depth(depths, factor, scene_extent):
    """Mean of valid (positive) depth per factor x factor cell, divided by scene extent."""
    k, h, w = depths.shape
    if h % factor or w % factor:
        raise ContractError(f"image size {h}x{w} must be divisible by {factor}")
    valid = depths > 0
    d = np.where(valid, depths, 0.0).reshape(k, h // factor, factor, w // factor, factor)
    cnt = valid.reshape(d.shape).sum(axis=(2, 4))
    mean = d.sum(axis=(2, 4)) / np.maximum(cnt, 1)
    return (mean / scene_extent)[..., None]


class HybridNet(Module):
    def __init__(self, config: HybridNetConfig = HybridNetConfig()):
        self.config = config
        rng = np.random.default_rng(config.seed)
        ce, cd, g = config.encoder_channels, config.decoder_channels, config.groups
        self.stem = Conv2d(3, ce, rng, stride=2)
        self.trunk = [ResBlock(ce, g, rng) for _ in range(4)]
        self.down = Conv2d(ce, ce, rng, stride=2)
        self.trunk_deep = [ResBlock(ce, g, rng) for _ in range(TRUNK_BLOCKS - 4)]
        n_private = max(0, COLOR_BLOCKS - config.shared_blocks)
        self.color_private = [ResBlock(ce, g, rng) for _ in range(n_private)]
        self.attention = [SelfAttention(ce, g, rng) for _ in range(config.attention_layers)]
        skip = 3 if config.image_skip else 0
        self.color_in = Conv2d(ce, cd, rng)
        self.color_up = [Conv2d(cd, cd, rng) for _ in range(int(np.log2(config.color_stride)))]
        self.color_out = Conv2d(cd + skip, cd, rng)
        self.sem_in = Conv2d(ce + 1, cd, rng)
        self.sem_up = [Conv2d(cd, cd, rng) for _ in range(int(np.log2(config.semantic_stride)))]
        self.sem_out = Conv2d(cd + skip, cd, rng)
        self.seg_head = Linear(cd, config.n_classes, rng)

    def _decode(self, x, first, ups, last, images):
        x = ops.relu(first(x))
        for conv in ups:
            x = ops.relu(conv(ops.upsample2x(x)))
        if self.config.image_skip:
            x = ops.concat([x, images], axis=-1)
        return last(x)

    def __call__(self, images, depths, scene_extent=1.0):
        return self.forward(images, depths, scene_extent)

    def forward(self, images, depths, scene_extent=1.0) -> FeatureMaps:
        images = images if isinstance(images, Tensor) else Tensor(images)
        depths = np.asarray(depths, dtype=np.float64)
        if images.ndim != 4 or images.shape[-1] != 3:
            raise ContractError(f"images must be K x H x W x 3, got {images.shape}")
        k, h, w, _ = images.shape
        if depths.shape != (k, h, w):
            raise ContractError(f"depths must be {(k, h, w)}, got {depths.shape}")
        if h % 4 or w % 4:
            raise ContractError("image height and width must be multiples of 4")
        cfg = self.config
        x = self.stem(images)
        color_feat = None
        for i, block in enumerate(self.trunk):
            x = block(x)
            if i + 1 == cfg.shared_blocks:
                color_feat = x
        if cfg.shared_blocks == 2:
            for block in self.color_private:
                color_feat = block(color_feat)
        x = self.down(x)
        for block in self.trunk_deep:
            x = block(x)
        if cfg.shared_blocks == 6:
            color_feat = x
        for att in self.attention:
            x = att(x)
        sem_enc = x
        d = Tensor(downsample_depth(depths, cfg.semantic_stride, scene_extent))
        sem = self._decode(ops.concat([sem_enc, d], axis=-1), self.sem_in, self.sem_up,
                           self.sem_out, images)
        col = self._decode(color_feat, self.color_in, self.color_up, self.color_out, images)
        seg = self.seg_head(sem)
        return FeatureMaps(col, sem, seg, color_feat, sem_enc)
