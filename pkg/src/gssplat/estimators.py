"""scikit-learn style wrappers around training, reconstruction and per-scene fitting."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .geometry import Camera
from .neural import HybridNetConfig
from .objective import LossWeights
from .pipeline.evaluate import evaluate, score_views
from .pipeline.fit import FitConfig, fit_scene
from .pipeline.model import GSsplatModel, ReconstructionConfig, reconstruct
from .pipeline.train import TrainConfig, train
from .rasterizer import RasterConfig, rasterize
from .validation import check_is_fitted, check_non_negative, check_positive, check_scenes, \
    check_view_set


class GSSplatReconstructor(BaseEstimator):
    """Feed-forward reconstructor: ``fit`` trains on scenes, ``predict`` reconstructs one.

    ``fit`` takes a list of ``(source, novel)`` ViewSet pairs (a bare ViewSet counts as one
    scene); ``predict`` returns a ``ReconstructionResult``; ``score`` is the mean novel-view
    mIoU.
    """

    def __init__(self, shared_blocks=4, attention_layers=3, encoder_channels=32,
                 decoder_channels=32, n_classes=6, steps=500, learning_rate=5e-4,
                 lambda_mse=10.0, lambda_offset=0.2, n_source=2, interaction=True,
                 unit_interval=None, tile_size=8, random_state=0):
        self.shared_blocks = shared_blocks
        self.attention_layers = attention_layers
        self.encoder_channels = encoder_channels
        self.decoder_channels = decoder_channels
        self.n_classes = n_classes
        self.steps = steps
        self.learning_rate = learning_rate
        self.lambda_mse = lambda_mse
        self.lambda_offset = lambda_offset
        self.n_source = n_source
        self.interaction = interaction
        self.unit_interval = unit_interval
        self.tile_size = tile_size
        self.random_state = random_state

    def _configs(self):
        check_non_negative(self.learning_rate, "learning_rate")
        check_positive(self.n_source, "n_source", integer=True)
        net = HybridNetConfig(self.shared_blocks, self.attention_layers, self.encoder_channels,
                              self.decoder_channels, self.n_classes, seed=self.random_state)
        recon = ReconstructionConfig(unit_interval=self.unit_interval,
                                     interaction=self.interaction)
        tc = TrainConfig(steps=int(self.steps), lr=self.learning_rate, n_source=self.n_source,
                         weights=LossWeights(self.lambda_mse, self.lambda_offset),
                         raster=RasterConfig(tile_size=self.tile_size), seed=self.random_state,
                         log_every=0)
        return net, recon, tc

    def fit(self, scenes, y=None):
        scenes = check_scenes(scenes, require_labels=True)
        net, recon, tc = self._configs()
        result = train(scenes, GSsplatModel(net, recon), tc)
        self.model_ = result.model
        self.history_ = result.history
        return self

    def predict(self, views):
        check_is_fitted(self, "model_")
        return reconstruct(self.model_, check_view_set(views))

    def score(self, scenes, y=None):
        check_is_fitted(self, "model_")
        report = evaluate(check_scenes(scenes), model=self.model_,
                          raster=RasterConfig(tile_size=self.tile_size))
        return report["miou"]


class SceneFitter(BaseEstimator):
    """Per-scene optimiser: ``fit`` on source views, ``predict`` renders cameras,
    ``score`` is the mean PSNR on held-out views."""

    def __init__(self, steps=2000, semantic_steps=600, stride=3, lambda_mse=10.0, tile_size=8,
                 random_state=0):
        self.steps = steps
        self.semantic_steps = semantic_steps
        self.stride = stride
        self.lambda_mse = lambda_mse
        self.tile_size = tile_size
        self.random_state = random_state

    def _config(self):
        return FitConfig(steps=int(self.steps), semantic_steps=int(self.semantic_steps),
                         stride=int(self.stride),
                         mse_weight=check_non_negative(self.lambda_mse, "lambda_mse"),
                         raster=RasterConfig(tile_size=self.tile_size), seed=self.random_state)

    def fit(self, views, y=None):
        views = check_view_set(views)
        result = fit_scene(views, self._config())
        self.color_, self.semantic_ = result.color, result.semantic
        self.history_ = result.history
        return self

    def predict(self, cameras):
        """Colour images (K x H x W x 3) and label maps (K x H x W) for ``cameras``."""
        check_is_fitted(self, "color_")
        cameras = [cameras] if isinstance(cameras, Camera) else list(cameras)
        raster = RasterConfig(tile_size=self.tile_size)
        images = np.stack([rasterize(self.color_, c, raster).channels for c in cameras])
        labels = np.stack([rasterize(self.semantic_, c, raster).argmax() for c in cameras])
        return images, labels

    def score(self, views, y=None):
        check_is_fitted(self, "color_")
        scores, _ = score_views(self.color_, self.semantic_, check_view_set(views),
                                RasterConfig(tile_size=self.tile_size))
        return scores["psnr"]
