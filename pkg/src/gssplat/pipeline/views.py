from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from ..geometry import Camera


@dataclass
class ViewSet:
    """K posed views of one scene: RGB in [0, 1], planar depth (<= 0 invalid), labels."""

    images: np.ndarray            # K x H x W x 3
    depths: np.ndarray            # K x H x W
    cameras: list
    labels: np.ndarray | None = None  # K x H x W uint8, 255 = unlabelled
    scene_id: str = "scene"
    scene_extent: float = 1.0
    n_classes: int | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.depths = np.asarray(self.depths, dtype=np.float64)
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise ContractError(f"images must be K x H x W x 3, got {self.images.shape}")
        k, h, w, _ = self.images.shape
        if k < 1:
            raise ContractError("a view set needs at least one view")
        if self.depths.shape != (k, h, w):
            raise ContractError(f"depths must be {(k, h, w)}, got {self.depths.shape}")
        if len(self.cameras) != k:
            raise ContractError(f"{len(self.cameras)} cameras for {k} views")
        for cam in self.cameras:
            if not isinstance(cam, Camera) or (cam.height, cam.width) != (h, w):
                raise ContractError("camera intrinsics do not match the image size")
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(np.int64)
            if self.labels.shape != (k, h, w):
                raise ContractError(f"labels must be {(k, h, w)}, got {self.labels.shape}")

    def __len__(self):
        return self.images.shape[0]

    @property
    def height(self):
        return self.images.shape[1]

    @property
    def width(self):
        return self.images.shape[2]

    def subset(self, index):
        index = list(np.atleast_1d(index))
        return ViewSet(self.images[index], self.depths[index], [self.cameras[i] for i in index],
                       None if self.labels is None else self.labels[index], self.scene_id,
                       self.scene_extent, self.n_classes)

    def valid_counts(self):
        return [(int(np.count_nonzero((d > 0) & np.isfinite(d)))) for d in self.depths]
