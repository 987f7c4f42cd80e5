"""Image-to-embedding pipelines for both branches."""
from __future__ import annotations

import numpy as np

from .imaging import CropSpec, ImageRaster, fov_crop, resize_bilinear
from .net.heads import projection_forward
from .net.model import LayerWeights, ModelConfig, PovBranch, aerial_features


def _to_input(img: ImageRaster, size: int) -> np.ndarray:
    img = resize_bilinear(img, size, size)
    return img.to_tensor() - np.float32(0.5)


def preprocess_pov(pano: ImageRaster, crop: CropSpec, size: int = 224) -> ImageRaster:
    """Limited-FOV crop of a panorama followed by a square resize."""
    return resize_bilinear(fov_crop(pano, crop), size, size)


class Embedder:
    """Holds the weights and the prebuilt resample map for repeated embedding."""

    def __init__(self, cfg: ModelConfig, weights: LayerWeights):
        self.cfg = cfg
        self.weights = weights
        self._pov = None

    @property
    def pov_branch(self) -> PovBranch:
        if self._pov is None:
            self._pov = PovBranch(self.cfg, self.weights)
        return self._pov

    def pov_features(self, img: ImageRaster) -> np.ndarray:
        return self.pov_branch(_to_input(img, self.cfg.image_size))

    def aerial_features(self, img: ImageRaster) -> np.ndarray:
        return aerial_features(_to_input(img, self.cfg.image_size), self.cfg, self.weights)

    def embed_pov(self, pano: ImageRaster, crop: CropSpec) -> np.ndarray:
        feat = self.pov_features(fov_crop(pano, crop))
        return projection_forward(feat, self.weights, "pov").astype(np.float32)

    def embed_aerial(self, img: ImageRaster) -> np.ndarray:
        return projection_forward(self.aerial_features(img), self.weights, "aer").astype(np.float32)
