from .heads import projection_backward, projection_forward
from .model import (FeaturePyramid, LayerSpec, ModelConfig, PovBranch, aerial_features, fpn_merge,
                    init_weights, layer_graph, psi_compress, toy_backbone_forward, unet_forward)
from .ops import (batchnorm_apply, batchnorm_train, conv2d, leaky_relu, linear, maxpool2d,
                  transposed_conv2d, upsample2x_nearest)

__all__ = [
    "FeaturePyramid", "LayerSpec", "ModelConfig", "PovBranch", "aerial_features", "batchnorm_apply",
    "batchnorm_train", "conv2d", "fpn_merge", "init_weights", "layer_graph", "leaky_relu", "linear",
    "maxpool2d", "projection_backward", "projection_forward", "psi_compress", "toy_backbone_forward",
    "transposed_conv2d", "unet_forward", "upsample2x_nearest",
]
