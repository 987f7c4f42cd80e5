"""Forward graphs of the two branches.

The POV branch runs ``toy_backbone_forward -> fpn_merge -> msd_transform ->
psi_compress`` and the aerial branch runs the U-Net encoder.  Both feed the
projection heads in :mod:`bevcv.net.heads`.

Weights are a flat ``dict`` of named float32 arrays.  Conv kernels are
(C_out, C_in, k, k); transposed-conv kernels are (C_in, C_out, k, k).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch
from ..geometry import (BevGridSpec, CameraIntrinsics, build_depth_partition,
                        build_resample_map, msd_transform)
from .ops import (batchnorm_apply, conv2d, conv_out_extent, leaky_relu, maxpool2d,
                  transposed_conv2d, upsample2x_nearest)

LayerWeights = dict  # name -> np.ndarray


@dataclass(frozen=True)
class ModelConfig:
    image_size: int = 224
    backbone_channels: tuple = (16, 32, 64, 128, 256)  # strides 4, 8, 16, 32, 64
    fpn_channels: int = 64
    psi_channels: tuple = (128, 256, 512)
    psi_strides: tuple = (4, 2, 2)
    unet_channels: tuple = (16, 32, 64, 128, 256, 2048)  # e_0 .. e_depth
    embed_dim: int = 512
    intrinsics: CameraIntrinsics = field(default_factory=CameraIntrinsics)
    grid: BevGridSpec = field(default_factory=BevGridSpec)

    @property
    def n_levels(self) -> int:
        return len(self.backbone_channels)

    @property
    def unet_depth(self) -> int:
        return len(self.unet_channels) - 1

    def backbone_dims(self) -> list[tuple[int, int]]:
        """Spatial dims of backbone outputs, coarse to fine."""
        s = conv_out_extent(self.image_size, 3, 2, 1)
        s = conv_out_extent(s, 2, 2, 0)
        dims = [s]
        for _ in range(self.n_levels - 1):
            s = conv_out_extent(s, 3, 2, 1)
            dims.append(s)
        return [(d, d) for d in reversed(dims)]

    def psi_dims(self) -> list[int]:
        s = self.grid.cells_z
        sizes = []
        for st in self.psi_strides:
            s = conv_out_extent(s, 3, st, 1)
            sizes.append(s)
        return sizes


@dataclass(frozen=True)
class FeaturePyramid:
    """Feature maps ordered coarse to fine, each (C, H, W)."""

    levels: tuple

    def __post_init__(self):
        levels = tuple(np.asarray(f) for f in self.levels)
        for a, b in zip(levels, levels[1:]):
            if a.ndim != 3 or b.ndim != 3:
                raise ShapeMismatch("pyramid levels must be (C, H, W)")
            for ext_a, ext_b in zip(a.shape[1:], b.shape[1:]):
                if ext_b not in (2 * ext_a, 2 * ext_a - 1):
                    raise ShapeMismatch(f"pyramid resolution does not double: {a.shape} -> {b.shape}")
        object.__setattr__(self, "levels", levels)

    @property
    def dims(self) -> list[tuple[int, int]]:
        return [f.shape[1:] for f in self.levels]

    def __len__(self):
        return len(self.levels)


def _get(weights, name):
    try:
        return weights[name]
    except KeyError:
        raise ShapeMismatch(f"missing weight tensor {name!r}") from None


def toy_backbone_forward(img, weights: LayerWeights) -> list[np.ndarray]:
    """Five feature maps at strides 4..64, returned coarse to fine."""
    img = np.asarray(img, dtype=np.float32)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ShapeMismatch(f"backbone expects (3, H, W) input, got {img.shape}")
    x = leaky_relu(conv2d(img, _get(weights, "backbone.stem.weight"), _get(weights, "backbone.stem.bias"),
                          stride=2, pad=1))
    x = maxpool2d(x, 2, 2)
    outs = [x]
    i = 1
    while f"backbone.stage{i}.weight" in weights:
        x = leaky_relu(conv2d(x, weights[f"backbone.stage{i}.weight"], _get(weights, f"backbone.stage{i}.bias"),
                              stride=2, pad=1))
        outs.append(x)
        i += 1
    return outs[::-1]


def _match_extent(up, target_hw):
    h, w = target_hw
    uh, uw = up.shape[1:]
    if uh - h not in (0, 1) or uw - w not in (0, 1):
        raise ShapeMismatch(f"upsampled level {up.shape[1:]} cannot align with {target_hw}")
    return up[:, :h, :w]


def fpn_merge(backbone_outputs, weights: LayerWeights) -> FeaturePyramid:
    """Top-down merge.  ``f_0 = lateral(R_n)``; ``f_i = fuse(lateral(R_{n-i}) ++ up(f_{i-1}))``.

    Upsampling is nearest 2x; an odd-sized target takes the top-left crop of
    the upsampled map.
    """
    levels = []
    for i, r in enumerate(backbone_outputs):
        lat = conv2d(r, _get(weights, f"fpn.lateral{i}.weight"), weights.get(f"fpn.lateral{i}.bias"))
        if i == 0:
            levels.append(lat)
            continue
        up = _match_extent(upsample2x_nearest(levels[-1]), lat.shape[1:])
        cat = np.concatenate([lat, up], axis=0)
        levels.append(conv2d(cat, _get(weights, f"fpn.fuse{i}.weight"), weights.get(f"fpn.fuse{i}.bias")))
    return FeaturePyramid(tuple(levels))


def _bn(x, weights, prefix):
    return batchnorm_apply(x, weights[f"{prefix}.scale"], weights[f"{prefix}.shift"],
                           weights[f"{prefix}.mean"], weights[f"{prefix}.var"])


def psi_compress(bev, weights: LayerWeights, strides=(4, 2, 2)) -> np.ndarray:
    """Three Conv-BatchNorm-LeakyReLU stages (3x3 kernels, pad 1)."""
    x = np.asarray(bev, dtype=np.float32)
    if x.ndim != 3:
        raise ShapeMismatch(f"psi_compress expects (C, Z, X), got {x.shape}")
    for s, stride in enumerate(strides):
        x = conv2d(x, _get(weights, f"psi.stage{s}.weight"), stride=stride, pad=1)
        x = leaky_relu(_bn(x, weights, f"psi.stage{s}.bn"))
    return x


def unet_forward(img, weights: LayerWeights, depth: int, decode: bool = True):
    """U-Net encoder/decoder.

    ``e_0`` is a stride-1 stem, each ``e_k`` halves the resolution, and
    ``d_i = e_{depth-i} ++ deconv(d_{i-1})`` with ``d_0 = e_depth``.  Returns
    ``(encoder_outputs, d_depth)``; the decoder is skipped when ``decode`` is
    false and ``None`` is returned in its place.
    """
    x = np.asarray(img, dtype=np.float32)
    if x.ndim != 3 or x.shape[1] != x.shape[2]:
        raise ShapeMismatch(f"unet expects a square (C, S, S) input, got {x.shape}")
    if x.shape[1] % (1 << depth):
        raise ShapeMismatch(f"input extent {x.shape[1]} not divisible by 2^{depth}")
    enc = [leaky_relu(conv2d(x, _get(weights, "unet.enc0.weight"), weights.get("unet.enc0.bias"), 1, 1))]
    for k in range(1, depth + 1):
        enc.append(leaky_relu(conv2d(enc[-1], _get(weights, f"unet.enc{k}.weight"),
                                     weights.get(f"unet.enc{k}.bias"), stride=2, pad=1)))
    if not decode:
        return enc, None
    d = enc[depth]
    for i in range(1, depth + 1):
        up = transposed_conv2d(d, _get(weights, f"unet.dec{i}.weight"), stride=2, b=weights.get(f"unet.dec{i}.bias"))
        skip = enc[depth - i]
        if up.shape[1:] != skip.shape[1:]:
            raise ShapeMismatch(f"decoder stage {i} produced {up.shape[1:]}, skip is {skip.shape[1:]}")
        d = np.concatenate([skip, up], axis=0)
    return enc, d


# --------------------------------------------------------------------------- full branches


class PovBranch:
    """Backbone + FPN + MSD + psi, with the resample map built once."""

    def __init__(self, cfg: ModelConfig, weights: LayerWeights):
        self.cfg = cfg
        self.weights = weights
        part = build_depth_partition(cfg.intrinsics, cfg.grid, cfg.n_levels)
        self.partition = part
        self.rmap = build_resample_map(cfg.intrinsics, cfg.grid, part, cfg.backbone_dims())
        self.collapse = [_get(weights, f"msd.level{i}.collapse") for i in range(cfg.n_levels)]

    def bev_features(self, img) -> np.ndarray:
        pyr = fpn_merge(toy_backbone_forward(img, self.weights), self.weights)
        return msd_transform(pyr, self.rmap, self.collapse)

    def __call__(self, img) -> np.ndarray:
        return psi_compress(self.bev_features(img), self.weights, self.cfg.psi_strides)


def aerial_features(img, cfg: ModelConfig, weights: LayerWeights) -> np.ndarray:
    enc, _ = unet_forward(img, weights, cfg.unet_depth, decode=False)
    return enc[-1]


# --------------------------------------------------------------------------- initialisation


def _he(rng, shape, fan_in):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


def _bn_params(w, prefix, c):
    w[f"{prefix}.scale"] = np.ones(c, np.float32)
    w[f"{prefix}.shift"] = np.zeros(c, np.float32)
    w[f"{prefix}.mean"] = np.zeros(c, np.float32)
    w[f"{prefix}.var"] = np.ones(c, np.float32)


def init_head_weights(rng, embed_dim: int, aerial_in: int) -> LayerWeights:
    w = {}
    for branch in ("pov", "aer"):
        p = f"proj_{branch}"
        if branch == "aer":
            w[f"{p}.reduce.weight"] = _he(rng, (embed_dim, aerial_in), aerial_in)
            w[f"{p}.reduce.bias"] = np.zeros(embed_dim, np.float32)
        _bn_params(w, f"{p}.bn", embed_dim)
        w[f"{p}.fc.weight"] = _he(rng, (embed_dim, embed_dim), embed_dim)
        w[f"{p}.fc.bias"] = np.zeros(embed_dim, np.float32)
    return w


def init_weights(cfg: ModelConfig, seed: int) -> LayerWeights:
    """Deterministic random weights for every layer of both branches."""
    rng = np.random.default_rng(seed)
    w: LayerWeights = {}
    bc = cfg.backbone_channels
    w["backbone.stem.weight"] = _he(rng, (bc[0], 3, 3, 3), 27)
    w["backbone.stem.bias"] = np.zeros(bc[0], np.float32)
    for i in range(1, len(bc)):
        w[f"backbone.stage{i}.weight"] = _he(rng, (bc[i], bc[i - 1], 3, 3), bc[i - 1] * 9)
        w[f"backbone.stage{i}.bias"] = np.zeros(bc[i], np.float32)

    c = cfg.fpn_channels
    coarse_to_fine = bc[::-1]
    for i, cin in enumerate(coarse_to_fine):
        w[f"fpn.lateral{i}.weight"] = _he(rng, (c, cin, 1, 1), cin)
        w[f"fpn.lateral{i}.bias"] = np.zeros(c, np.float32)
        if i:
            w[f"fpn.fuse{i}.weight"] = _he(rng, (c, 2 * c, 1, 1), 2 * c)
            w[f"fpn.fuse{i}.bias"] = np.zeros(c, np.float32)

    part = build_depth_partition(cfg.intrinsics, cfg.grid, cfg.n_levels)
    for i, (h, _) in enumerate(cfg.backbone_dims()):
        d_i = part.rows[i][1] - part.rows[i][0]
        fan_in = c * h
        w[f"msd.level{i}.collapse"] = (rng.standard_normal((cfg.grid.channels * d_i, fan_in))
                                       * np.sqrt(1.0 / fan_in)).astype(np.float32)

    cin = cfg.grid.channels
    for s, cout in enumerate(cfg.psi_channels):
        w[f"psi.stage{s}.weight"] = _he(rng, (cout, cin, 3, 3), cin * 9)
        _bn_params(w, f"psi.stage{s}.bn", cout)
        cin = cout

    uc = cfg.unet_channels
    w["unet.enc0.weight"] = _he(rng, (uc[0], 3, 3, 3), 27)
    w["unet.enc0.bias"] = np.zeros(uc[0], np.float32)
    for k in range(1, len(uc)):
        w[f"unet.enc{k}.weight"] = _he(rng, (uc[k], uc[k - 1], 3, 3), uc[k - 1] * 9)
        w[f"unet.enc{k}.bias"] = np.zeros(uc[k], np.float32)
    depth = len(uc) - 1
    d_ch = uc[depth]
    for i in range(1, depth + 1):
        skip = uc[depth - i]
        w[f"unet.dec{i}.weight"] = _he(rng, (d_ch, skip, 2, 2), d_ch * 4)
        w[f"unet.dec{i}.bias"] = np.zeros(skip, np.float32)
        d_ch = 2 * skip

    w.update(init_head_weights(rng, cfg.embed_dim, uc[-1]))
    return w


# --------------------------------------------------------------------------- layer graph


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a graph description, enough for closed-form cost counting.

    ``kind`` is one of conv, deconv, fc, bn, matmul.  For conv/deconv, ``in_hw``
    is the input extent and ``out_hw`` the output extent.  A ``matmul`` layer
    applies an (out_features x in_features) matrix to ``columns`` vectors
    without bias.
    """

    name: str
    kind: str
    in_features: int
    out_features: int
    kernel: int = 1
    in_hw: tuple = (1, 1)
    out_hw: tuple = (1, 1)
    bias: bool = True
    columns: int = 1


def layer_graph(cfg: ModelConfig) -> list[LayerSpec]:
    """Shape-annotated description of every weighted layer in both branches."""
    g = []
    bc = cfg.backbone_channels
    s = cfg.image_size
    o = conv_out_extent(s, 3, 2, 1)
    g.append(LayerSpec("backbone.stem", "conv", 3, bc[0], 3, (s, s), (o, o)))
    s = conv_out_extent(o, 2, 2, 0)
    for i in range(1, len(bc)):
        o = conv_out_extent(s, 3, 2, 1)
        g.append(LayerSpec(f"backbone.stage{i}", "conv", bc[i - 1], bc[i], 3, (s, s), (o, o)))
        s = o
    c = cfg.fpn_channels
    dims = cfg.backbone_dims()
    for i, (cin, hw) in enumerate(zip(bc[::-1], dims)):
        g.append(LayerSpec(f"fpn.lateral{i}", "conv", cin, c, 1, hw, hw))
        if i:
            g.append(LayerSpec(f"fpn.fuse{i}", "conv", 2 * c, c, 1, hw, hw))
    part = build_depth_partition(cfg.intrinsics, cfg.grid, cfg.n_levels)
    for i, (h, wd) in enumerate(dims):
        d_i = part.rows[i][1] - part.rows[i][0]
        g.append(LayerSpec(f"msd.level{i}", "matmul", c * h, cfg.grid.channels * d_i, bias=False, columns=wd))
    cin, s = cfg.grid.channels, cfg.grid.cells_z
    sx = cfg.grid.cells_x
    for k, (cout, st) in enumerate(zip(cfg.psi_channels, cfg.psi_strides)):
        o, ox = conv_out_extent(s, 3, st, 1), conv_out_extent(sx, 3, st, 1)
        g.append(LayerSpec(f"psi.stage{k}", "conv", cin, cout, 3, (s, sx), (o, ox), bias=False))
        g.append(LayerSpec(f"psi.stage{k}.bn", "bn", cout, cout, out_hw=(o, ox)))
        cin, s, sx = cout, o, ox
    uc = cfg.unet_channels
    s = cfg.image_size
    g.append(LayerSpec("unet.enc0", "conv", 3, uc[0], 3, (s, s), (s, s)))
    for k in range(1, len(uc)):
        o = conv_out_extent(s, 3, 2, 1)
        g.append(LayerSpec(f"unet.enc{k}", "conv", uc[k - 1], uc[k], 3, (s, s), (o, o)))
        s = o
    e = cfg.embed_dim
    g.append(LayerSpec("proj_aer.reduce", "fc", uc[-1], e))
    for branch in ("pov", "aer"):
        g.append(LayerSpec(f"proj_{branch}.bn", "bn", e, e))
        g.append(LayerSpec(f"proj_{branch}.fc", "fc", e, e))
    return g
