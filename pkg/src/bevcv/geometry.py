"""Camera geometry and the multi-scale dense (MSD) image-to-BEV transform.

BEV grid conventions
--------------------
Cell ``(iz, ix)`` sits at metric lateral offset ``x = (ix - cells_x / 2) * dx``
and forward depth ``z = z_min + iz * dx`` (its near-left corner), so the
camera's forward axis passes exactly through column ``cells_x / 2`` when
``cells_x`` is even.  Row 0 is nearest to the camera.

Pyramid levels are ordered coarse to fine.  Level 0 (coarsest) covers the
farthest depth interval and the finest level covers the nearest one.

Each level ``i`` owns a feature-map focal length ``focal_px * W_i / image_w``
(the camera focal length divided by the level stride).  Together with the
grid resolution it gives ``pixel_scale``: feature pixels spanned by one BEV
cell at unit depth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidPartition, ShapeMismatch, ValidationError


@dataclass(frozen=True)
class CameraIntrinsics:
    focal_px: float = 160.0
    cx: float = 111.5
    cy: float = 111.5
    image_w: int = 224
    image_h: int = 224

    def __post_init__(self):
        if not self.focal_px > 0:
            raise ValidationError("focal_px", f"focal_px must be > 0, got {self.focal_px}")
        if self.image_w < 1 or self.image_h < 1:
            raise ValidationError("image_w", "image dimensions must be positive")
        if not 0 <= self.cx < self.image_w:
            raise ValidationError("cx", f"cx must be in [0, {self.image_w}), got {self.cx}")
        if not 0 <= self.cy < self.image_h:
            raise ValidationError("cy", f"cy must be in [0, {self.image_h}), got {self.cy}")

    @property
    def azimuth_range(self) -> tuple[float, float]:
        """Azimuths of the first and last image columns."""
        return column_to_azimuth(self, 0), column_to_azimuth(self, self.image_w - 1)


@dataclass(frozen=True)
class BevGridSpec:
    cells_x: int = 100
    cells_z: int = 100
    resolution_m: float = 0.5
    z_min_m: float = 1.0
    channels: int = 64

    def __post_init__(self):
        if self.cells_x < 1:
            raise ValidationError("cells_x", "cells_x must be >= 1")
        if self.cells_z < 1:
            raise ValidationError("cells_z", "cells_z must be >= 1")
        if not self.resolution_m > 0:
            raise ValidationError("resolution_m", "resolution_m must be > 0")
        if not self.z_min_m >= 0:
            raise ValidationError("z_min_m", "z_min_m must be >= 0")
        if self.channels < 1:
            raise ValidationError("channels", "channels must be >= 1")

    @property
    def z_max_m(self) -> float:
        return self.z_min_m + self.cells_z * self.resolution_m

    def cell_x(self) -> np.ndarray:
        return (np.arange(self.cells_x) - self.cells_x / 2.0) * self.resolution_m

    def cell_z(self) -> np.ndarray:
        return self.z_min_m + np.arange(self.cells_z) * self.resolution_m


@dataclass(frozen=True)
class DepthPartition:
    """Per-level cell-row ranges ``[row_lo, row_hi)`` and matching metric intervals."""

    rows: tuple[tuple[int, int], ...]
    intervals: tuple[tuple[float, float], ...]
    pixel_scale: tuple[float, ...]

    @property
    def n_levels(self) -> int:
        return len(self.rows)

    def row_counts(self) -> tuple[int, ...]:
        return tuple(hi - lo for lo, hi in self.rows)

    def level_of_row(self, row: int) -> int:
        for i, (lo, hi) in enumerate(self.rows):
            if lo <= row < hi:
                return i
        return -1


@dataclass(frozen=True, eq=False)
class ResampleMap:
    """Per-cell source lookup for the MSD transform.

    ``level`` is -1 for cells outside the frustum or depth range.  ``col`` and
    ``depth`` are fractional coordinates in the level's (depth-bin, column)
    polar feature plane.
    """

    level: np.ndarray
    col: np.ndarray
    depth: np.ndarray
    pyramid_dims: tuple[tuple[int, int], ...]
    depth_bins: tuple[int, ...]
    level_focal: tuple[float, ...]
    grid: BevGridSpec = field(repr=False)

    @property
    def valid(self) -> np.ndarray:
        return self.level >= 0


def column_to_azimuth(intr: CameraIntrinsics, u: float) -> float:
    """Azimuth (radians) of the polar ray seen by image column ``u``; positive to the right."""
    return math.atan((u - intr.cx) / intr.focal_px)


def build_depth_partition(intr: CameraIntrinsics, grid: BevGridSpec, n_levels: int) -> DepthPartition:
    """Split the grid's depth range into ``n_levels`` contiguous bands.

    Working outward from the camera, the two finest levels get ``u`` rows each
    and every coarser level doubles the previous one, with
    ``u = cells_z // 2**(n_levels - 1)``.  The coarsest level takes whatever
    rows remain, so a 100-row grid with five levels splits far-to-near as
    (52, 24, 12, 6, 6).
    """
    if n_levels < 1:
        raise InvalidPartition("n_levels must be >= 1")
    unit = grid.cells_z // (1 << (n_levels - 1))
    if unit < 1:
        raise InvalidPartition(
            f"cells_z={grid.cells_z} cannot give every one of {n_levels} levels a cell row "
            f"(need at least {1 << (n_levels - 1)})"
        )
    near_to_far = []
    for j in range(n_levels - 1):
        near_to_far.append(unit if j == 0 else unit << (j - 1))
    near_to_far.append(grid.cells_z - sum(near_to_far))
    counts = near_to_far[::-1]

    rows, intervals = [], []
    hi = grid.cells_z
    for c in counts:
        lo = hi - c
        rows.append((lo, hi))
        intervals.append((grid.z_min_m + lo * grid.resolution_m, grid.z_min_m + hi * grid.resolution_m))
        hi = lo
    strides = [2.0 ** (n_levels - i + 1) for i in range(n_levels)]
    scale = tuple(intr.focal_px * grid.resolution_m / s for s in strides)
    return DepthPartition(tuple(rows), tuple(intervals), scale)


def build_resample_map(intr: CameraIntrinsics, grid: BevGridSpec, part: DepthPartition,
                       pyramid_dims) -> ResampleMap:
    pyramid_dims = tuple((int(h), int(w)) for h, w in pyramid_dims)
    if len(pyramid_dims) != part.n_levels:
        raise ShapeMismatch(f"{len(pyramid_dims)} pyramid levels for a {part.n_levels}-level partition")

    xs = grid.cell_x()[None, :]
    zs = grid.cell_z()[:, None]
    row_level = np.array([part.level_of_row(r) for r in range(grid.cells_z)], dtype=np.int64)
    level = np.broadcast_to(row_level[:, None], (grid.cells_z, grid.cells_x)).copy()

    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.cx + intr.focal_px * xs / zs
    in_frustum = (zs > 0) & (u >= 0) & (u <= intr.image_w - 1)
    level[~in_frustum] = -1

    col = np.zeros(level.shape)
    depth = np.zeros(level.shape)
    focal = []
    bins = []
    for i, ((_, w_i), (z_lo, z_hi)) in enumerate(zip(pyramid_dims, part.intervals)):
        d_i = part.rows[i][1] - part.rows[i][0]
        bins.append(d_i)
        ratio = w_i / intr.image_w
        focal.append(intr.focal_px * ratio)
        sel = level == i
        c = (u + 0.5) * ratio - 0.5
        col[sel] = np.clip(c, 0.0, w_i - 1)[sel]
        dz = np.broadcast_to((zs - z_lo) / (z_hi - z_lo) * d_i, level.shape)
        depth[sel] = np.clip(dz, 0.0, d_i - 1)[sel]
    return ResampleMap(level, col, depth, pyramid_dims, tuple(bins), tuple(focal), grid)


def msd_transform(pyramid, rmap: ResampleMap, collapse) -> np.ndarray:
    """Resample a coarse-to-fine feature pyramid onto the BEV grid.

    ``collapse[i]`` is a (C_bev * D_i, C_in * H_i) matrix that turns each image
    column of level ``i`` into ``D_i`` depth bins of ``C_bev`` channels.  Cells
    then read their value from that polar plane by bilinear interpolation.
    Returns (C_bev, cells_z, cells_x) float32.
    """
    levels = list(getattr(pyramid, "levels", pyramid))
    grid = rmap.grid
    if len(levels) != len(rmap.pyramid_dims) or len(collapse) != len(levels):
        raise ShapeMismatch(
            f"pyramid has {len(levels)} levels, map {len(rmap.pyramid_dims)}, weights {len(collapse)}"
        )
    out = np.zeros((grid.channels, grid.cells_z, grid.cells_x))
    for i, (feat, k) in enumerate(zip(levels, collapse)):
        feat = np.asarray(feat)
        k = np.asarray(k)
        c_in, h_i, w_i = feat.shape
        if (h_i, w_i) != rmap.pyramid_dims[i]:
            raise ShapeMismatch(f"level {i} dims {(h_i, w_i)} != map dims {rmap.pyramid_dims[i]}")
        d_i = rmap.depth_bins[i]
        if k.shape != (grid.channels * d_i, c_in * h_i):
            raise ShapeMismatch(
                f"level {i} collapse weights {k.shape} != {(grid.channels * d_i, c_in * h_i)}"
            )
        sel = rmap.level == i
        if not sel.any():
            continue
        polar = k.astype(np.float64) @ feat.astype(np.float64).reshape(c_in * h_i, w_i)
        polar = polar.reshape(grid.channels, d_i, w_i)

        c = rmap.col[sel]
        d = rmap.depth[sel]
        c0 = np.floor(c).astype(np.intp)
        d0 = np.floor(d).astype(np.intp)
        c1 = np.minimum(c0 + 1, w_i - 1)
        d1 = np.minimum(d0 + 1, d_i - 1)
        fc = c - c0
        fd = d - d0
        val = (polar[:, d0, c0] * ((1 - fd) * (1 - fc)) + polar[:, d0, c1] * ((1 - fd) * fc)
               + polar[:, d1, c0] * (fd * (1 - fc)) + polar[:, d1, c1] * (fd * fc))
        out[:, sel] += val
    return out.astype(np.float32)
