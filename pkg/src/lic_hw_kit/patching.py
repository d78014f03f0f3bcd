"""Image tiling and overlapping patch extraction/reassembly.

Patch origins advance by a fixed stride along each axis; when the last
full patch would overrun the border, one extra origin is clamped so the
patch ends exactly at the edge. Reassembly averages every patch covering
a pixel with uniform weights, which reproduces the source bit for bit
when the patches are untouched (the sums run in float64, and k equal
float32 values averaged in float64 give back the value exactly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Tensor

__all__ = ["PatchGrid", "tile_to_resolution", "extract_patches", "reassemble"]


@dataclass(frozen=True)
class PatchGrid:
    """Geometry of one extraction: image extents, patch size, stride,
    and the row-major list of patch origins."""

    image_h: int
    image_w: int
    channels: int
    patch: int
    stride: int
    origins: tuple  # ((row, col), ...) row-major
    clamped: tuple  # parallel flags: True where an origin was clamped

    @property
    def count(self) -> int:
        return len(self.origins)


def tile_to_resolution(image: Tensor, target_h: int = 720,
                       target_w: int = 1280) -> Tensor:
    """Repeat the image modularly to cover the target, then crop.

    Output pixel (r, c) equals source pixel (r % h, c % w); a source
    already at the target passes through unchanged.
    """
    if target_h < 1 or target_w < 1:
        raise ShapeError("target extents must be positive")
    reps_h = -(-target_h // image.h)
    reps_w = -(-target_w // image.w)
    tiled = np.tile(image.data, (1, 1, reps_h, reps_w))
    return Tensor(tiled[:, :, :target_h, :target_w])


def _axis_origins(extent: int, patch: int, stride: int):
    if patch > extent:
        raise ShapeError(f"patch {patch} exceeds image extent {extent}")
    origins = list(range(0, extent - patch + 1, stride))
    clamped = [False] * len(origins)
    if origins[-1] + patch < extent:
        origins.append(extent - patch)
        clamped.append(True)
    return origins, clamped


def extract_patches(image: Tensor, patch: int = 256, stride: int = 56):
    """Slice the image into overlapping square patches.

    Returns (patches, grid): patches stacked on the batch axis in
    row-major origin order. The batch must be a single image.
    """
    if image.n != 1:
        raise ShapeError(f"patch extraction expects a single image; n={image.n}")
    if patch < 1 or stride < 1:
        raise ShapeError("patch and stride must be positive")
    rows, rflags = _axis_origins(image.h, patch, stride)
    cols, cflags = _axis_origins(image.w, patch, stride)
    origins = []
    clamped = []
    slices = []
    for r, rf in zip(rows, rflags):
        for c, cf in zip(cols, cflags):
            origins.append((r, c))
            clamped.append(rf or cf)
            slices.append(image.data[0, :, r:r + patch, c:c + patch])
    grid = PatchGrid(
        image_h=image.h, image_w=image.w, channels=image.c,
        patch=patch, stride=stride,
        origins=tuple(origins), clamped=tuple(clamped),
    )
    return Tensor(np.stack(slices, axis=0)), grid


def reassemble(patches: Tensor, grid: PatchGrid) -> Tensor:
    """Uniform-average the patches back onto the image canvas."""
    k = grid.patch
    if patches.n != grid.count:
        raise ShapeError(
            f"{patches.n} patches for a grid of {grid.count} origins"
        )
    if patches.c != grid.channels or patches.h != k or patches.w != k:
        raise ShapeError(
            f"patches have dims {patches.dims[1:]}, grid expects "
            f"({grid.channels}, {k}, {k})"
        )
    acc = np.zeros((grid.channels, grid.image_h, grid.image_w), dtype=np.float64)
    cover = np.zeros((grid.image_h, grid.image_w), dtype=np.float64)
    for i, (r, c) in enumerate(grid.origins):
        acc[:, r:r + k, c:c + k] += patches.data[i].astype(np.float64)
        cover[r:r + k, c:c + k] += 1.0
    if cover.min() < 1.0:
        raise ShapeError("grid leaves pixels uncovered")
    out = acc / cover[None, :, :]
    return Tensor(out[None].astype(np.float32))
