"""Grid densities over projected 2-D coordinates and signed density diffs.

Each batch of points is binned onto a fixed grid where a cell holds the
fraction of the batch falling into it. Grids are optionally smoothed with a
halo that keeps 70% of a cell's mass in place and spreads the remaining 30%
equally over the 24 surrounding cells of its 5x5 neighborhood; halo mass
crossing the extent is dropped. The diff of two grids is the cellwise
newer - older difference, positive where the newer batch is denser.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import convolve

DEFAULT_RESOLUTION = (40, 40)
EXTENT_PAD = 0.05

_HALO_KERNEL = np.full((5, 5), 0.3 / 24.0)
_HALO_KERNEL[2, 2] = 0.7


@dataclass(frozen=True)
class DensityGrid:
    resolution: tuple[int, int]  # (rows, cols); rows index y, cols index x
    extent: tuple[float, float, float, float]  # (xmin, xmax, ymin, ymax)
    values: np.ndarray
    sample_count: int
    smoothed: bool = False

    def total_mass(self) -> float:
        return float(self.values.sum())

    def to_dict(self) -> dict:
        return {
            "resolution": list(self.resolution),
            "extent": list(self.extent),
            "values": self.values.tolist(),
            "metadata": {
                "sample_count": self.sample_count,
                "smoothed": self.smoothed,
            },
        }


def _bin_index(value: float, low: float, step: float, n: int) -> int:
    raw = (value - low) / step
    idx = math.floor(raw)
    # a point exactly on a shared cell edge belongs to the lower-index cell;
    # this also folds the max edge inward
    if idx > 0 and raw == idx:
        idx -= 1
    return min(max(idx, 0), n - 1)


def rasterize(
    coords: np.ndarray,
    extent: tuple[float, float, float, float],
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
) -> DensityGrid:
    """Bin 2-D points into a rows x cols grid of batch-normalized counts."""
    rows, cols = resolution
    if rows < 2 or cols < 2:
        raise ValueError("resolution must be at least (2, 2)")
    xmin, xmax, ymin, ymax = extent
    if not (xmax > xmin and ymax > ymin):
        raise ValueError("extent is degenerate")
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    n = coords.shape[0]
    values = np.zeros((rows, cols))
    if n == 0:
        return DensityGrid(resolution, extent, values, 0)
    xstep = (xmax - xmin) / cols
    ystep = (ymax - ymin) / rows
    for x, y in coords:
        j = _bin_index(x, xmin, xstep, cols)
        i = _bin_index(y, ymin, ystep, rows)
        values[i, j] += 1.0
    values /= n
    return DensityGrid(resolution, extent, values, n)


def union_extent(*coord_sets: np.ndarray, pad: float = EXTENT_PAD):
    """Padded bounding box over one or more coordinate sets."""
    stacked = np.vstack([np.asarray(c, dtype=float).reshape(-1, 2) for c in coord_sets])
    if stacked.shape[0] == 0:
        return (0.0, 1.0, 0.0, 1.0)
    xmin, ymin = stacked.min(axis=0)
    xmax, ymax = stacked.max(axis=0)
    dx = (xmax - xmin) or 1.0
    dy = (ymax - ymin) or 1.0
    return (
        float(xmin - pad * dx),
        float(xmax + pad * dx),
        float(ymin - pad * dy),
        float(ymax + pad * dy),
    )


def halo_smooth(grid: DensityGrid) -> DensityGrid:
    """70/30 halo smoothing over the 5x5 neighborhood of every cell."""
    smoothed = convolve(grid.values, _HALO_KERNEL, mode="constant", cval=0.0)
    return DensityGrid(
        grid.resolution, grid.extent, smoothed, grid.sample_count, smoothed=True
    )


@dataclass(frozen=True)
class DensityDiff:
    resolution: tuple[int, int]
    extent: tuple[float, float, float, float]
    values: np.ndarray  # newer - older; positive where newer is denser
    smoothed: bool
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "resolution": list(self.resolution),
            "extent": list(self.extent),
            "values": self.values.tolist(),
            "metadata": {"smoothed": self.smoothed, **self.metadata},
        }


def density_diff(newer: DensityGrid, older: DensityGrid, **metadata) -> DensityDiff:
    """Signed cellwise difference between two compatible grids."""
    if newer.resolution != older.resolution or newer.extent != older.extent:
        raise ValueError("grids differ in resolution or extent")
    if newer.smoothed != older.smoothed:
        raise ValueError("cannot diff a smoothed grid against a raw one")
    return DensityDiff(
        resolution=newer.resolution,
        extent=newer.extent,
        values=newer.values - older.values,
        smoothed=newer.smoothed,
        metadata=metadata,
    )


def compare_batches(
    newer_coords: np.ndarray,
    older_coords: np.ndarray,
    resolution: tuple[int, int] = DEFAULT_RESOLUTION,
    *,
    smooth: bool = True,
    **metadata,
) -> DensityDiff:
    """Rasterize two point batches onto their shared extent and diff them."""
    extent = union_extent(newer_coords, older_coords)
    newer = rasterize(newer_coords, extent, resolution)
    older = rasterize(older_coords, extent, resolution)
    if smooth:
        newer = halo_smooth(newer)
        older = halo_smooth(older)
    return density_diff(newer, older, **metadata)
