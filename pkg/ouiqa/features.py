# coding: utf-8
"""Fixed (non-trainable) patch feature extractor.

The image is split in a ``grid_rows`` x ``grid_cols`` grid of patches and
each patch is described by the :data:`FEATURE_NAMES` statistics, always in
that order. Local maps (gradients, Laplacian, local contrast, normalized
luminance, block-boundary differences) are computed once on the whole
image and then pooled over each patch, so that patch borders do not
introduce artificial edges.
"""

from typing import List, NamedTuple, Sequence
import csv

import numpy as np
from scipy import fft, ndimage  # type: ignore

from .model import remove_namedtuple_defaultdoc
from .imgproc import Image, luma

FEATURE_NAMES = (
    "mean_r",
    "mean_g",
    "mean_b",
    "std_r",
    "std_g",
    "std_b",
    "gradient_mean",
    "gradient_std",
    "laplacian_energy",
    "local_contrast",
    "colorfulness",
    "saturation_mean",
    "saturation_std",
    "dct_high_low_ratio",
    "range_occupancy",
    "luma_mean",
    "luma_std",
    "luma_skewness",
    "luma_kurtosis",
    "mscn_variance",
    "mscn_product_h",
    "mscn_product_v",
    "blockiness",
    "clipped_fraction",
)
"""Names of the per-patch features, in the order of the vectors."""

FEATURE_WIDTH = len(FEATURE_NAMES)

OCCUPANCY_BINS = 32
BLOCK = 8
MSCN_SIGMA = 7.0 / 6.0
MSCN_C = 1.0 / 255.0
_EPS = 1e-12


class GridError(ValueError):
    """The image is too small for the requested grid"""


@remove_namedtuple_defaultdoc
class PatchFeatureGrid(NamedTuple):
    """Feature vectors of the patches of one image, in row-major patch order."""

    patches: np.ndarray
    """numpy.ndarray: array of shape ``(grid_rows * grid_cols, K)``."""

    grid_rows: int
    """int: number of patch rows."""

    grid_cols: int
    """int: number of patch columns."""

    @property
    def width(self) -> int:
        """int: feature dimensionality K."""
        return int(self.patches.shape[1])

    def __repr__(self):
        return "<PatchFeatureGrid {}x{}, K={}>".format(self.grid_rows, self.grid_cols, self.width)


###############################################################################
# Image statistics (also used by the distortion registry)
###############################################################################
def std(values: np.ndarray) -> float:
    """Population standard deviation, exactly 0 for constant inputs."""
    if values.size == 0 or np.ptp(values) == 0:
        return 0.0
    return float(np.std(values))


def laplacian_energy(channel: np.ndarray) -> float:
    """Mean squared discrete Laplacian of a 2D array."""
    return float(np.mean(ndimage.laplace(channel, mode="reflect") ** 2))


def colorfulness(data: np.ndarray) -> float:
    """Colorfulness metric of Hasler and Suesstrunk on ``(..., 3)`` samples."""
    red, green, blue = data[..., 0], data[..., 1], data[..., 2]
    rg = red - green
    yb = 0.5 * (red + green) - blue
    spread = np.sqrt(std(rg) ** 2 + std(yb) ** 2)
    offset = np.sqrt(np.mean(rg) ** 2 + np.mean(yb) ** 2)
    return float(spread + 0.3 * offset)


def saturation(data: np.ndarray) -> np.ndarray:
    """HSV saturation of every pixel, 0 for black pixels."""
    high = data.max(axis=-1)
    low = data.min(axis=-1)
    return np.where(high > 0, (high - low) / np.where(high > 0, high, 1.0), 0.0)


def dct_energy_ratio(channel: np.ndarray) -> float:
    """Ratio between the high and the low (non-DC) frequency energy of the
    orthonormal 2D DCT of a patch. High frequencies are those in the upper
    half of either axis."""
    height, width = channel.shape
    if height < 2 or width < 2:
        return 0.0
    energy = fft.dctn(channel, norm="ortho") ** 2
    rows, cols = np.indices(energy.shape)
    high = (rows >= (height + 1) // 2) | (cols >= (width + 1) // 2)
    low = ~high
    low[0, 0] = False
    return float(energy[high].sum() / (energy[low].sum() + _EPS))


def _moments(values: np.ndarray):
    deviation = std(values)
    if deviation == 0:
        return 0.0, 0.0
    z = (values - values.mean()) / deviation
    return float(np.mean(z ** 3)), float(np.mean(z ** 4) - 3.0)


###############################################################################
# Whole-image maps
###############################################################################
class _Maps(NamedTuple):
    gradient: np.ndarray
    laplacian: np.ndarray
    contrast: np.ndarray
    mscn: np.ndarray
    mscn_h: np.ndarray
    mscn_v: np.ndarray
    boundary_diff: np.ndarray
    boundary_mask: np.ndarray
    inner_mask: np.ndarray


def _image_maps(y: np.ndarray) -> _Maps:
    height, width = y.shape
    flat = np.ptp(y) == 0
    if height >= 2 and width >= 2:
        grad_rows, grad_cols = np.gradient(y)
        gradient = np.hypot(grad_rows, grad_cols)
    else:
        gradient = np.zeros_like(y)
    laplacian = ndimage.laplace(y, mode="reflect")
    if flat:
        contrast = np.zeros_like(y)
        mscn = np.zeros_like(y)
    else:
        contrast = np.abs(y - ndimage.uniform_filter(y, size=3, mode="reflect"))
        mu = ndimage.gaussian_filter(y, MSCN_SIGMA, mode="reflect")
        second_moment = ndimage.gaussian_filter(y * y, MSCN_SIGMA, mode="reflect")
        sigma = np.sqrt(np.abs(second_moment - mu * mu))
        mscn = (y - mu) / (sigma + MSCN_C)
    mscn_h = mscn * np.concatenate([mscn[:, 1:], mscn[:, -1:]], axis=1)
    mscn_v = mscn * np.concatenate([mscn[1:, :], mscn[-1:, :]], axis=0)

    # Absolute differences to the right and lower neighbours; positions at
    # the last row/column of each 8x8 block are block boundaries
    diff_h = np.zeros_like(y)
    diff_h[:, :-1] = np.abs(np.diff(y, axis=1))
    diff_v = np.zeros_like(y)
    diff_v[:-1, :] = np.abs(np.diff(y, axis=0))
    rows, cols = np.indices(y.shape)
    boundary_h = (cols % BLOCK == BLOCK - 1) & (cols < width - 1)
    boundary_v = (rows % BLOCK == BLOCK - 1) & (rows < height - 1)
    inner_h = (cols % BLOCK != BLOCK - 1) & (cols < width - 1)
    inner_v = (rows % BLOCK != BLOCK - 1) & (rows < height - 1)
    boundary_diff = np.stack([diff_h, diff_v])
    boundary_mask = np.stack([boundary_h, boundary_v])
    inner_mask = np.stack([inner_h, inner_v])
    return _Maps(
        gradient,
        laplacian,
        contrast,
        mscn,
        mscn_h,
        mscn_v,
        boundary_diff,
        boundary_mask,
        inner_mask,
    )


def _blockiness(diff: np.ndarray, boundary: np.ndarray, inner: np.ndarray) -> float:
    if not boundary.any() or not inner.any():
        return 0.0
    return float(diff[boundary].mean() - diff[inner].mean())


def _patch_vector(
    rgb: np.ndarray, y: np.ndarray, maps: _Maps, rows: slice, cols: slice
) -> List[float]:
    pixels = rgb.reshape(-1, 3)
    sat = saturation(rgb)
    histogram, _ = np.histogram(y, bins=OCCUPANCY_BINS, range=(0.0, 1.0))
    skewness, kurtosis = _moments(y)
    gradient = maps.gradient[rows, cols]
    mscn = maps.mscn[rows, cols]
    clipped = np.count_nonzero((rgb <= 0.5 / 255.0) | (rgb >= 1.0 - 0.5 / 255.0))
    return [
        *pixels.mean(axis=0),
        *(std(pixels[:, c]) for c in range(3)),
        float(gradient.mean()),
        std(gradient),
        float(np.mean(maps.laplacian[rows, cols] ** 2)),
        float(maps.contrast[rows, cols].mean()),
        colorfulness(rgb),
        float(sat.mean()),
        std(sat),
        dct_energy_ratio(y),
        np.count_nonzero(histogram) / OCCUPANCY_BINS,
        float(y.mean()),
        std(y),
        skewness,
        kurtosis,
        float(np.mean(mscn ** 2)),
        float(maps.mscn_h[rows, cols].mean()),
        float(maps.mscn_v[rows, cols].mean()),
        _blockiness(
            maps.boundary_diff[:, rows, cols],
            maps.boundary_mask[:, rows, cols],
            maps.inner_mask[:, rows, cols],
        ),
        clipped / rgb.size,
    ]


def patch_edges(size: int, parts: int) -> np.ndarray:
    """Integer boundaries splitting ``size`` pixels in ``parts`` patches."""
    return (np.arange(parts + 1) * size) // parts


def extract_patch_features(img: Image, grid_rows: int = 8, grid_cols: int = 8) -> PatchFeatureGrid:
    """Computes the feature vectors of the patches of an image.

    Args:
        img: the image.
        grid_rows: number of patch rows.
        grid_cols: number of patch columns.

    Returns:
        The grid of ``grid_rows * grid_cols`` vectors of
        :data:`FEATURE_WIDTH` finite values.

    Raises:
        GridError: if the image has fewer pixels than patches along some axis.
    """
    if grid_rows < 1 or grid_cols < 1:
        raise GridError("Grid dimensions must be positive, got {}x{}".format(grid_rows, grid_cols))
    if img.height < grid_rows or img.width < grid_cols:
        raise GridError(
            "A {}x{} image is too small for a {}x{} grid".format(
                img.width, img.height, grid_rows, grid_cols
            )
        )
    y = luma(img.data)
    maps = _image_maps(y)
    row_edges = patch_edges(img.height, grid_rows)
    col_edges = patch_edges(img.width, grid_cols)
    patches = np.empty((grid_rows * grid_cols, FEATURE_WIDTH))
    for r in range(grid_rows):
        rows = slice(row_edges[r], row_edges[r + 1])
        for c in range(grid_cols):
            cols = slice(col_edges[c], col_edges[c + 1])
            patches[r * grid_cols + c] = _patch_vector(
                img.data[rows, cols], y[rows, cols], maps, rows, cols
            )
    return PatchFeatureGrid(patches, grid_rows, grid_cols)


def write_features_csv(grid: PatchFeatureGrid, filename: str) -> None:
    """Dumps the grid as CSV: one row per patch, with its row and column
    followed by the named features."""
    with open(filename, "w", newline="") as stream:
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(("row", "col") + FEATURE_NAMES)
        for index, vector in enumerate(grid.patches):
            row, col = divmod(index, grid.grid_cols)
            writer.writerow([row, col] + [repr(float(value)) for value in vector])


def read_features_csv(filename: str) -> PatchFeatureGrid:
    """Inverse of :func:`write_features_csv`.

    Raises:
        ValueError: if the columns are not the expected ones.
    """
    with open(filename, newline="") as stream:
        reader = csv.reader(stream)
        header = next(reader)
        if tuple(header) != ("row", "col") + FEATURE_NAMES:
            raise ValueError("{}: unexpected feature columns".format(filename))
        rows = [line for line in reader if line]
    positions = [(int(line[0]), int(line[1])) for line in rows]
    patches = np.array([[float(value) for value in line[2:]] for line in rows])
    grid_rows = max(r for r, _ in positions) + 1
    grid_cols = max(c for _, c in positions) + 1
    return PatchFeatureGrid(patches, grid_rows, grid_cols)


def stack_patches(grids: Sequence[PatchFeatureGrid]) -> np.ndarray:
    """All the patch vectors of several grids, as a single 2D array."""
    return np.concatenate([grid.patches for grid in grids], axis=0)


__all__ = [
    "FEATURE_NAMES",
    "FEATURE_WIDTH",
    "GridError",
    "PatchFeatureGrid",
    "extract_patch_features",
    "write_features_csv",
    "read_features_csv",
    "colorfulness",
    "laplacian_energy",
]
