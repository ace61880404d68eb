"""Binary lung mask extraction from a resampled CT volume (HU, not normalized).

Air is thresholded at -320 HU, connected components touching the volume
border are discarded as outside air, the two largest remaining internal air
components are kept (lungs may merge into one) and the result is dilated
with a ball structuring element to fill gaps in the lung tissue.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import NoLungFound
from .volume import CtVolume

DEFAULT_THRESHOLD_HU = -320.0
DEFAULT_DILATION_RADIUS = 2  # voxels

_CONNECTIVITY_26 = np.ones((3, 3, 3), dtype=bool)


@dataclass
class LungMask:
    """Binary lung mask aligned voxel-for-voxel with its source volume."""

    mask: np.ndarray
    scan_id: str = ""

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)


def ball(radius: int) -> np.ndarray:
    """Ball structuring element of the given voxel radius."""
    ax = np.arange(-radius, radius + 1)
    zz, yy, xx = np.meshgrid(ax, ax, ax, indexing="ij")
    return zz**2 + yy**2 + xx**2 <= radius**2


def segment_lungs(
    volume: CtVolume,
    threshold: float = DEFAULT_THRESHOLD_HU,
    dilation_radius: int = DEFAULT_DILATION_RADIUS,
) -> LungMask:
    """Extract the lung air mask from a resampled CT volume in HU."""
    air = volume.voxels < threshold
    labels, n_components = ndimage.label(air, structure=_CONNECTIVITY_26)
    if n_components == 0:
        raise NoLungFound(f"no voxel below {threshold} HU in {volume.scan_id!r}")

    border = np.zeros(volume.shape, dtype=bool)
    border[0, :, :] = border[-1, :, :] = True
    border[:, 0, :] = border[:, -1, :] = True
    border[:, :, 0] = border[:, :, -1] = True
    border_labels = np.unique(labels[border & air])

    counts = np.bincount(labels.ravel(), minlength=n_components + 1)
    counts[0] = 0
    counts[border_labels] = 0
    internal = np.flatnonzero(counts)
    if internal.size == 0:
        raise NoLungFound(f"all air components touch the border in {volume.scan_id!r}")
    keep = internal[np.argsort(counts[internal])[::-1][:2]]
    mask = np.isin(labels, keep)
    # nodules and vessels are non-air holes in the lung air; fill them so
    # candidate centers fall inside the mask
    mask = ndimage.binary_fill_holes(mask)
    if dilation_radius > 0:
        mask = ndimage.binary_dilation(mask, structure=ball(dilation_radius))
    return LungMask(mask, volume.scan_id)


def lung_z_bounds(lung_mask: LungMask) -> tuple[int, int]:
    """Minimal and maximal slice indices containing any lung voxel."""
    slices = np.flatnonzero(lung_mask.mask.any(axis=(1, 2)))
    if slices.size == 0:
        raise NoLungFound(f"empty lung mask for {lung_mask.scan_id!r}")
    return int(slices[0]), int(slices[-1])
