"""CT volume data model, MetaImage-subset I/O, preprocessing and cube extraction.

Volumes are stored as (z, y, x) arrays of Hounsfield units with per-axis
physical spacing in mm and an axis-aligned world origin.  File I/O uses a
MetaImage-style header + little-endian raw pair (the format LUNA16 ships),
restricted to the keys NDims, DimSize, ElementSpacing, Offset, ElementType
and ElementDataFile.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ConfigError, CorruptData, FormatError, OutOfBounds, ResampleError

CUBE_SIDE = 32  # mm and voxels at 1 mm isotropic spacing

DEFAULT_CLIP_LO = -1000.0  # HU, air
DEFAULT_CLIP_HI = 400.0  # HU, bone-ish soft tissue ceiling

_ELEMENT_TYPES = {
    "MET_CHAR": np.int8,
    "MET_UCHAR": np.uint8,
    "MET_SHORT": np.int16,
    "MET_USHORT": np.uint16,
    "MET_INT": np.int32,
    "MET_UINT": np.uint32,
    "MET_FLOAT": np.float32,
    "MET_DOUBLE": np.float64,
}
_NUMPY_TO_MET = {np.dtype(v): k for k, v in _ELEMENT_TYPES.items()}


@dataclass
class CtVolume:
    """A CT scan: HU voxel grid indexed (z, y, x) plus physical geometry."""

    voxels: np.ndarray
    spacing: tuple[float, float, float]  # mm per voxel, (z, y, x)
    origin: tuple[float, float, float]  # world mm of voxel (0, 0, 0)
    scan_id: str = ""

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels)
        if self.voxels.ndim != 3 or min(self.voxels.shape) < 1:
            raise FormatError(f"expected a non-empty 3D grid, got shape {self.voxels.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or len(self.origin) != 3:
            raise FormatError("spacing and origin must have 3 components")
        if any(s <= 0 for s in self.spacing):
            raise FormatError(f"spacing must be strictly positive, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.voxels.shape

    def voxel_to_world(self, index) -> np.ndarray:
        """World mm coordinate of a (z, y, x) voxel index (fractional allowed)."""
        return np.asarray(self.origin) + np.asarray(index, dtype=float) * np.asarray(self.spacing)

    def world_to_voxel(self, world) -> np.ndarray:
        """Fractional (z, y, x) voxel index of a world mm coordinate."""
        return (np.asarray(world, dtype=float) - np.asarray(self.origin)) / np.asarray(self.spacing)


@dataclass
class VoxelCube:
    """A 32x32x32 normalized-intensity cube cut around a candidate center."""

    values: np.ndarray
    center_world: tuple[float, float, float]
    scan_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.shape != (CUBE_SIDE, CUBE_SIDE, CUBE_SIDE):
            raise FormatError(f"cube must be {CUBE_SIDE}^3, got {self.values.shape}")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise FormatError("cube values must lie in [0, 1]")


def _parse_header(path: str) -> dict:
    header = {}
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected 'Key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            header[key] = value
    return header


def load_volume(path: str) -> CtVolume:
    """Read a MetaImage-subset header (+ raw payload) into a CtVolume.

    The header stores DimSize/ElementSpacing/Offset in (x, y, z) order; the
    returned volume uses (z, y, x) throughout.
    """
    header = _parse_header(path)
    for key in ("NDims", "DimSize", "ElementSpacing", "ElementType", "ElementDataFile"):
        if key not in header:
            raise FormatError(f"{path}: missing required header key {key}")
    if header["NDims"] != "3":
        raise FormatError(f"{path}: only 3D volumes supported, NDims={header['NDims']}")
    try:
        dims_xyz = [int(t) for t in header["DimSize"].split()]
        spacing_xyz = [float(t) for t in header["ElementSpacing"].split()]
        offset_xyz = [float(t) for t in header.get("Offset", "0 0 0").split()]
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric geometry field: {exc}") from exc
    if not (len(dims_xyz) == len(spacing_xyz) == len(offset_xyz) == 3):
        raise FormatError(f"{path}: geometry fields must have 3 components")
    if header["ElementType"] not in _ELEMENT_TYPES:
        raise FormatError(f"{path}: unsupported ElementType {header['ElementType']}")
    dtype = np.dtype(_ELEMENT_TYPES[header["ElementType"]]).newbyteorder("<")

    raw_name = header["ElementDataFile"]
    raw_path = os.path.join(os.path.dirname(os.path.abspath(path)), raw_name)
    payload = np.fromfile(raw_path, dtype=dtype)
    expected = dims_xyz[0] * dims_xyz[1] * dims_xyz[2]
    if payload.size != expected:
        raise CorruptData(
            f"{raw_path}: expected {expected} elements for DimSize {dims_xyz}, found {payload.size}"
        )
    # x varies fastest on disk -> reshape to (z, y, x)
    voxels = payload.reshape(dims_xyz[::-1]).astype(np.float32)
    scan_id = os.path.splitext(os.path.basename(path))[0]
    return CtVolume(voxels, tuple(spacing_xyz[::-1]), tuple(offset_xyz[::-1]), scan_id)


def save_volume(volume: CtVolume, path: str, element_type: str | None = None) -> None:
    """Write a CtVolume as a MetaImage-subset .mhd/.raw pair."""
    if element_type is None:
        element_type = "MET_FLOAT"
    if element_type not in _ELEMENT_TYPES:
        raise FormatError(f"unsupported ElementType {element_type}")
    dtype = np.dtype(_ELEMENT_TYPES[element_type]).newbyteorder("<")
    raw_name = os.path.splitext(os.path.basename(path))[0] + ".raw"
    dims_xyz = volume.shape[::-1]
    spacing_xyz = volume.spacing[::-1]
    offset_xyz = volume.origin[::-1]
    with open(path, "w") as fh:
        fh.write("NDims = 3\n")
        fh.write("DimSize = {} {} {}\n".format(*dims_xyz))
        fh.write("ElementSpacing = {} {} {}\n".format(*spacing_xyz))
        fh.write("Offset = {} {} {}\n".format(*offset_xyz))
        fh.write(f"ElementType = {element_type}\n")
        fh.write(f"ElementDataFile = {raw_name}\n")
    volume.voxels.astype(dtype).tofile(os.path.join(os.path.dirname(os.path.abspath(path)), raw_name))


def clip_and_normalize(
    volume: CtVolume, lo: float = DEFAULT_CLIP_LO, hi: float = DEFAULT_CLIP_HI
) -> CtVolume:
    """Clip HU to [lo, hi] and rescale linearly to [0, 1]."""
    if lo >= hi:
        raise ConfigError(f"clip window must satisfy lo < hi, got [{lo}, {hi}]")
    values = (np.clip(volume.voxels, lo, hi) - lo) / (hi - lo)
    return CtVolume(values.astype(np.float32), volume.spacing, volume.origin, volume.scan_id)


def resample_isotropic(
    volume: CtVolume, target: tuple[float, float, float] = (1.0, 1.0, 1.0)
) -> CtVolume:
    """Trilinearly resample a volume to the target spacing (default 1 mm iso).

    The output shape along each axis is round-half-away-from-zero of
    shape * spacing / target; the origin is preserved.
    """
    target = tuple(float(t) for t in target)
    if any(t <= 0 for t in target):
        raise ConfigError(f"target spacing must be positive, got {target}")
    in_shape = np.array(volume.shape, dtype=float)
    spacing = np.array(volume.spacing)
    out_shape = np.floor(in_shape * spacing / np.array(target) + 0.5).astype(int)
    if np.any(out_shape < 1):
        raise ResampleError(
            f"resampling {volume.shape} @ {volume.spacing} to {target} collapses an axis"
        )
    if tuple(out_shape) == volume.shape and np.allclose(spacing, target):
        return CtVolume(volume.voxels.copy(), target, volume.origin, volume.scan_id)
    grids = np.meshgrid(
        *(np.arange(n) * t / s for n, t, s in zip(out_shape, target, spacing)),
        indexing="ij",
    )
    values = ndimage.map_coordinates(
        volume.voxels.astype(np.float32), np.stack(grids), order=1, mode="nearest"
    )
    return CtVolume(values, target, volume.origin, volume.scan_id)


def extract_cube(volume: CtVolume, center_world) -> VoxelCube:
    """Cut a 32^3 cube centered on the voxel nearest to a world coordinate.

    The volume must already be clipped+normalized and resampled to 1 mm
    isotropic.  Out-of-volume regions are padded with 0.0 (air).
    """
    center_world = tuple(float(c) for c in center_world)
    frac_index = volume.world_to_voxel(center_world)
    spacing = np.asarray(volume.spacing)
    shape = np.asarray(volume.shape)
    # distance (mm) from the volume bounding box along each axis
    overshoot_mm = np.maximum(-frac_index, frac_index - (shape - 1)) * spacing
    if np.any(overshoot_mm > CUBE_SIDE / 2):
        raise OutOfBounds(
            f"center {center_world} is {overshoot_mm.max():.1f} mm outside volume {volume.scan_id!r}"
        )
    center = np.floor(frac_index + 0.5).astype(int)
    half = CUBE_SIDE // 2
    out = np.zeros((CUBE_SIDE, CUBE_SIDE, CUBE_SIDE), dtype=np.float32)
    lo = center - half
    hi = center + half
    src = tuple(slice(max(l, 0), min(h, s)) for l, h, s in zip(lo, hi, shape))
    dst = tuple(
        slice(max(l, 0) - l, CUBE_SIDE - (h - min(h, s))) for l, h, s in zip(lo, hi, shape)
    )
    out[dst] = volume.voxels[src]
    return VoxelCube(out, center_world, volume.scan_id)
