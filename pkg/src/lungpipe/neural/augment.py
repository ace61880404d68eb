"""In-plane data augmentation for training cubes.

All geometry acts in the axial (y, x) plane, applied uniformly across
slices: optional multiples of 90-degree rotation, small shear, zoom, shift
and horizontal/vertical flips.  Labels are never touched and outputs are
clamped back to [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..volume import VoxelCube


@dataclass
class AugmentationConfig:
    rot90: bool = True
    shear: float = 0.02
    zoom_range: float = 0.1
    shift: float = 0.05  # fraction of the cube side
    flip_h: bool = True
    flip_v: bool = True
    factor: int | dict = 10  # replication count, or per-class-label dict

    def __post_init__(self):
        for name in ("shear", "zoom_range", "shift"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        factors = self.factor.values() if isinstance(self.factor, dict) else [self.factor]
        if any(f < 1 for f in factors):
            raise ValueError("replication factor must be >= 1")

    def factor_for(self, label) -> int:
        if isinstance(self.factor, dict):
            return int(self.factor.get(label, 1))
        return int(self.factor)

    @property
    def identity(self) -> bool:
        return (
            not self.rot90
            and not self.flip_h
            and not self.flip_v
            and self.shear == 0
            and self.zoom_range == 0
            and self.shift == 0
        )


def apply_geometry(
    values: np.ndarray,
    rot90_k: int = 0,
    shear: float = 0.0,
    zoom: float = 1.0,
    shift_yx: tuple[float, float] = (0.0, 0.0),
    flip_h: bool = False,
    flip_v: bool = False,
) -> np.ndarray:
    """Deterministic geometric transform of a cube in the (y, x) plane.

    Rotations and flips are exact array operations; shear/zoom/shift run
    through a single linear interpolation when they are non-trivial.
    """
    out = values
    if shear != 0.0 or zoom != 1.0 or shift_yx != (0.0, 0.0):
        side = values.shape[1]
        center = (side - 1) / 2.0
        # output->input map around the slice center: scale by 1/zoom, shear x by y
        linear = np.array([[1.0 / zoom, 0.0], [shear, 1.0 / zoom]])
        offset = (
            np.array([center, center])
            - linear @ np.array([center, center])
            - np.asarray(shift_yx)
        )
        matrix = np.eye(3)
        matrix[1:, 1:] = linear
        full_offset = np.array([0.0, offset[0], offset[1]])
        out = ndimage.affine_transform(
            out.astype(np.float32), matrix, offset=full_offset, order=1, mode="nearest"
        )
    if rot90_k % 4:
        out = np.rot90(out, k=rot90_k % 4, axes=(1, 2))
    if flip_v:
        out = out[:, ::-1, :]
    if flip_h:
        out = out[:, :, ::-1]
    return np.clip(np.ascontiguousarray(out, dtype=np.float32), 0.0, 1.0)


def augment(cube: VoxelCube, cfg: AugmentationConfig, rng: np.random.Generator) -> VoxelCube:
    """Randomly transformed copy of a cube (identity config returns it bit-equal)."""
    if cfg.identity:
        return VoxelCube(cube.values.copy(), cube.center_world, cube.scan_id)
    side = cube.values.shape[1]
    values = apply_geometry(
        cube.values,
        rot90_k=int(rng.integers(0, 4)) if cfg.rot90 else 0,
        shear=float(rng.uniform(-cfg.shear, cfg.shear)) if cfg.shear else 0.0,
        zoom=float(rng.uniform(1 - cfg.zoom_range, 1 + cfg.zoom_range))
        if cfg.zoom_range
        else 1.0,
        shift_yx=tuple(rng.uniform(-cfg.shift * side, cfg.shift * side, 2))
        if cfg.shift
        else (0.0, 0.0),
        flip_h=cfg.flip_h and bool(rng.integers(0, 2)),
        flip_v=cfg.flip_v and bool(rng.integers(0, 2)),
    )
    return VoxelCube(values, cube.center_world, cube.scan_id)


def replicate_dataset(
    cubes: list[VoxelCube], labels: list, cfg: AugmentationConfig, seed: int = 0
):
    """Expand a labeled cube set by per-class replication with augmentation.

    Each cube contributes itself plus (factor - 1) augmented copies, where
    the factor may differ per class (minority classes get more copies).
    """
    rng = np.random.default_rng(seed)
    out_cubes, out_labels = [], []
    for cube, label in zip(cubes, labels):
        out_cubes.append(cube)
        out_labels.append(label)
        for _ in range(cfg.factor_for(label) - 1):
            out_cubes.append(augment(cube, cfg, rng))
            out_labels.append(label)
    return out_cubes, out_labels
