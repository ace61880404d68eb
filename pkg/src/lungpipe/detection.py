"""3D Difference-of-Gaussian blob detector and baseline nodule features.

Scale levels are linearly spaced sigmas derived from the configured diameter
range through the binary-sphere law sigma = radius / sqrt(3) (a solid sphere
of radius r maximizes the scale-normalized response at that sigma, hence
radius = sigma * sqrt(3) at detection time).  Responses are sign-flipped so
bright blobs score positive, and scale-normalized by multiplying each
difference by its lower sigma.  Candidates are strict local maxima over the
3x3x3x3 space-scale neighborhood, thresholded, restricted to the lung mask,
and pruned with greedy non-maximum suppression on pairwise sphere overlap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, VolumeTooSmall
from .segmentation import LungMask, lung_z_bounds
from .volume import CtVolume

SIGMA_PER_RADIUS = 1.0 / math.sqrt(3.0)


@dataclass
class DogConfig:
    d_min: float = 5.0  # mm, minimum nodule diameter
    d_max: float = 60.0  # mm, maximum nodule diameter
    steps: int = 5
    threshold: float = 0.15  # normalized response
    overlap: float = 0.9  # pruning overlap fraction
    refine_radius: bool = True  # parabolic sub-scale radius interpolation

    def __post_init__(self):
        if not 0 < self.d_min < self.d_max:
            raise ConfigError(f"need 0 < d_min < d_max, got ({self.d_min}, {self.d_max})")
        if self.steps < 2:
            raise ConfigError(f"need steps >= 2, got {self.steps}")
        if self.threshold <= 0:
            raise ConfigError(f"threshold must be positive, got {self.threshold}")
        if not 0 <= self.overlap <= 1:
            raise ConfigError(f"overlap must be in [0, 1], got {self.overlap}")

    def sigmas(self) -> np.ndarray:
        """Linearly spaced sigma levels, plus one extrapolated upper level."""
        lo = self.d_min / 2 * SIGMA_PER_RADIUS
        hi = self.d_max / 2 * SIGMA_PER_RADIUS
        levels = np.linspace(lo, hi, self.steps)
        step = levels[1] - levels[0]
        return np.append(levels, hi + step)


@dataclass
class NoduleCandidate:
    center_world: tuple[float, float, float]  # mm, (z, y, x)
    radius: float  # mm
    response: float  # scale-normalized DoG peak
    power: float = float("nan")  # mean normalized intensity in the sphere
    relative_z: float = float("nan")  # position within the lung z extent
    scan_id: str = ""


def build_scale_space(volume: CtVolume, cfg: DogConfig):
    """Compute the scale-normalized DoG response stack.

    Returns (sigmas, responses) where sigmas has cfg.steps entries and
    responses has shape (steps, z, y, x).
    """
    sigmas = cfg.sigmas()
    spacing = np.asarray(volume.spacing)
    if np.any(np.asarray(volume.shape) * spacing < 4 * sigmas[-1]):
        raise VolumeTooSmall(
            f"volume extent {tuple(np.asarray(volume.shape) * spacing)} mm is below "
            f"4*sigma_max = {4 * sigmas[-1]:.1f} mm"
        )
    data = volume.voxels.astype(np.float32)
    blurred = [ndimage.gaussian_filter(data, sigma / spacing) for sigma in sigmas]
    responses = np.stack(
        [(blurred[k] - blurred[k + 1]) * sigmas[k] for k in range(cfg.steps)]
    )
    return sigmas[: cfg.steps], responses


def sphere_overlap(c1, r1: float, c2, r2: float) -> float:
    """Intersection volume of two spheres divided by the smaller sphere volume."""
    d = float(np.linalg.norm(np.asarray(c1, dtype=float) - np.asarray(c2, dtype=float)))
    r_small = min(r1, r2)
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        return 1.0
    lens = (
        math.pi
        * (r1 + r2 - d) ** 2
        * (d**2 + 2 * d * (r1 + r2) - 3 * (r1 - r2) ** 2)
        / (12 * d)
    )
    return lens / (4 / 3 * math.pi * r_small**3)


def _sphere_scale_profile(radius: float, sigmas_all: np.ndarray) -> np.ndarray:
    """Expected DoG center responses of a unit-contrast solid sphere.

    The blurred center value of a sphere of radius r is
    erf(a) - 2a exp(-a^2)/sqrt(pi) with a = r / (sigma sqrt(2)); differencing
    consecutive levels and scale-normalizing gives the response profile.
    """
    from scipy.special import erf

    a = radius / (np.sqrt(2.0) * sigmas_all)
    center = erf(a) - 2 * a * np.exp(-(a**2)) / np.sqrt(np.pi)
    return sigmas_all[:-1] * (center[:-1] - center[1:])


def _fit_radius(level_responses: np.ndarray, sigmas_all: np.ndarray, cfg: DogConfig) -> float:
    """Estimate the blob radius from its response profile across scales.

    Fits radius and a non-negative amplitude of the solid-sphere profile by
    least squares; the coarse linear sigma grid alone quantizes radii too
    harshly, while the profile shape pins the radius between levels.
    """
    from scipy.optimize import minimize_scalar

    observed = np.maximum(level_responses, 0.0)

    def cost(radius):
        profile = _sphere_scale_profile(radius, sigmas_all)
        denom = float(profile @ profile)
        amplitude = max(float(profile @ observed) / denom, 0.0) if denom > 0 else 0.0
        return float(((amplitude * profile - observed) ** 2).sum())

    # fit below d_min/2 is allowed (the profile flattens out for tiny blobs);
    # the caller clamps the radius back into the configured range
    result = minimize_scalar(
        cost, bounds=(0.5, cfg.d_max / 2), method="bounded", options={"xatol": 1e-3}
    )
    return float(result.x)


def _subvoxel_offset(responses_k: np.ndarray, index) -> np.ndarray:
    """Per-axis parabolic peak interpolation, clipped to one voxel."""
    offset = np.zeros(3)
    for axis in range(3):
        if not 0 < index[axis] < responses_k.shape[axis] - 1:
            continue
        lo_idx = list(index)
        hi_idx = list(index)
        lo_idx[axis] -= 1
        hi_idx[axis] += 1
        lo, mid, hi = (
            responses_k[tuple(lo_idx)],
            responses_k[tuple(index)],
            responses_k[tuple(hi_idx)],
        )
        denom = lo - 2 * mid + hi
        if denom < 0:
            offset[axis] = float(np.clip(0.5 * (lo - hi) / denom, -1.0, 1.0))
    return offset


def prune_candidates(candidates: list[NoduleCandidate], overlap: float) -> list[NoduleCandidate]:
    """Greedy NMS in descending response order; ties broken by (z, y, x)."""
    ordered = sorted(candidates, key=lambda c: (-c.response, c.center_world))
    kept: list[NoduleCandidate] = []
    for cand in ordered:
        if all(
            sphere_overlap(cand.center_world, cand.radius, k.center_world, k.radius) <= overlap
            for k in kept
        ):
            kept.append(cand)
    return kept


def detect_candidates(
    volume: CtVolume, lung_mask: LungMask, cfg: DogConfig
) -> list[NoduleCandidate]:
    """Detect nodule candidates in a normalized 1 mm-isotropic volume."""
    if lung_mask.mask.shape != volume.shape:
        raise ConfigError("lung mask and volume shapes differ")
    if not lung_mask.mask.any():
        return []
    # flatten everything outside (and just inside) the lung surface to the
    # in-lung median: the huge body/lung intensity step otherwise floods the
    # scale space with boundary blobs that outrank (and NMS-swallow) true
    # nodules; the slight erosion removes the tissue shell the mask dilation
    # pulled in
    from .segmentation import ball

    core = ndimage.binary_erosion(lung_mask.mask, structure=ball(3))
    filled = volume.voxels.astype(np.float32).copy()
    filled[~core] = float(np.median(filled[lung_mask.mask]))
    masked_volume = CtVolume(filled, volume.spacing, volume.origin, volume.scan_id)
    sigmas_all = cfg.sigmas()
    sigmas, responses = build_scale_space(masked_volume, cfg)

    footprint = np.ones((3, 3, 3, 3), dtype=bool)
    footprint[1, 1, 1, 1] = False
    neighbor_max = ndimage.maximum_filter(
        responses, footprint=footprint, mode="constant", cval=-np.inf
    )
    peaks = (responses > neighbor_max) & (responses >= cfg.threshold)
    peaks &= lung_mask.mask[None, :, :, :]

    origin = np.asarray(volume.origin)
    spacing = np.asarray(volume.spacing)
    candidates = []
    for k, z, y, x in zip(*np.nonzero(peaks)):
        if cfg.refine_radius:
            radius = float(
                np.clip(
                    _fit_radius(responses[:, z, y, x], sigmas_all, cfg),
                    cfg.d_min / 2,
                    cfg.d_max / 2,
                )
            )
            shift = _subvoxel_offset(responses[k], (z, y, x))
        else:
            radius = float(
                np.clip(sigmas[k] / SIGMA_PER_RADIUS, cfg.d_min / 2, cfg.d_max / 2)
            )
            shift = np.zeros(3)
        center = tuple(origin + (np.array([z, y, x]) + shift) * spacing)
        candidates.append(
            NoduleCandidate(
                center_world=center,
                radius=radius,
                response=float(responses[k, z, y, x]),
                scan_id=volume.scan_id,
            )
        )
    return prune_candidates(candidates, cfg.overlap)


def candidate_features(
    candidate: NoduleCandidate, volume: CtVolume, lung_mask: LungMask
) -> tuple[float, float, float]:
    """The three baseline features: (radius mm, power, relative_z).

    Power is the mean normalized intensity over voxels inside the candidate
    sphere; relative_z locates the candidate within the lung z extent,
    clamped to [0, 1] (0.5 for single-slice lungs).
    """
    center_idx = np.asarray(volume.world_to_voxel(candidate.center_world))
    spacing = np.asarray(volume.spacing)
    half_vox = np.ceil(candidate.radius / spacing).astype(int)
    lo = np.maximum(np.floor(center_idx).astype(int) - half_vox, 0)
    hi = np.minimum(np.floor(center_idx).astype(int) + half_vox + 1, volume.shape)
    region = volume.voxels[lo[0] : hi[0], lo[1] : hi[1], lo[2] : hi[2]]
    grids = np.meshgrid(*(np.arange(l, h) for l, h in zip(lo, hi)), indexing="ij")
    dist2 = sum(((g - c) * s) ** 2 for g, c, s in zip(grids, center_idx, spacing))
    inside = dist2 <= candidate.radius**2
    power = float(region[inside].mean()) if inside.any() else float(region.mean())

    z_min, z_max = lung_z_bounds(lung_mask)
    if z_max == z_min:
        relative_z = 0.5
    else:
        relative_z = float(np.clip((center_idx[0] - z_min) / (z_max - z_min), 0.0, 1.0))
    return candidate.radius, power, relative_z


def with_features(
    candidates: list[NoduleCandidate], volume: CtVolume, lung_mask: LungMask
) -> list[NoduleCandidate]:
    """Return candidates with power and relative_z filled in."""
    out = []
    for cand in candidates:
        radius, power, relative_z = candidate_features(cand, volume, lung_mask)
        out.append(replace(cand, power=power, relative_z=relative_z))
    return out
