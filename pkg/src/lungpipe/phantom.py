"""Synthetic CT and labeled-cube generators used as ground-truth oracles.

The CT phantom is an air background (-1000 HU) holding a soft-tissue body
ellipsoid (+40 HU) with two lung ellipsoids (-800 HU) inside it; nodules are
spheres of configurable HU planted inside the lungs.  Gaussian HU noise is
optional.  This palette makes the -320 HU lung threshold and the
[-1000, 400] HU clip window behave as on real CT.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SpecError
from .volume import CUBE_SIDE, CtVolume, VoxelCube

AIR_HU = -1000.0
BODY_HU = 40.0
LUNG_HU = -800.0


@dataclass
class Ellipsoid:
    center: tuple[float, float, float]  # world mm, (z, y, x)
    radii: tuple[float, float, float]  # mm
    hu: float


@dataclass
class SphereNodule:
    center: tuple[float, float, float]  # world mm, (z, y, x)
    radius: float  # mm
    hu: float = 0.0
    label: str | None = None


@dataclass
class PhantomSpec:
    body: Ellipsoid
    lungs: list[Ellipsoid]
    nodules: list[SphereNodule] = field(default_factory=list)
    noise_sigma: float = 0.0  # HU
    shape: tuple[int, int, int] = (96, 128, 128)  # voxels, (z, y, x)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)  # mm


def default_spec(
    shape=(96, 128, 128), spacing=(1.0, 1.0, 1.0), nodules=(), noise_sigma=0.0
) -> PhantomSpec:
    """A body filling most of the volume with two lateral lung ellipsoids."""
    extent = np.array(shape) * np.array(spacing)
    cz, cy, cx = extent / 2
    body = Ellipsoid((cz, cy, cx), (0.46 * extent[0], 0.42 * extent[1], 0.46 * extent[2]), BODY_HU)
    # keep a few-voxel body shell between lung and outside air even at small
    # volume sizes, or the threshold components merge under 26-connectivity
    lung_radii = (0.33 * extent[0], 0.28 * extent[1], 0.19 * extent[2])
    lungs = [
        Ellipsoid((cz, cy, cx - 0.21 * extent[2]), lung_radii, LUNG_HU),
        Ellipsoid((cz, cy, cx + 0.21 * extent[2]), lung_radii, LUNG_HU),
    ]
    return PhantomSpec(body, lungs, list(nodules), noise_sigma, tuple(shape), tuple(spacing))


def _world_grid(shape, spacing):
    axes = [np.arange(n) * s for n, s in zip(shape, spacing)]
    return np.meshgrid(*axes, indexing="ij")


def _inside_ellipsoid(grid, ell: Ellipsoid) -> np.ndarray:
    acc = np.zeros_like(grid[0])
    for g, c, r in zip(grid, ell.center, ell.radii):
        acc = acc + ((g - c) / r) ** 2
    return acc <= 1.0


def _inside_sphere(grid, center, radius) -> np.ndarray:
    acc = np.zeros_like(grid[0])
    for g, c in zip(grid, center):
        acc = acc + (g - c) ** 2
    return acc <= radius**2


def _nodule_inside_lungs(nod: SphereNodule, lungs) -> bool:
    # conservative check: nodule center must sit inside a lung ellipsoid
    # shrunk by the nodule radius along each axis
    for lung in lungs:
        shrunk = [max(r - nod.radius, 1e-9) for r in lung.radii]
        if sum(((c - lc) / r) ** 2 for c, lc, r in zip(nod.center, lung.center, shrunk)) <= 1.0:
            return True
    return False


def generate_ct(spec: PhantomSpec, seed: int = 0):
    """Render a phantom CT; returns (CtVolume, ground truth dict).

    Ground truth holds the pre-noise analytic lung mask ('lung_mask', union of
    the lung ellipsoids) and the planted nodule list ('nodules').
    """
    extent = np.array(spec.shape) * np.array(spec.spacing)
    for lung in spec.lungs:
        for c, r, e in zip(lung.center, lung.radii, extent):
            if c - r <= 0 or c + r >= e:
                raise SpecError(f"lung ellipsoid {lung} touches the volume border")
    for nod in spec.nodules:
        if nod.radius <= 0:
            raise SpecError(f"nodule radius must be positive, got {nod.radius}")
        if not _nodule_inside_lungs(nod, spec.lungs):
            raise SpecError(f"nodule at {nod.center} is not inside a lung ellipsoid")

    grid = _world_grid(spec.shape, spec.spacing)
    hu = np.full(spec.shape, AIR_HU, dtype=np.float32)
    hu[_inside_ellipsoid(grid, spec.body)] = spec.body.hu
    lung_mask = np.zeros(spec.shape, dtype=bool)
    for lung in spec.lungs:
        inside = _inside_ellipsoid(grid, lung)
        hu[inside] = lung.hu
        lung_mask |= inside
    for nod in spec.nodules:
        hu[_inside_sphere(grid, nod.center, nod.radius)] = nod.hu
    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        hu = hu + rng.normal(0.0, spec.noise_sigma, spec.shape).astype(np.float32)
    volume = CtVolume(hu, spec.spacing, (0.0, 0.0, 0.0), f"phantom-{seed}")
    truth = {"lung_mask": lung_mask, "nodules": list(spec.nodules)}
    return volume, truth


def _sphere_cube(radius_mm: float, interior: float, background: float) -> np.ndarray:
    half = CUBE_SIDE // 2
    ax = np.arange(CUBE_SIDE) - half
    zz, yy, xx = np.meshgrid(ax, ax, ax, indexing="ij")
    inside = zz**2 + yy**2 + xx**2 <= radius_mm**2
    cube = np.full((CUBE_SIDE,) * 3, background, dtype=np.float32)
    cube[inside] = interior
    return cube


def _texture_fill(cube: np.ndarray, radius_mm: float, frequency: float, amplitude: float):
    """Fill the central sphere with a zero-mean 3D sinusoid around 0.5.

    The spatial mean inside the sphere stays ~0.5 regardless of frequency, so
    first-order intensity features carry no class signal.
    """
    half = CUBE_SIDE // 2
    ax = np.arange(CUBE_SIDE) - half
    zz, yy, xx = np.meshgrid(ax, ax, ax, indexing="ij")
    inside = zz**2 + yy**2 + xx**2 <= radius_mm**2
    pattern = 0.5 + amplitude * np.sin(frequency * zz) * np.sin(frequency * yy) * np.sin(
        frequency * xx
    )
    cube[inside] = pattern[inside]
    return cube


_SCHEME_CLASSES = {"145": ("1", "4", "5"), "1and245": ("1and2", "4", "5")}
_SIZE_RADII = (4.0, 8.0, 12.0)  # mm per class, in class order
_TEXTURE_FREQS = (0.35, 0.9, 1.8)  # rad/voxel per class


def generate_cube_dataset(
    n_per_class,
    scheme: str = "145",
    separability: str = "size",
    seed: int = 0,
    noise_sigma: float = 0.02,
    cubes_per_subject: int = 2,
):
    """Labeled VoxelCubes whose class is encoded by sphere size and/or texture.

    Returns a list of (VoxelCube, class label, subject id) triples.  Subjects
    group consecutive same-class cubes so leakage tests are meaningful.
    """
    if scheme not in _SCHEME_CLASSES:
        raise SpecError(f"unknown scheme {scheme!r}")
    if separability not in ("size", "texture", "mixed"):
        raise SpecError(f"unknown separability {separability!r}")
    classes = _SCHEME_CLASSES[scheme]
    if np.isscalar(n_per_class):
        n_per_class = [int(n_per_class)] * len(classes)
    if len(n_per_class) != len(classes):
        raise SpecError(f"need {len(classes)} class counts, got {len(n_per_class)}")

    rng = np.random.default_rng(seed)
    out = []
    subject_counter = 0
    for class_idx, (label, count) in enumerate(zip(classes, n_per_class)):
        made = 0
        while made < count:
            subject_id = f"subj-{seed}-{subject_counter:04d}"
            subject_counter += 1
            for _ in range(min(cubes_per_subject, count - made)):
                if separability == "size":
                    radius = _SIZE_RADII[class_idx] * float(rng.uniform(0.9, 1.1))
                    cube = _sphere_cube(radius, interior=0.75, background=0.1)
                elif separability == "texture":
                    radius = 10.0
                    cube = _sphere_cube(radius, interior=0.5, background=0.1)
                    cube = _texture_fill(cube, radius, _TEXTURE_FREQS[class_idx], 0.35)
                else:  # mixed
                    radius = _SIZE_RADII[class_idx] * float(rng.uniform(0.9, 1.1))
                    cube = _sphere_cube(radius, interior=0.5, background=0.1)
                    cube = _texture_fill(cube, radius, _TEXTURE_FREQS[class_idx], 0.35)
                if noise_sigma > 0:
                    cube = cube + rng.normal(0.0, noise_sigma, cube.shape).astype(np.float32)
                cube = np.clip(cube, 0.0, 1.0)
                out.append((VoxelCube(cube, (16.0, 16.0, 16.0), subject_id), label, subject_id))
                made += 1
    return out


def spec_to_dict(spec: PhantomSpec) -> dict:
    def ell(e):
        return {"center": list(e.center), "radii": list(e.radii), "hu": e.hu}

    return {
        "shape": list(spec.shape),
        "spacing": list(spec.spacing),
        "noise_sigma": spec.noise_sigma,
        "body": ell(spec.body),
        "lungs": [ell(l) for l in spec.lungs],
        "nodules": [
            {
                "center": list(n.center),
                "radius": n.radius,
                "hu": n.hu,
                "label": n.label,
            }
            for n in spec.nodules
        ],
    }


def spec_from_dict(d: dict) -> PhantomSpec:
    def ell(e):
        return Ellipsoid(tuple(e["center"]), tuple(e["radii"]), float(e["hu"]))

    try:
        return PhantomSpec(
            body=ell(d["body"]),
            lungs=[ell(l) for l in d["lungs"]],
            nodules=[
                SphereNodule(
                    tuple(n["center"]),
                    float(n["radius"]),
                    float(n.get("hu", 0.0)),
                    n.get("label"),
                )
                for n in d.get("nodules", [])
            ],
            noise_sigma=float(d.get("noise_sigma", 0.0)),
            shape=tuple(d.get("shape", (96, 128, 128))),
            spacing=tuple(d.get("spacing", (1.0, 1.0, 1.0))),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SpecError(f"invalid phantom spec: {exc}") from exc


def generate_cohort(
    n_scans: int,
    seed: int = 0,
    shape=(96, 128, 128),
    cancer_frac: float = 0.5,
    noise_sigma: float = 5.0,
):
    """Phantom scans for end-to-end runs: list of (CtVolume, truth dict).

    Cancer scans carry one large nodule (radius 9-14 mm) next to a small one;
    non-cancer scans carry only a small nodule (radius 3-4.5 mm), so nodule
    size alone separates the cohorts.  Truth dicts hold the cancer label, the
    analytic lung mask and the planted nodules.
    """
    rng = np.random.default_rng(seed)
    n_cancer = int(round(n_scans * cancer_frac))
    out = []
    for i in range(n_scans):
        cancer = i < n_cancer
        base = default_spec(shape=shape, noise_sigma=noise_sigma)
        lung0, lung1 = base.lungs
        jitter = lambda: rng.uniform(-4.0, 4.0, 3)
        nodules = [
            SphereNodule(
                tuple(np.asarray(lung1.center) + jitter()),
                float(rng.uniform(3.0, 4.5)),
                hu=float(rng.uniform(0.0, 40.0)),
                label="benign",
            )
        ]
        if cancer:
            nodules.append(
                SphereNodule(
                    tuple(np.asarray(lung0.center) + jitter()),
                    float(rng.uniform(9.0, 14.0)),
                    hu=float(rng.uniform(0.0, 40.0)),
                    label="cancer",
                )
            )
        spec = PhantomSpec(
            base.body, base.lungs, nodules, noise_sigma, tuple(shape), base.spacing
        )
        volume, truth = generate_ct(spec, seed=int(rng.integers(0, 2**31)))
        volume.scan_id = f"phantom-{seed}-{i:03d}"
        truth["label"] = int(cancer)
        out.append((volume, truth))
    return out


def generate_fp_dataset(n_per_class: int, seed: int = 0, noise_sigma: float = 0.05):
    """Binary nodule-vs-background cubes for false-positive-reduction training.

    Returns (VoxelCube, label, subject id) triples with labels "0" (textured
    background, no sphere) and "1" (solid sphere of random radius).
    """
    rng = np.random.default_rng(seed)
    out = []
    for idx in range(2 * n_per_class):
        positive = idx % 2
        subject_id = f"fpsubj-{seed}-{idx:04d}"
        if positive:
            radius = float(rng.uniform(3.0, 10.0))
            cube = _sphere_cube(radius, interior=0.75, background=0.1)
        else:
            cube = np.full((CUBE_SIDE,) * 3, 0.1, dtype=np.float32)
        cube = np.clip(
            cube + rng.normal(0.0, noise_sigma, cube.shape).astype(np.float32), 0.0, 1.0
        )
        out.append((VoxelCube(cube, (16.0, 16.0, 16.0), subject_id), str(positive), subject_id))
    return out
