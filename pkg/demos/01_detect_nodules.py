"""Detect nodule candidates on a synthetic CT scan.

Builds a phantom with three planted spheres, segments the lungs, runs the
multi-scale blob detector, and prints each candidate next to the ground
truth. Run from the repository root:

    python3 demos/01_detect_nodules.py
"""

import numpy as np

from lungpipe.detection import DogConfig, detect_candidates, with_features
from lungpipe.phantom import SphereNodule, default_spec, generate_ct
from lungpipe.segmentation import segment_lungs
from lungpipe.volume import clip_and_normalize


def main():
    spec = default_spec(shape=(96, 128, 128), noise_sigma=20.0)
    left, right = spec.lungs
    spec.nodules = [
        SphereNodule(left.center, 12.0, hu=20.0),
        SphereNodule(tuple(np.add(right.center, (14, 0, 0))), 7.0, hu=-100.0),
        SphereNodule(tuple(np.add(right.center, (-14, 0, 0))), 4.0, hu=0.0),
    ]
    volume, truth = generate_ct(spec, seed=0)
    print(f"phantom: {volume.shape} voxels, {len(truth['nodules'])} planted nodules")

    mask = segment_lungs(volume)
    print(f"lung mask: {int(mask.mask.sum())} voxels")

    normalized = clip_and_normalize(volume)
    candidates = detect_candidates(normalized, mask, DogConfig(5, 60, 5, 0.15, 0.9))
    candidates = with_features(candidates, normalized, mask)

    print(f"\n{len(candidates)} candidates (strongest first):")
    print(f"{'z':>7} {'y':>7} {'x':>7} {'radius':>7} {'response':>9} {'power':>6}")
    for c in candidates:
        z, y, x = c.center_world
        print(f"{z:7.1f} {y:7.1f} {x:7.1f} {c.radius:7.2f} {c.response:9.4f} {c.power:6.3f}")

    print("\nground truth:")
    for nodule in truth["nodules"]:
        z, y, x = nodule.center
        print(f"{z:7.1f} {y:7.1f} {x:7.1f} {nodule.radius:7.2f}")


if __name__ == "__main__":
    main()
