#!/usr/bin/env python3
"""Foveated blur walkthrough.

Builds one synthetic stimulus image, degrades it several ways, and fuses
the blurred copy with the original under each gating prior.  Everything is
saved to demos/out/ as PNG plus a CSV of the gate curve so the numbers can
be inspected without a plot.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from mb2l.datasets import generate_synthetic
from mb2l.foveation import (
    DEGRADATION_KINDS,
    FoveaPrior,
    apply_abvp,
    degrade_image,
    gating_weight,
    radial_map,
)

OUT = Path(__file__).parent / "out" / "01_foveated_blur"


def save_rgb(img: np.ndarray, name: str) -> None:
    arr = (np.clip(img, 0.0, 1.0) * 255.0).round().astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(OUT / name)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    train, _ = generate_synthetic(
        n_train_concepts=1, n_test_concepts=1, image_size=64,
        images_per_concept=1, seed=4,
    )
    img = train[0].image
    save_rgb(img, "original.png")
    print(f"stimulus image: {img.shape}, values in [{img.min():.2f}, {img.max():.2f}]")

    print("\n1. whole-image degradations")
    for kind in DEGRADATION_KINDS:
        degraded = degrade_image(img, kind, seed=0)
        save_rgb(degraded, f"degraded_{kind}.png")
        print(f"   {kind:<14} mean abs diff {np.abs(degraded - img).mean():.4f}")

    print("\n2. gating priors (weight 0 keeps the original, 1 keeps the degraded copy)")
    r = radial_map(64, 64).values
    priors = {
        "logistic": FoveaPrior.logistic(),
        "exp": FoveaPrior.exp(),
        "quad": FoveaPrior.quad(),
        "free": FoveaPrior.free(np.clip(r**1.5, 0.0, 1.0)),
    }
    for name, prior in priors.items():
        w = prior.gate(r).data
        Image.fromarray((w * 255.0).round().astype(np.uint8), mode="L").save(OUT / f"gate_{name}.png")
        print(f"   {name:<9} w(center) = {w[32, 32]:.3f}   w(corner) = {w[0, 0]:.3f}")

    print("\n3. fused images: sharp fovea, blurred periphery")
    blurred = degrade_image(img, "blur")
    inner, outer = r < 0.2, r > 0.8
    for name, prior in priors.items():
        fused = apply_abvp(img, prior, degraded=blurred).data
        save_rgb(fused, f"fused_{name}.png")
        w = prior.gate(r).data
        print(f"   {name:<9} mean blur weight: fovea {w[inner].mean():.3f}, periphery {w[outer].mean():.3f}")

    print("\n4. the logistic gate crosses 0.5 exactly at the fovea radius")
    prior = priors["logistic"]
    radii = np.linspace(0.0, 1.0, 256)
    curve = gating_weight(prior, radii)
    with open(OUT / "gate_curve.csv", "w") as fh:
        fh.write("r,w\n")
        for rr, ww in zip(radii, curve):
            fh.write(f"{rr:.6f},{ww:.6f}\n")
    at_r0 = gating_weight(prior, prior.fovea_radius)
    print(f"   r0 = {prior.fovea_radius:.3f}, w(r0) = {at_r0:.6f}")
    print(f"\nwrote {len(list(OUT.iterdir()))} files to {OUT}")


if __name__ == "__main__":
    main()
