"""Synthetic 3-class texture dataset generator.

Stands in for clinical image data so end-to-end runs are reproducible
and license-free. Classes are parametric textures with distinct spatial
statistics plus per-image noise and affine jitter:

  class 0 (Normal)        smooth radial gradients, low frequency
  class 1 (Liver)         oriented stripe patterns, mid frequency
  class 2 (Aspergillosis) speckled blob fields, high frequency

Class base brightness levels are offset so a crude global-statistics
classifier can separate the classes (learnability floor), while the
dominant signal stays textural. Generation is bitwise deterministic
per seed; parameters land in a gen_params.json sidecar.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict

import numpy as np
from PIL import Image

from .data import CLASS_NAMES
from .errors import DataError

GEN_PARAMS = {
    "noise_amplitude": 0.06,
    "brightness_jitter": 0.07,
    "tint_jitter": 0.04,
    "rotation_jitter_deg": 10.0,
    "translation_jitter_frac": 0.08,
    "class_base_brightness": [0.58, 0.50, 0.42],
    "pattern_amplitude": [0.18, 0.30],
    "stripe_cycles": [5.0, 9.0],
    "radial_radius_frac": [0.55, 0.85],
    "speckle_blur_radius": 2,
    "speckle_threshold_quantile": [0.55, 0.70],
}


def _image_rng(seed: int, class_id: int, index: int) -> np.random.Generator:
    bitgen = np.random.Philox(
        counter=[index, class_id, 0, 0], key=[seed & (2**64 - 1), 0xA3]
    )
    return np.random.Generator(bitgen)


def _jittered_grid(size: int, rng: np.random.Generator):
    """Centered coordinate grid with random rotation and translation."""
    max_rot = np.deg2rad(GEN_PARAMS["rotation_jitter_deg"])
    theta = rng.uniform(-max_rot, max_rot)
    tmax = GEN_PARAMS["translation_jitter_frac"] * size
    tx, ty = rng.uniform(-tmax, tmax, size=2)
    ax = np.arange(size) - (size - 1) / 2.0
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    c, s = np.cos(theta), np.sin(theta)
    xr = c * (xx - tx) - s * (yy - ty)
    yr = s * (xx - tx) + c * (yy - ty)
    return xr, yr


def _radial(size: int, rng: np.random.Generator) -> np.ndarray:
    xr, yr = _jittered_grid(size, rng)
    lo, hi = GEN_PARAMS["radial_radius_frac"]
    r0 = rng.uniform(lo, hi) * size / 2.0
    amp = rng.uniform(*GEN_PARAMS["pattern_amplitude"])
    r = np.sqrt(xr**2 + yr**2)
    return amp * np.cos(np.clip(r / r0, 0.0, 1.0) * np.pi) * 0.5 + amp * 0.5


def _stripes(size: int, rng: np.random.Generator) -> np.ndarray:
    xr, yr = _jittered_grid(size, rng)
    cycles = rng.uniform(*GEN_PARAMS["stripe_cycles"])
    angle = rng.uniform(0.0, np.pi)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = rng.uniform(*GEN_PARAMS["pattern_amplitude"])
    wave = np.sin(
        2.0 * np.pi * cycles * (np.cos(angle) * xr + np.sin(angle) * yr) / size + phase
    )
    return amp * wave * 0.5


def _box_blur(field: np.ndarray, radius: int) -> np.ndarray:
    """Separable box filter with edge clamping."""
    k = 2 * radius + 1
    out = field
    for axis in (0, 1):
        pad_width = [(0, 0), (0, 0)]
        pad_width[axis] = (radius, radius)
        csum = np.cumsum(np.pad(out, pad_width, mode="edge"), axis=axis)
        if axis == 0:
            out = (csum[k - 1 :] - np.vstack([np.zeros((1, csum.shape[1])), csum[:-k]])) / k
        else:
            out = (csum[:, k - 1 :] - np.hstack([np.zeros((csum.shape[0], 1)), csum[:, :-k]])) / k
    return out


def _speckle(size: int, rng: np.random.Generator) -> np.ndarray:
    noise = rng.random((size, size))
    smooth = _box_blur(noise, GEN_PARAMS["speckle_blur_radius"])
    q = rng.uniform(*GEN_PARAMS["speckle_threshold_quantile"])
    blobs = (smooth > np.quantile(smooth, q)).astype(np.float64)
    amp = rng.uniform(*GEN_PARAMS["pattern_amplitude"])
    return amp * (blobs - 0.5)


_PATTERNS = (_radial, _stripes, _speckle)


def _render(class_id: int, size: int, rng: np.random.Generator) -> np.ndarray:
    base = GEN_PARAMS["class_base_brightness"][class_id]
    base = base + rng.uniform(-1.0, 1.0) * GEN_PARAMS["brightness_jitter"]
    lum = base + _PATTERNS[class_id](size, rng)
    tint = rng.uniform(-1.0, 1.0, size=3) * GEN_PARAMS["tint_jitter"]
    img = lum[:, :, None] + tint[None, None, :]
    img = img + rng.normal(0.0, GEN_PARAMS["noise_amplitude"], size=img.shape)
    return np.clip(img * 255.0, 0.0, 255.0).astype(np.uint8)


def synth_generate(out_dir, n_per_class: int, image_size: int = 128, seed: int = 0) -> Path:
    """Write three class directories of PNG textures plus a sidecar.

    Bitwise deterministic for a fixed seed. Requires n_per_class >= 10
    so every split of the downstream 80/20 protocol is nonempty.
    """
    if n_per_class < 10:
        raise DataError(f"n_per_class must be at least 10, got {n_per_class}")
    if image_size < 16:
        raise DataError(f"image_size must be at least 16, got {image_size}")
    root = Path(out_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        digits = len(str(n_per_class - 1))
        for class_id, name in enumerate(CLASS_NAMES):
            class_dir = root / name
            class_dir.mkdir(exist_ok=True)
            for i in range(n_per_class):
                img = _render(class_id, image_size, _image_rng(seed, class_id, i))
                Image.fromarray(img, mode="RGB").save(
                    class_dir / f"{name.lower()}_{i:0{digits}d}.png"
                )
        sidecar: Dict = {
            "seed": int(seed),
            "n_per_class": int(n_per_class),
            "image_size": int(image_size),
            **GEN_PARAMS,
        }
        with open(root / "gen_params.json", "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write synthetic dataset under {root}: {exc}") from exc
    return root
