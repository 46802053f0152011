"""Synthetic shape dataset with exact ground-truth object masks.

Four classes (disk, square, triangle, cross) drawn on textured noise
backgrounds. Everything is reproducible from a single seed, and the on-disk
format is a directory of PNGs plus labels.tsv and masks/.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

__all__ = [
    "CLASS_NAMES",
    "SyntheticSample",
    "synth_generate",
    "save_dataset",
    "load_dataset",
]

CLASS_NAMES = ("disk", "square", "triangle", "cross")

_MIN_AREA = 0.05
_MAX_AREA = 0.50


@dataclass
class SyntheticSample:
    image: np.ndarray  # (3, M, M) float in [0, 1]
    label: int
    mask: np.ndarray   # (M, M) bool
    seed: int


def _coords(m: int):
    ys, xs = np.mgrid[0:m, 0:m]
    return ys + 0.5, xs + 0.5


def _rotate(ys, xs, cy, cx, theta):
    dy, dx = ys - cy, xs - cx
    c, s = np.cos(theta), np.sin(theta)
    return c * dy - s * dx, s * dy + c * dx


def _shape_mask(kind: int, m: int, rng) -> np.ndarray:
    ys, xs = _coords(m)
    for _ in range(64):
        cy = rng.uniform(0.3 * m, 0.7 * m)
        cx = rng.uniform(0.3 * m, 0.7 * m)
        # radius floor keeps the shape class resolvable after patch pooling
        r = rng.uniform(0.20 * m, 0.34 * m)
        # axis-aligned: free rotation makes the classes confusable once the
        # stem has pooled the image down to the first vertex grid
        ry, rx = ys - cy, xs - cx
        if kind == 0:  # disk
            mask = ry ** 2 + rx ** 2 <= r ** 2
        elif kind == 1:  # square
            mask = (np.abs(ry) <= r * 0.85) & (np.abs(rx) <= r * 0.85)
        elif kind == 2:  # triangle (equilateral, centered)
            # half-plane intersection for an equilateral triangle of circumradius r
            a = ry <= r / 2
            b = (-ry * 0.5 - rx * np.sqrt(3) / 2) <= r / 2
            c = (-ry * 0.5 + rx * np.sqrt(3) / 2) <= r / 2
            mask = a & b & c
        else:  # cross
            arm = r * 0.36
            mask = ((np.abs(ry) <= arm) & (np.abs(rx) <= r)) | \
                   ((np.abs(rx) <= arm) & (np.abs(ry) <= r))
        frac = mask.mean()
        if _MIN_AREA <= frac <= _MAX_AREA:
            return mask
    raise RuntimeError("could not place an object within the area bounds")


def _background(m: int, rng) -> np.ndarray:
    # low-frequency blotches plus pixel noise, kept dim so objects stand out
    low = rng.uniform(0.0, 0.30, size=(3, 4, 4))
    up = np.repeat(np.repeat(low, m // 4 + 1, axis=1), m // 4 + 1, axis=2)[:, :m, :m]
    noise = rng.uniform(-0.06, 0.06, size=(3, m, m))
    return np.clip(up + noise, 0.0, 1.0)


def make_sample(label: int, m: int, seed: int) -> SyntheticSample:
    rng = np.random.default_rng(seed)
    img = _background(m, rng)
    mask = _shape_mask(label, m, rng)
    color = rng.uniform(0.7, 1.0, size=3)
    img[:, mask] = color[:, None] + rng.uniform(-0.05, 0.05, size=(3, int(mask.sum())))
    np.clip(img, 0.0, 1.0, out=img)
    return SyntheticSample(image=img, label=label, mask=mask, seed=seed)


def synth_generate(n: int, side: int, seed: int) -> list[SyntheticSample]:
    """n samples of side x side pixels, classes balanced within one."""
    if side < 16:
        raise ValueError(f"side must be >= 16, got {side}")
    if n < 1:
        raise ValueError("n must be positive")
    master = np.random.default_rng(seed)
    sample_seeds = master.integers(0, 2 ** 63 - 1, size=n)
    return [make_sample(i % len(CLASS_NAMES), side, int(sample_seeds[i])) for i in range(n)]


def _to_u8(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0, 1).transpose(1, 2, 0) * 255.0).round().astype(np.uint8)


def save_dataset(samples, directory) -> None:
    directory = Path(directory)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        name = f"img_{i:05d}.png"
        Image.fromarray(_to_u8(s.image), mode="RGB").save(directory / name)
        Image.fromarray((s.mask * 255).astype(np.uint8), mode="L").save(directory / "masks" / name)
        lines.append(f"{name}\t{s.label}")
    (directory / "labels.tsv").write_text("\n".join(lines) + "\n")


def load_dataset(directory) -> list[SyntheticSample]:
    directory = Path(directory)
    labels_path = directory / "labels.tsv"
    if not labels_path.is_file():
        raise FileNotFoundError(f"no labels.tsv in {directory}")
    samples = []
    for line in labels_path.read_text().splitlines():
        if not line.strip():
            continue
        name, label = line.split("\t")
        img = np.asarray(Image.open(directory / name).convert("RGB"), dtype=np.float64)
        img = img.transpose(2, 0, 1) / 255.0
        mask_path = directory / "masks" / name
        mask = None
        if mask_path.is_file():
            mask = np.asarray(Image.open(mask_path).convert("L")) > 127
        samples.append(SyntheticSample(image=img, label=int(label),
                                       mask=mask if mask is not None else np.zeros(img.shape[1:], bool),
                                       seed=-1))
    return samples
