"""Synthetic labeled shape images standing in for a real photo corpus.

Eight families on a -1 background with jittered position, extent, and
intensity, valued in [-1, 1]. Every image is a pure function of
(seed, index), so regeneration is byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from .rten import read_rten, write_rten
from .tensors import ImageTensor

SHAPE_FAMILIES = (
    "disc",
    "square",
    "ring",
    "cross",
    "two_disc",
    "diagonal_bar",
    "checker_patch",
    "corner_blob",
)


def _grids(size: int):
    return np.mgrid[0:size, 0:size].astype(np.float64)


def _render(cls: int, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = _grids(size)
    a = rng.uniform(0.2, 1.0)
    img = np.full((size, size), -1.0)
    cy = rng.uniform(0.3, 0.7) * size
    cx = rng.uniform(0.3, 0.7) * size
    family = SHAPE_FAMILIES[cls % len(SHAPE_FAMILIES)]
    if family == "disc":
        r = rng.uniform(0.15, 0.30) * size
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = a
    elif family == "square":
        h = rng.uniform(0.12, 0.25) * size
        img[np.maximum(np.abs(yy - cy), np.abs(xx - cx)) <= h] = a
    elif family == "ring":
        r = rng.uniform(0.20, 0.35) * size
        d2 = (yy - cy) ** 2 + (xx - cx) ** 2
        img[(d2 <= r * r) & (d2 >= (0.55 * r) ** 2)] = a
    elif family == "cross":
        w = rng.uniform(0.05, 0.09) * size
        arm = rng.uniform(0.25, 0.40) * size
        horiz = (np.abs(yy - cy) <= w) & (np.abs(xx - cx) <= arm)
        vert = (np.abs(xx - cx) <= w) & (np.abs(yy - cy) <= arm)
        img[horiz | vert] = a
    elif family == "two_disc":
        r = rng.uniform(0.10, 0.16) * size
        c1y = rng.uniform(0.2, 0.4) * size
        c1x = rng.uniform(0.2, 0.4) * size
        c2y = rng.uniform(0.6, 0.8) * size
        c2x = rng.uniform(0.6, 0.8) * size
        img[(yy - c1y) ** 2 + (xx - c1x) ** 2 <= r * r] = a
        img[(yy - c2y) ** 2 + (xx - c2x) ** 2 <= r * r] = a
    elif family == "diagonal_bar":
        w = rng.uniform(0.06, 0.12) * size
        img[np.abs((yy - cy) - (xx - cx)) <= w] = a
    elif family == "checker_patch":
        h = rng.uniform(0.20, 0.35) * size
        cell = max(1, size // 8)
        patch = np.maximum(np.abs(yy - cy), np.abs(xx - cx)) <= h
        parity = ((yy // cell).astype(int) + (xx // cell).astype(int)) % 2 == 0
        img[patch & parity] = a
    elif family == "corner_blob":
        corner_y = rng.integers(2) * (size - 1)
        corner_x = rng.integers(2) * (size - 1)
        spread = rng.uniform(0.10, 0.18) * size
        d2 = (yy - corner_y) ** 2 + (xx - corner_x) ** 2
        bump = np.exp(-d2 / (2.0 * spread * spread))
        img = -1.0 + (a + 1.0) * bump
    return np.clip(img, -1.0, 1.0)


def generate_image(
    seed: int, index: int, num_classes: int, size: int, channels: int = 1
) -> tuple[np.ndarray, int]:
    """Render image `index` of the dataset; returns ((C, H, W) array, label)."""
    rng = np.random.default_rng([seed, index])
    label = index % num_classes
    base = _render(label, size, rng)
    if channels == 1:
        data = base[None]
    else:
        # Per-channel intensity jitter on the same geometry.
        gains = rng.uniform(0.5, 1.0, size=channels)
        data = np.stack([-1.0 + (base + 1.0) * g for g in gains])
    return data.astype(np.float32), label


def synth(
    num_classes: int,
    per_class: int,
    size: int,
    seed: int,
    out_dir,
    channels: int = 1,
) -> Path:
    """Write one RTEN file per image plus a `path,label` manifest CSV."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    total = num_classes * per_class
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["path", "label"])
        for idx in range(total):
            data, label = generate_image(seed, idx, num_classes, size, channels)
            name = f"img_{idx:05d}.rten"
            write_rten(out / name, data)
            writer.writerow([name, label])
    return manifest


def load_dataset(data_dir, level: int) -> list[tuple[ImageTensor, Optional[int]]]:
    """Read a manifest directory into (image, label) pairs at the given level."""
    root = Path(data_dir)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FileNotFoundError(f"no manifest.csv under {root}")
    out = []
    with open(manifest, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["path", "label"]:
            raise ValueError(f"unexpected manifest header {header}")
        for row in reader:
            arr = read_rten(root / row[0])
            out.append((ImageTensor(arr, level), int(row[1])))
    return out


def class_mean_images(
    dataset: list[tuple[ImageTensor, Optional[int]]]
) -> dict[int, np.ndarray]:
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for img, label in dataset:
        if label is None:
            continue
        if label not in sums:
            sums[label] = np.zeros_like(img.data, dtype=np.float64)
            counts[label] = 0
        sums[label] += img.data
        counts[label] += 1
    return {c: sums[c] / counts[c] for c in sums}


def min_pairwise_mean_distance(dataset) -> float:
    """Smallest RMS distance between class-conditional mean images."""
    means = class_mean_images(dataset)
    labels = sorted(means)
    best = np.inf
    for i, ci in enumerate(labels):
        for cj in labels[i + 1 :]:
            diff = means[ci] - means[cj]
            best = min(best, float(np.sqrt(np.mean(diff**2))))
    return best
