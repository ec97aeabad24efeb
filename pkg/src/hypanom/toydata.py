"""Synthetic two-cluster feature datasets for desk-scale end-to-end runs.

Each "image" is a grid of pixels with per-level feature maps written as FTNS
files. Normal pixels draw from N(0, sigma^2 I); anomalous pixels draw from a
Gaussian whose mean sits `offset_sigmas` standard deviations away along a
fixed direction. Anomalous regions are contiguous blocks, masks go out as
{0,255} PNGs, and everything is tied together by a standard manifest, so the
full train/eval/harness stack runs on it unchanged.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from . import features as ft
from .pngio import write_mask
from .rng import generator


def cluster_features(rng, mask: np.ndarray, d_in: int, offset_sigmas: float, sigma: float) -> np.ndarray:
    """[H][W][d_in] features: anomalous pixels (mask 1) get the offset mean."""
    h, w = mask.shape
    direction = np.ones(d_in) / np.sqrt(d_in)
    feats = rng.normal(0.0, sigma, size=(h, w, d_in))
    feats[mask > 0] += offset_sigmas * sigma * direction
    return feats.astype(np.float32)


def _block_mask(rng, grid: int, block_fraction: float) -> np.ndarray:
    rows = max(1, int(round(grid * block_fraction)))
    top = int(rng.integers(0, grid - rows + 1))
    mask = np.zeros((grid, grid), dtype=np.uint8)
    mask[top : top + rows, :] = 1
    return mask


def build_toy_dataset(
    root,
    *,
    seed: int = 0,
    d_in: int = 6,
    grid: int = 10,
    n_train: int = 10,
    n_val: int = 8,
    n_test: int = 20,
    offset_sigmas: float = 3.0,
    sigma: float = 1.0,
    levels: tuple[str, ...] = ("layer_2", "layer_3"),
    block_fraction: float = 0.5,
) -> Path:
    """Write features, masks, and a manifest under `root`; returns manifest path.

    Train records are synthesized-anomaly images (each half anomalous by
    default, so n_train * grid^2 * block_fraction pixels per class); their
    `source` field names the normal image they derive from, which is what the
    few-shot harness subsets on. The test split is half normal images (label
    0, no mask) and half anomalous (label 1, with mask).
    """
    root = Path(root)
    rng = generator(seed, "toydata")
    splits: dict[str, list[dict]] = {"train": [], "val": [], "test": []}

    def emit(split: str, name: str, mask: np.ndarray | None, label: int, source: str | None):
        entry = {"features": {}, "label": label, "id": name}
        for level in levels:
            m = mask if mask is not None else np.zeros((grid, grid), dtype=np.uint8)
            feats = cluster_features(rng, m, d_in, offset_sigmas, sigma)
            rel = f"features/{name}__{level}.ftns"
            ft.write_tensor(feats, root / rel)
            entry["features"][level] = rel
        if mask is not None:
            rel = f"masks/{name}.png"
            write_mask(mask, root / rel)
            entry["mask"] = rel
        if source:
            entry["source"] = source
        splits[split].append(entry)

    for i in range(n_train):
        emit("train", f"train_{i:03d}", _block_mask(rng, grid, block_fraction), 1, f"normal_{i:03d}")
    for i in range(n_val):
        if i % 2 == 0:
            emit("val", f"val_{i:03d}", None, 0, None)
        else:
            emit("val", f"val_{i:03d}", _block_mask(rng, grid, block_fraction), 1, None)
    for i in range(n_test):
        if i % 2 == 0:
            emit("test", f"test_{i:03d}", None, 0, None)
        else:
            emit("test", f"test_{i:03d}", _block_mask(rng, grid, block_fraction), 1, None)

    manifest_path = root / "manifest.json"
    ft.write_manifest(manifest_path, splits)
    return manifest_path
