"""PNG image and mask IO.

Images load as float64 in [0, 1]: 8-bit values divide by 255, 16-bit by
65535. Grayscale comes back as [H][W][1], RGB as [H][W][3]. Masks are
strictly {0, 255} on disk and {0, 1} uint8 in memory.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ParameterError


def read_image(path) -> np.ndarray:
    img = Image.open(path)
    if img.mode in ("I;16", "I;16B", "I"):
        arr = np.asarray(img, dtype=np.float64) / 65535.0
    elif img.mode in ("L", "RGB"):
        arr = np.asarray(img, dtype=np.float64) / 255.0
    else:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return np.clip(arr, 0.0, 1.0)


def write_image(arr: np.ndarray, path, *, bit_depth: int = 8) -> None:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ParameterError(f"image must be [H][W][1|3], got shape {arr.shape}")
    arr = np.clip(arr, 0.0, 1.0)
    if bit_depth == 8:
        data = np.round(arr * 255.0).astype(np.uint8)
        img = Image.fromarray(data[:, :, 0], mode="L") if data.shape[2] == 1 else Image.fromarray(data, mode="RGB")
    elif bit_depth == 16:
        if arr.shape[2] != 1:
            raise ParameterError("16-bit output supports grayscale only")
        data = np.round(arr[:, :, 0] * 65535.0).astype(np.uint16)
        img = Image.fromarray(data, mode="I;16")
    else:
        raise ParameterError(f"bit depth must be 8 or 16, got {bit_depth}")
    _atomic_save(img, Path(path))


def read_mask(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return (arr >= 128).astype(np.uint8)


def write_mask(mask: np.ndarray, path) -> None:
    data = np.where(np.asarray(mask) > 0, 255, 0).astype(np.uint8)
    _atomic_save(Image.fromarray(data, mode="L"), Path(path))


def _atomic_save(img: Image.Image, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp.png")
    img.save(tmp, format="PNG")
    os.replace(tmp, path)
