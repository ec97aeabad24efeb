"""Synthetic anomaly generation on normal images.

Three recipes produce an anomalous image plus a {0,1} ground-truth mask from
a clean input:

  - cutpaste: a random patch relocated elsewhere, blended either directly or
    seamlessly by solving the discrete Poisson equation (source-patch
    Laplacian as guidance, destination values on the boundary ring);
  - gaussian_intensity: a signed, Gaussian-smoothed intensity blob confined
    to a random ellipse, clamped to [0, 1];
  - source_deformation: pixels inside a mask resampled through a smooth random
    displacement field whose magnitude scales with one knob.

Everything is driven by explicit integer seeds: identical (input, recipe)
pairs produce identical output bytes. Pixels outside the reported region are
bit-identical to the input (gaussian deltas at or below the 0.01 mask
threshold are zeroed for exactly this reason).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ParameterError, SynthesisError
from .rng import generator

DELTA_THRESHOLD = 0.01  # gaussian blob pixels change only above this
POISSON_TOL = 1e-8  # max-norm residual target for the Gauss-Seidel solve
POISSON_MAX_SWEEPS = 10_000
AREA_BOUNDS = (0.0005, 0.25)  # valid anomaly-mask area fraction


@dataclass(frozen=True)
class SynthesisRecipe:
    """Everything needed to reproduce one synthesized anomaly."""

    kind: str  # cutpaste | gaussian_intensity | source_deformation
    seed: int
    params: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# small shared helpers
# ---------------------------------------------------------------------------


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Normalized, truncated (radius 3*sigma) discrete Gaussian."""
    if sigma <= 0:
        raise ParameterError(f"sigma must be positive, got {sigma}")
    radius = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(field2d: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian filter with zero padding outside the image."""
    k = gaussian_kernel1d(sigma)
    pad = len(k) // 2
    out = np.zeros_like(field2d, dtype=np.float64)
    tmp = np.pad(field2d.astype(np.float64), ((pad, pad), (0, 0)))
    for i, kv in enumerate(k):
        out += kv * tmp[i : i + field2d.shape[0], :]
    out2 = np.zeros_like(out)
    tmp = np.pad(out, ((0, 0), (pad, pad)))
    for i, kv in enumerate(k):
        out2 += kv * tmp[:, i : i + field2d.shape[1]]
    return out2


def ellipse_mask(shape: tuple[int, int], center, axes, angle: float) -> np.ndarray:
    """{0,1} indicator of a rotated ellipse."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx = center
    ay, ax = axes
    ca, sa = math.cos(angle), math.sin(angle)
    u = (yy - cy) * ca + (xx - cx) * sa
    v = -(yy - cy) * sa + (xx - cx) * ca
    return ((u / max(ay, 1e-9)) ** 2 + (v / max(ax, 1e-9)) ** 2 <= 1.0).astype(np.uint8)


def smoothed_ellipse(shape: tuple[int, int], center, axes, angle: float, sigma: float) -> np.ndarray:
    """Gaussian-smoothed ellipse indicator; the pre-amplitude blob profile."""
    return gaussian_blur(ellipse_mask(shape, center, axes, angle).astype(np.float64), sigma)


def _sample_ellipse(rng, shape, area_lo=AREA_BOUNDS[0], area_hi=AREA_BOUNDS[1], margin=0):
    """Ellipse with area fraction log-uniform in [area_lo, area_hi]."""
    h, w = shape
    frac = math.exp(rng.uniform(math.log(area_lo), math.log(area_hi)))
    target_area = frac * h * w
    ratio = rng.uniform(0.4, 2.5)  # ay / ax
    ax = math.sqrt(target_area / (math.pi * ratio))
    ay = ratio * ax
    ay = min(ay, (h - 1 - 2 * margin) / 2.0)
    ax = min(ax, (w - 1 - 2 * margin) / 2.0)
    cy = rng.uniform(margin + ay, h - 1 - margin - ay)
    cx = rng.uniform(margin + ax, w - 1 - margin - ax)
    angle = rng.uniform(0, math.pi)
    return (cy, cx), (ay, ax), angle


def _as_image(img: np.ndarray) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ParameterError(f"image must be [H][W][1|3], got shape {np.asarray(img).shape}")
    return arr


# ---------------------------------------------------------------------------
# Poisson blend
# ---------------------------------------------------------------------------


def poisson_blend_patch(dest: np.ndarray, source: np.ndarray) -> np.ndarray:
    """Seamlessly blend `source` into the rectangle occupied by `dest`.

    Solves the discrete Poisson equation on the rectangle interior with the
    source patch's Laplacian as guidance and `dest`'s border ring as Dirichlet
    boundary, per channel, by red-black Gauss-Seidel. Patches smaller than
    3x3 have no interior and come back as `dest` unchanged.
    """
    if dest.shape != source.shape:
        raise ParameterError(f"patch shapes differ: {dest.shape} vs {source.shape}")
    h, w, chans = dest.shape
    out = dest.astype(np.float64, copy=True)
    if h < 3 or w < 3:
        return out
    yy, xx = np.mgrid[1 : h - 1, 1 : w - 1]
    red = ((yy + xx) % 2) == 0
    for ch in range(chans):
        s = source[:, :, ch]
        guide = 4.0 * s[1:-1, 1:-1] - s[:-2, 1:-1] - s[2:, 1:-1] - s[1:-1, :-2] - s[1:-1, 2:]
        f = out[:, :, ch]
        for _ in range(POISSON_MAX_SWEEPS):
            for parity in (red, ~red):
                nb = f[:-2, 1:-1] + f[2:, 1:-1] + f[1:-1, :-2] + f[1:-1, 2:]
                upd = 0.25 * (guide + nb)
                f[1:-1, 1:-1][parity] = upd[parity]
            nb = f[:-2, 1:-1] + f[2:, 1:-1] + f[1:-1, :-2] + f[1:-1, 2:]
            residual = np.max(np.abs(4.0 * f[1:-1, 1:-1] - nb - guide))
            if residual < POISSON_TOL:
                break
        out[:, :, ch] = f
    return out


def poisson_residual(blend: np.ndarray, source: np.ndarray) -> float:
    """Max-norm residual of the discrete Poisson equation at interior pixels."""
    r = 0.0
    for ch in range(blend.shape[2]):
        f, s = blend[:, :, ch], source[:, :, ch]
        guide = 4.0 * s[1:-1, 1:-1] - s[:-2, 1:-1] - s[2:, 1:-1] - s[1:-1, :-2] - s[1:-1, 2:]
        nb = f[:-2, 1:-1] + f[2:, 1:-1] + f[1:-1, :-2] + f[1:-1, 2:]
        r = max(r, float(np.max(np.abs(4.0 * f[1:-1, 1:-1] - nb - guide))))
    return r


# ---------------------------------------------------------------------------
# the three recipes
# ---------------------------------------------------------------------------


def cutpaste(img: np.ndarray, seed: int, patch_range: tuple[int, int] = (0, 0), blend: str = "poisson"):
    """Relocate a random patch and blend it at a new position.

    patch_range bounds the square patch side in pixels; (0, 0) derives a
    range from the image size. Returns (image', mask) where the mask marks
    the destination rectangle.
    """
    img = _as_image(img)
    h, w, _ = img.shape
    rng = generator(seed, "cutpaste")
    lo, hi = patch_range
    if lo <= 0 or hi <= 0:
        lo, hi = max(3, min(h, w) // 8), max(4, min(h, w) // 3)
    if lo > min(h, w) or hi > min(h, w):
        raise ParameterError(f"patch range {patch_range} exceeds image extent {(h, w)}")
    if blend not in ("poisson", "direct"):
        raise ParameterError(f"unknown blend mode '{blend}'")
    side_h = int(rng.integers(lo, hi + 1))
    side_w = int(rng.integers(lo, hi + 1))
    sy = int(rng.integers(0, h - side_h + 1))
    sx = int(rng.integers(0, w - side_w + 1))
    dy = int(rng.integers(0, h - side_h + 1))
    dx = int(rng.integers(0, w - side_w + 1))
    source = img[sy : sy + side_h, sx : sx + side_w].copy()
    out = img.copy()
    if blend == "direct":
        out[dy : dy + side_h, dx : dx + side_w] = source
    else:
        dest = out[dy : dy + side_h, dx : dx + side_w]
        out[dy : dy + side_h, dx : dx + side_w] = poisson_blend_patch(dest, source)
    out = np.clip(out, 0.0, 1.0)
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[dy : dy + side_h, dx : dx + side_w] = 1
    params = {
        "blend": blend,
        "src": [sy, sx],
        "dst": [dy, dx],
        "size": [side_h, side_w],
        "patch_range": [lo, hi],
    }
    return out, mask, params


def gaussian_intensity(
    img: np.ndarray,
    seed: int,
    sigma_range: tuple[float, float] | None = None,
    amplitude_range: tuple[float, float] = (0.2, 0.8),
):
    """Add or subtract a Gaussian-smoothed intensity blob inside a random ellipse.

    The additive field is amplitude * (G_sigma convolved with the ellipse
    indicator); deltas at or below 0.01 are zeroed so pixels outside the
    reported mask stay bit-identical. Output clamps to [0, 1]. By default
    sigma is drawn relative to the ellipse size (0.15-0.5 of the mean axis)
    so the blob keeps visible contrast at any image scale.
    """
    img = _as_image(img)
    h, w, _ = img.shape
    rng = generator(seed, "gaussian_intensity")
    amplitude = float(rng.uniform(*amplitude_range))
    if rng.uniform() < 0.5:
        amplitude = -amplitude
    area_lo = max(AREA_BOUNDS[0], 9.0 / (h * w))  # keep at least a few pixels
    center, axes, angle = _sample_ellipse(rng, (h, w), area_lo=area_lo)
    if sigma_range is None:
        sigma = max(0.5, float(rng.uniform(0.15, 0.5)) * float(np.mean(axes)))
    else:
        sigma = float(rng.uniform(*sigma_range))
    params = {
        "sigma": sigma,
        "amplitude": amplitude,
        "center": list(center),
        "axes": list(axes),
        "angle": angle,
    }
    return apply_gaussian_intensity(img, params), _gaussian_mask(img, params), params


def _gaussian_delta(img: np.ndarray, params: dict) -> np.ndarray:
    blob = smoothed_ellipse(
        img.shape[:2], tuple(params["center"]), tuple(params["axes"]), params["angle"], params["sigma"]
    )
    delta = params["amplitude"] * blob
    delta[np.abs(delta) <= DELTA_THRESHOLD] = 0.0
    return delta


def _gaussian_mask(img: np.ndarray, params: dict) -> np.ndarray:
    return (_gaussian_delta(img, params) != 0.0).astype(np.uint8)


def apply_gaussian_intensity(img: np.ndarray, params: dict) -> np.ndarray:
    img = _as_image(img)
    delta = _gaussian_delta(img, params)
    out = img.copy()
    changed = delta != 0.0
    out[changed, :] = np.clip(img[changed, :] + delta[changed, None], 0.0, 1.0)
    return out


def warp_with_field(img: np.ndarray, mask: np.ndarray, dy: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Bilinear resampling of in-mask pixels at (y + dy, x + dx), clamped.

    Interpolation is in lerp form, so constant regions reproduce exactly;
    pixels outside the mask (or with zero displacement) are copied verbatim.
    """
    img = _as_image(img)
    h, w, _ = img.shape
    out = img.copy()
    inside = np.asarray(mask) > 0
    moved = inside & ((dy != 0.0) | (dx != 0.0))
    if not moved.any():
        return out
    ys, xs = np.nonzero(moved)
    py = np.clip(ys + dy[ys, xs], 0.0, h - 1.0)
    px = np.clip(xs + dx[ys, xs], 0.0, w - 1.0)
    y0 = np.floor(py).astype(np.int64)
    x0 = np.floor(px).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (py - y0)[:, None]
    fx = (px - x0)[:, None]
    top = img[y0, x0] + fx * (img[y0, x1] - img[y0, x0])
    bot = img[y1, x0] + fx * (img[y1, x1] - img[y1, x0])
    out[ys, xs] = top + fy * (bot - top)
    return out


def source_deformation(img: np.ndarray, seed: int, mask: np.ndarray, scale: float):
    """Warp in-mask pixels through a smooth random displacement field.

    The field is white noise blurred with sigma = R/2 (R the mask's
    equivalent radius) and rescaled so its peak magnitude is scale * R.
    Outside the mask the image is untouched; the output mask is the input.
    """
    img = _as_image(img)
    mask = (np.asarray(mask) > 0).astype(np.uint8)
    if mask.shape != img.shape[:2]:
        raise ParameterError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if scale < 0:
        raise ParameterError(f"scale must be >= 0, got {scale}")
    if not mask.any():
        raise ParameterError("deformation mask is empty")
    if scale == 0.0:
        return img.copy(), mask.copy(), {"scale": 0.0}
    rng = generator(seed, "source_deformation")
    radius = math.sqrt(mask.sum() / math.pi)
    sigma = max(radius / 2.0, 0.5)
    dy = gaussian_blur(rng.normal(size=mask.shape), sigma)
    dx = gaussian_blur(rng.normal(size=mask.shape), sigma)
    mag = np.sqrt(dy**2 + dx**2)
    peak = float(mag[mask > 0].max())
    if peak > 0:
        factor = scale * radius / peak
        dy, dx = dy * factor, dx * factor
    dy[mask == 0] = 0.0
    dx[mask == 0] = 0.0
    out = warp_with_field(img, mask, dy, dx)
    return np.clip(out, 0.0, 1.0), mask.copy(), {"scale": scale, "sigma": sigma, "radius": radius}


# ---------------------------------------------------------------------------
# batch driver
# ---------------------------------------------------------------------------

KINDS = ("cutpaste", "gaussian_intensity", "source_deformation")


def synthesize_one(img: np.ndarray, seed: int, kind: str, **kwargs):
    """Run one recipe kind; retries parameter draws until the mask area lands
    inside AREA_BOUNDS (a few draws nearly always suffice)."""
    img = _as_image(img)
    h, w = img.shape[:2]
    lo, hi = AREA_BOUNDS
    for attempt in range(20):
        attempt_seed = seed if attempt == 0 else generator(seed, "retry", attempt).integers(1 << 62)
        if kind == "cutpaste":
            out, mask, params = cutpaste(img, attempt_seed, **kwargs)
        elif kind == "gaussian_intensity":
            out, mask, params = gaussian_intensity(img, attempt_seed, **kwargs)
        elif kind == "source_deformation":
            rng = generator(attempt_seed, "deform_mask")
            center, axes, angle = _sample_ellipse(rng, (h, w), area_lo=0.002)
            region = ellipse_mask((h, w), center, axes, angle)
            if not region.any():
                continue
            scale = kwargs.get("scale", float(rng.uniform(0.05, 0.3)))
            out, mask, params = source_deformation(img, attempt_seed, region, scale)
        else:
            raise ParameterError(f"unknown synthesis kind '{kind}'")
        frac = mask.mean()
        if lo <= frac <= hi:
            return out, mask, SynthesisRecipe(kind=kind, seed=int(attempt_seed), params=params)
    raise SynthesisError(f"could not draw a mask within area bounds {AREA_BOUNDS} for kind '{kind}'")


def apply_recipe(img: np.ndarray, recipe: SynthesisRecipe):
    """Reproduce a synthesis output from its recipe (same seed, same params)."""
    img = _as_image(img)
    if recipe.kind == "cutpaste":
        pr = recipe.params.get("patch_range", (0, 0))
        out, mask, _ = cutpaste(img, recipe.seed, tuple(pr), recipe.params["blend"])
        return out, mask
    if recipe.kind == "gaussian_intensity":
        return apply_gaussian_intensity(img, recipe.params), _gaussian_mask(img, recipe.params)
    if recipe.kind == "source_deformation":
        rng = generator(recipe.seed, "deform_mask")
        center, axes, angle = _sample_ellipse(rng, img.shape[:2], area_lo=0.002)
        region = ellipse_mask(img.shape[:2], center, axes, angle)
        out, mask, _ = source_deformation(img, recipe.seed, region, recipe.params["scale"])
        return out, mask
    raise ParameterError(f"unknown recipe kind '{recipe.kind}'")


def synthesize_batch(images: Sequence[np.ndarray], seed: int, mix_weights=(1.0, 1.0, 1.0)):
    """One recipe per image, kind drawn from mix_weights, per-image seed ^ index.

    Deterministic in (seed, input order). Returns a list of
    (image', mask, recipe) triples.
    """
    mix = np.asarray(mix_weights, dtype=np.float64)
    if mix.shape != (3,) or np.any(mix < 0) or mix.sum() <= 0:
        raise ParameterError(f"mix weights must be 3 non-negative values with positive sum, got {mix_weights}")
    probs = mix / mix.sum()
    out = []
    for i, img in enumerate(images):
        child = (int(seed) ^ i) & ((1 << 64) - 1)
        kind = KINDS[int(generator(child, "kind").choice(3, p=probs))]
        out.append(synthesize_one(img, child, kind))
    return out
