"""Lorentz (hyperboloid) model of hyperbolic space with curvature c > 0.

Points live on the upper sheet of the two-sheeted hyperboloid

    L_c^n = { z = (z0, z_vec) in R x R^n : <z, z>_L = -1/c,  z0 > 0 },

where <a, b>_L = a_vec . b_vec - a0 b0 is the Lorentz inner product.
The origin is O = (1/sqrt(c), 0). Every function here is a pure function of
its arguments in float64; the array-level functions operate on the last axis
and broadcast, so batches of points are first-class.

Curvature is carried as log(c): optimizers work on an unconstrained parameter
and c = exp(log_c) can never leave (0, inf).

Note on constraint checks: <z, z>_L is a difference of squares. For points far
from the origin (z0 ~ cosh of the radius) float64 cancellation makes the
absolute residual meaningless, so `hyperboloid_residual` normalizes by the
squared magnitude of the coordinates once that exceeds 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateHyperplaneError,
    DegenerateWeightsError,
    DimensionError,
    InvalidPointError,
    ParameterError,
)

__all__ = [
    "Curvature",
    "LorentzPoint",
    "TangentVector",
    "Hyperplane",
    "lorentz_inner",
    "lorentz_norm",
    "origin",
    "expmap_origin",
    "logmap_origin",
    "lorentz_to_poincare",
    "lorentzian_centroid",
    "hyperplane_distance",
    "hyperplane_logit",
    "anomaly_probability",
    "sinhc",
    "expmap_origin_array",
    "logmap_origin_array",
    "poincare_array",
    "centroid_array",
    "hyperplane_distance_array",
    "hyperplane_logit_array",
    "project_to_hyperboloid",
    "hyperboloid_residual",
]

# Taylor switch for sinh(x)/x; below this the series is exact to double precision.
_SINHC_TAYLOR = 1e-4


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Curvature:
    """Positive curvature parameter, stored as log(c).

    The exponential parametrization guarantees c > 0 for any real log_c,
    so an optimizer can update log_c freely.
    """

    log_c: float = 0.0

    @property
    def c(self) -> float:
        return math.exp(self.log_c)

    @property
    def sqrt_c(self) -> float:
        return math.exp(0.5 * self.log_c)

    @classmethod
    def from_c(cls, c: float) -> "Curvature":
        if not (c > 0.0) or not math.isfinite(c):
            raise ParameterError(f"curvature must be a positive finite real, got {c}")
        return cls(math.log(c))


@dataclass(frozen=True)
class LorentzPoint:
    """A point on the upper hyperboloid sheet: <z, z>_L = -1/c, z0 > 0."""

    coords: np.ndarray
    curvature: Curvature = field(default_factory=Curvature)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 1 or coords.shape[0] < 2:
            raise DimensionError(f"point needs >= 2 ambient coords, got shape {coords.shape}")
        if not coords[0] > 0.0:
            raise InvalidPointError(f"time component must be positive, got {coords[0]}")

    @property
    def time(self) -> float:
        return float(self.coords[0])

    @property
    def space(self) -> np.ndarray:
        return self.coords[1:]

    @property
    def n(self) -> int:
        """Intrinsic dimension (ambient dimension minus one)."""
        return self.coords.shape[0] - 1


@dataclass(frozen=True)
class TangentVector:
    """Tangent vector at a base point, in ambient coordinates.

    At the origin O the tangent space is {(0, v_vec)}: the time component
    vanishes because <v, O>_L = -v0 / sqrt(c) must be zero.
    """

    coords: np.ndarray
    base: LorentzPoint

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        if coords.shape != self.base.coords.shape:
            raise DimensionError("tangent vector and base point must share ambient dimension")

    @property
    def space(self) -> np.ndarray:
        return self.coords[1:]


@dataclass(frozen=True)
class Hyperplane:
    """Decision hyperplane H_w = { z : <w, z>_L = 0 } for a spacelike w."""

    w: np.ndarray
    curvature: Curvature = field(default_factory=Curvature)

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if w.ndim != 1 or w.shape[0] < 2:
            raise DimensionError(f"hyperplane vector needs >= 2 coords, got shape {w.shape}")


# ---------------------------------------------------------------------------
# scalar helpers
# ---------------------------------------------------------------------------


def sinhc(x):
    """sinh(x)/x, with the Taylor limit 1 + x^2/6 + x^4/120 near zero.

    Safe at x = 0; vectorized over arrays.
    """
    x = np.asarray(x, dtype=np.float64)
    small = np.abs(x) < _SINHC_TAYLOR
    # avoid 0/0 in the masked lane before selecting
    safe = np.where(small, 1.0, x)
    out = np.where(small, 1.0 + x * x / 6.0 + x**4 / 120.0, np.sinh(safe) / safe)
    if out.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# array-level core (last-axis semantics, broadcastable curvature)
# ---------------------------------------------------------------------------


def lorentz_inner(a, b, *, axis: int = -1):
    """Lorentz inner product a_vec . b_vec - a0 b0 along `axis`.

    Returns a scalar for 1-D inputs, an array otherwise. Raises
    DimensionError when the operand lengths differ along `axis`.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[axis] != b.shape[axis]:
        raise DimensionError(f"length mismatch: {a.shape[axis]} vs {b.shape[axis]}")
    if a.shape[axis] < 2:
        raise DimensionError("Lorentz inner product needs >= 2 ambient coords")
    a = np.moveaxis(a, axis, -1)
    b = np.moveaxis(b, axis, -1)
    out = np.sum(a[..., 1:] * b[..., 1:], axis=-1) - a[..., 0] * b[..., 0]
    if out.ndim == 0:
        return float(out)
    return out


def lorentz_norm(v, *, axis: int = -1):
    """sqrt(|<v, v>_L|); the Euclidean space-part norm for tangents at O."""
    q = lorentz_inner(v, v, axis=axis)
    return np.sqrt(np.abs(q)) if isinstance(q, np.ndarray) else math.sqrt(abs(q))


def _as_c_array(c):
    if isinstance(c, Curvature):
        return np.float64(c.c)
    return np.asarray(c, dtype=np.float64)


def expmap_origin_array(v_space, c):
    """Exponential map at O for space parts `v_space` [..., n]; c broadcasts.

    exp_O(v) = cosh(sqrt(c) ||v||) * O + sinh(sqrt(c) ||v||)/(sqrt(c) ||v||) * v
    with O = (1/sqrt(c), 0), which reduces to

        z0    = cosh(sqrt(c) r) / sqrt(c),   r = ||v_space||_2
        z_vec = sinhc(sqrt(c) r) * v_space.
    """
    v = np.asarray(v_space, dtype=np.float64)
    c = _as_c_array(c)
    sqrt_c = np.sqrt(c)
    r = np.sqrt(np.sum(v * v, axis=-1))
    arg = sqrt_c * r
    z0 = np.cosh(arg) / sqrt_c
    zs = np.asarray(sinhc(arg))[..., None] * v
    return np.concatenate([np.asarray(z0)[..., None], zs], axis=-1)


def logmap_origin_array(z, c):
    """Inverse of `expmap_origin_array`: space part of log_O(z).

    v = (d / ||z_vec||) z_vec with d = arccosh(sqrt(c) z0) / sqrt(c); the
    zero-space-part case maps to the zero vector.
    """
    z = np.asarray(z, dtype=np.float64)
    c = _as_c_array(c)
    sqrt_c = np.sqrt(c)
    zs = z[..., 1:]
    r = np.sqrt(np.sum(zs * zs, axis=-1))
    u = np.maximum(np.asarray(sqrt_c * z[..., 0]), 1.0)
    d = np.arccosh(u) / sqrt_c
    scale = np.where(r > 0.0, d / np.where(r > 0.0, r, 1.0), 0.0)
    return np.asarray(scale)[..., None] * zs


def poincare_array(z, c):
    """Map hyperboloid points to the Poincare ball of radius 1/sqrt(c).

    p_vec = z_vec / (sqrt(c) z0 + 1); on the upper sheet the image is strictly
    inside the ball, since ||p||^2 = (sqrt(c) z0 - 1) / (c (sqrt(c) z0 + 1)) < 1/c.
    """
    z = np.asarray(z, dtype=np.float64)
    c = _as_c_array(c)
    denom = np.sqrt(c) * z[..., :1] + 1.0
    return z[..., 1:] / denom


def centroid_array(points, weights, c):
    """Weighted Lorentzian centroid over the second-to-last axis.

    points [..., L, n+1], weights [..., L]. Computes z' = sum_l w_l p_l and
    renormalizes onto the hyperboloid: z = z' / (sqrt(c) ||z'||_L). The 1/sqrt(c)
    scaling is what lands on <z, z>_L = -1/c (a sqrt(c) prefactor would land on
    -c instead).
    """
    points = np.asarray(points, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    c = _as_c_array(c)
    zp = np.sum(weights[..., None] * points, axis=-2)
    q = lorentz_inner(zp, zp)
    nrm = np.sqrt(np.abs(q))
    return zp / np.asarray(np.sqrt(c) * nrm)[..., None]


def hyperplane_distance_array(z, w, c):
    """Geodesic distance to H_w: |asinh(sqrt(c) <w,z>_L / ||w||_L)| / sqrt(c)."""
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    c = _as_c_array(c)
    sqrt_c = np.sqrt(c)
    wn = lorentz_norm(w)
    ratio = lorentz_inner(z, w) / wn
    return np.abs(np.arcsinh(sqrt_c * ratio)) / sqrt_c


def hyperplane_logit_array(z, w, c):
    """Signed classifier logit sign(<w,z>_L) ||w||_L d(z, H_w).

    Since asinh is odd this equals (||w||_L / sqrt(c)) asinh(sqrt(c) <w,z>_L / ||w||_L),
    which is the smooth form used throughout.
    """
    z = np.asarray(z, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    c = _as_c_array(c)
    sqrt_c = np.sqrt(c)
    wn = lorentz_norm(w)
    ratio = lorentz_inner(z, w) / wn
    return wn * np.arcsinh(sqrt_c * ratio) / sqrt_c


def anomaly_probability(logit):
    """p = 1 / (1 + exp(logit)), in the stable two-branch form.

    Negative logits indicate anomaly under this convention; the formula is
    kept verbatim and training orients the hyperplane accordingly.
    """
    x = np.asarray(logit, dtype=np.float64)
    pos = x >= 0
    safe_neg = np.where(pos, 0.0, x)
    safe_pos = np.where(pos, x, 0.0)
    out = np.where(pos, np.exp(-safe_pos) / (1.0 + np.exp(-safe_pos)), 1.0 / (1.0 + np.exp(safe_neg)))
    if out.ndim == 0:
        return float(out)
    return out


def project_to_hyperboloid(space, c):
    """Exact repair: given a space part, recompute z0 = sqrt(||z_vec||^2 + 1/c)."""
    space = np.asarray(space, dtype=np.float64)
    c = _as_c_array(c)
    z0 = np.sqrt(np.sum(space * space, axis=-1) + 1.0 / c)
    return np.concatenate([np.asarray(z0)[..., None], space], axis=-1)


def hyperboloid_residual(z, c):
    """Constraint defect |<z,z>_L + 1/c|, normalized by the coordinate scale.

    The normalizer max(1, z0^2 + ||z_vec||^2) keeps the residual meaningful for
    far-out points where the difference of squares underlying <z,z>_L cancels
    catastrophically in float64; near the origin it is the plain absolute
    residual.
    """
    z = np.asarray(z, dtype=np.float64)
    c = _as_c_array(c)
    q = lorentz_inner(z, z)
    scale = np.maximum(1.0, np.sum(z * z, axis=-1))
    out = np.abs(q + 1.0 / c) / scale
    if np.ndim(out) == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# typed API
# ---------------------------------------------------------------------------


def origin(c: Curvature, n: int) -> LorentzPoint:
    """Hyperboloid origin O = (1/sqrt(c), 0, ..., 0) in n+1 ambient coords."""
    if n < 1:
        raise ParameterError(f"intrinsic dimension must be >= 1, got {n}")
    coords = np.zeros(n + 1, dtype=np.float64)
    coords[0] = 1.0 / c.sqrt_c
    return LorentzPoint(coords, c)


def expmap_origin(v_space, c: Curvature) -> LorentzPoint:
    """Lift a Euclidean vector (space part of a tangent at O) onto the hyperboloid."""
    v = np.asarray(v_space, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] < 1:
        raise DimensionError(f"expected a 1-D space part, got shape {v.shape}")
    return LorentzPoint(expmap_origin_array(v, c), c)


def validate_point(z: LorentzPoint, *, tol: float = 1e-4) -> None:
    """Raise InvalidPointError when z is off-manifold beyond `tol` (scale-relative)."""
    res = hyperboloid_residual(z.coords, z.curvature)
    if res > tol:
        raise InvalidPointError(f"hyperboloid constraint violated: residual {res:.3e} > {tol:.0e}")


def logmap_origin(z: LorentzPoint) -> np.ndarray:
    """Space part of the tangent v at O with exp_O(v) = z; inverse of expmap_origin."""
    validate_point(z)
    return logmap_origin_array(z.coords, z.curvature)


def lorentz_to_poincare(z: LorentzPoint) -> np.ndarray:
    """Poincare-ball coordinates of z; norm strictly below 1/sqrt(c)."""
    return poincare_array(z.coords, z.curvature)


def lorentzian_centroid(points: Sequence[LorentzPoint], weights) -> LorentzPoint:
    """Weighted Lorentzian centroid of points on one c-hyperboloid.

    Requires at least one point, matching dimensions and curvatures, and at
    least one strictly positive weight (weights may not be negative).
    """
    if len(points) == 0:
        raise ParameterError("centroid needs at least one point")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(points),):
        raise DimensionError(f"need one weight per point, got {weights.shape} for {len(points)} points")
    if np.any(weights < 0.0):
        raise DegenerateWeightsError("centroid weights must be non-negative")
    if not np.any(weights > 0.0):
        raise DegenerateWeightsError("centroid weights are all zero")
    curv = points[0].curvature
    dim = points[0].coords.shape[0]
    for p in points[1:]:
        if p.coords.shape[0] != dim:
            raise DimensionError("centroid points must share ambient dimension")
        if p.curvature != curv:
            raise ParameterError("centroid points must share curvature")
    stack = np.stack([p.coords for p in points], axis=0)
    return LorentzPoint(centroid_array(stack, weights, curv), curv)


def _check_spacelike(h: Hyperplane) -> float:
    q = lorentz_inner(h.w, h.w)
    if not q > 0.0:
        raise DegenerateHyperplaneError(f"hyperplane vector must be spacelike, <w,w>_L = {q:.3e}")
    return q


def hyperplane_distance(z: LorentzPoint, h: Hyperplane) -> float:
    """Geodesic distance from z to H_w; non-negative, invariant to rescaling w."""
    _check_spacelike(h)
    if z.coords.shape != h.w.shape:
        raise DimensionError("point and hyperplane vector must share ambient dimension")
    return float(hyperplane_distance_array(z.coords, h.w, z.curvature))


def hyperplane_logit(z: LorentzPoint, h: Hyperplane) -> float:
    """Signed logit sign(<w,z>_L) ||w||_L d(z, H_w)."""
    _check_spacelike(h)
    if z.coords.shape != h.w.shape:
        raise DimensionError("point and hyperplane vector must share ambient dimension")
    return float(hyperplane_logit_array(z.coords, h.w, z.curvature))
