"""The trainable hyperbolic head.

Per pixel and per feature level l: lift the Euclidean feature f_l onto the
c-hyperboloid with the exponential map at the origin, project it to a lower
d_out-dimensional hyperboloid with a space-part linear map (time component
recomputed exactly), weight each level by the Euclidean norm of its
Poincare-ball image (far from the ball center = confident), fuse levels with
the weighted Lorentzian centroid, and score against a hyperbolic hyperplane:

    logit  = sign(<w, z>_L) ||w||_L d(z, H_w)
    p      = 1 / (1 + exp(logit))        # negative logit = anomalous
    loss   = mean_{anomalous} -log p + mean_{normal} -log(1 - p)

The forward pass exists twice on purpose: a vectorized numpy path for
evaluation, and a tape path (autodiff module) for training. A test pins them
together.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import features as ft
from . import geometry as geo
from .errors import CheckpointError, DegenerateHyperplaneError, DimensionError
from .rng import generator

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class ModelState:
    """Learnable parameters: per-level projections, hyperplane, log-curvature."""

    projections: dict[str, np.ndarray]  # level -> [d_out, d_in_l]
    hyperplane: np.ndarray  # [d_out + 1], spacelike
    log_c: float
    levels: list[str]
    d_out: int

    def copy(self) -> "ModelState":
        return ModelState(
            projections={k: v.copy() for k, v in self.projections.items()},
            hyperplane=self.hyperplane.copy(),
            log_c=float(self.log_c),
            levels=list(self.levels),
            d_out=self.d_out,
        )

    @property
    def curvature(self) -> float:
        return math.exp(self.log_c)

    def validate(self) -> None:
        q = geo.lorentz_inner(self.hyperplane, self.hyperplane)
        if not q > 0:
            raise DegenerateHyperplaneError(f"hyperplane is not spacelike (<w,w>_L = {q:.3e})")
        for lvl, W in self.projections.items():
            if not np.all(np.isfinite(W)):
                raise DimensionError(f"non-finite projection weights at level '{lvl}'")


def init_state(level_dims: dict[str, int], d_out: int, seed: int, log_c: float = 0.0) -> ModelState:
    """Fresh parameters: W_l ~ U[-1/sqrt(d_in), 1/sqrt(d_in)]; w has zero time
    component and unit-norm random space part (spacelike by construction)."""
    rng = generator(seed, "model_init")
    projections = {}
    for level in sorted(level_dims):
        d_in = level_dims[level]
        bound = 1.0 / math.sqrt(d_in)
        projections[level] = rng.uniform(-bound, bound, size=(d_out, d_in))
    space = rng.normal(size=d_out)
    space /= np.linalg.norm(space)
    hyperplane = np.concatenate([[0.0], space])
    return ModelState(
        projections=projections,
        hyperplane=hyperplane,
        log_c=float(log_c),
        levels=sorted(level_dims),
        d_out=d_out,
    )


# ---------------------------------------------------------------------------
# single-vector ops (contract-level API; the batched paths below vectorize)
# ---------------------------------------------------------------------------


def lift(f: np.ndarray, c: geo.Curvature) -> geo.LorentzPoint:
    """Euclidean feature -> hyperboloid point via the exponential map at O."""
    return geo.expmap_origin(np.asarray(f, dtype=np.float64), c)


def hyperbolic_linear(z: geo.LorentzPoint, weight: np.ndarray) -> geo.LorentzPoint:
    """Space-part matrix map with exact time recomputation.

    y_vec = W z_vec, y0 = sqrt(||y_vec||^2 + 1/c): lands exactly on the
    target hyperboloid regardless of W's conditioning.
    """
    weight = np.asarray(weight, dtype=np.float64)
    if weight.ndim != 2 or weight.shape[1] != z.n:
        raise DimensionError(f"weight {weight.shape} does not map space dim {z.n}")
    y_space = weight @ z.space
    coords = geo.project_to_hyperboloid(y_space, z.curvature)
    return geo.LorentzPoint(coords, z.curvature)


def confidence_weights(points: list[geo.LorentzPoint]) -> np.ndarray:
    """Per-level confidence: Euclidean norm of the Poincare-ball image."""
    return np.array([float(np.linalg.norm(geo.lorentz_to_poincare(p))) for p in points])


def fuse(points: list[geo.LorentzPoint], weights=None) -> geo.LorentzPoint:
    """Confidence-weighted Lorentzian centroid; all-zero weights fall back to
    uniform (the centroid is undefined at z' = 0)."""
    if weights is None:
        weights = confidence_weights(points)
    weights = np.asarray(weights, dtype=np.float64)
    if not np.any(weights > 0):
        weights = np.ones(len(points))
    return geo.lorentzian_centroid(points, weights)


def image_score(prob_map: np.ndarray) -> float:
    """Image-level anomaly score: maximum pixel probability."""
    arr = np.asarray(prob_map, dtype=np.float64)
    if arr.size == 0:
        raise DimensionError("image score needs a nonempty probability map")
    return float(arr.max())


def bce_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Class-balanced BCE on probabilities (kept for the op contract; training
    uses the logit form)."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    eps = 1e-300
    loss = 0.0
    pos = labels == 1
    neg = labels == 0
    if pos.any():
        loss -= float(np.mean(np.log(np.maximum(probs[pos], eps))))
    if neg.any():
        loss -= float(np.mean(np.log(np.maximum(1.0 - probs[neg], eps))))
    return loss


def bce_loss_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Stable log-sum form: mean softplus(logit) over anomalous plus mean
    softplus(-logit) over normal."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)

    def softplus(x):
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))

    loss = 0.0
    pos = labels == 1
    neg = labels == 0
    if pos.any():
        loss += float(np.mean(softplus(logits[pos])))
    if neg.any():
        loss += float(np.mean(softplus(-logits[neg])))
    return loss


# ---------------------------------------------------------------------------
# batched numpy forward (evaluation path)
# ---------------------------------------------------------------------------


def forward_arrays(feats: dict[str, np.ndarray], state: ModelState):
    """Vectorized forward over pixel rows.

    feats maps level -> [B, d_in_l]. Returns (probs [B], logits [B]).
    """
    c = state.curvature
    points, weights = [], []
    for level in state.levels:
        f = np.asarray(feats[level], dtype=np.float64)
        lifted = geo.expmap_origin_array(f, c)
        y_space = lifted[..., 1:] @ state.projections[level].T
        proj = geo.project_to_hyperboloid(y_space, c)
        points.append(proj)
        weights.append(np.linalg.norm(geo.poincare_array(proj, c), axis=-1))
    points = np.stack(points, axis=-2)  # [B, L, d_out+1]
    weights = np.stack(weights, axis=-1)  # [B, L]
    degenerate = ~np.any(weights > 0, axis=-1)
    if degenerate.any():
        weights = weights.copy()
        weights[degenerate] = 1.0
    fused = geo.centroid_array(points, weights, c)
    logits = geo.hyperplane_logit_array(fused, state.hyperplane, c)
    return geo.anomaly_probability(logits), logits


def forward(feats: dict[str, np.ndarray], state: ModelState) -> np.ndarray:
    """Per-pixel anomaly probabilities for a batch of feature rows."""
    probs, _ = forward_arrays(feats, state)
    return np.atleast_1d(probs)


# ---------------------------------------------------------------------------
# tape forward (training path)
# ---------------------------------------------------------------------------


def forward_tape(tape: ad.Tape, feats: dict[str, np.ndarray], state: ModelState, *, train_curvature: bool = True):
    """Build the differentiable forward; returns (logits node, params dict).

    params maps "log_c", "w" and "W:<level>" to their tape nodes (log_c is a
    constant node when curvature is frozen).
    """
    log_c = tape.param(state.log_c) if train_curvature else tape.constant(state.log_c)
    c = ad.exp(log_c)
    w = tape.param(state.hyperplane)
    params = {"log_c": log_c, "w": w}
    points, weights = [], []
    for level in state.levels:
        Wn = tape.param(state.projections[level])
        params[f"W:{level}"] = Wn
        lifted = ad.expmap_origin(tape.constant(feats[level]), c)
        proj = ad.hyperbolic_linear(lifted, Wn, c)
        points.append(proj)
        weights.append(ad.poincare_norm(proj, c))
    fused = ad.lorentzian_centroid(points, weights, c)
    logits = ad.hyperplane_logit(fused, w, c)
    return logits, params


def loss_tape(tape: ad.Tape, feats, labels, state: ModelState, *, train_curvature: bool = True):
    logits, params = forward_tape(tape, feats, state, train_curvature=train_curvature)
    return ad.bce_with_logits(logits, labels), params


# ---------------------------------------------------------------------------
# gradient check (finite-difference oracle over the full loss)
# ---------------------------------------------------------------------------


def gradient_check(seed: int = 0, d_in: int = 4, d_out: int = 3, batch: int = 8, h: float = 1e-5):
    """Compare tape gradients of the full loss against central differences.

    Returns (max_relative_error, report dict per parameter). The comparison
    uses |a - b| <= atol + rtol * max(|a|, |b|) with atol 1e-8, rtol 1e-4.
    """
    rng = generator(seed, "gradcheck")
    levels = {"level_a": d_in, "level_b": d_in}
    state = init_state(levels, d_out, seed=seed)
    feats = {lvl: rng.normal(size=(batch, d)) for lvl, d in levels.items()}
    labels = (rng.uniform(size=batch) < 0.5).astype(int)
    if labels.sum() in (0, batch):
        labels[0] = 1 - labels[0]

    tape = ad.Tape()
    loss_node, params = loss_tape(tape, feats, labels, state)
    tape.backward(loss_node)

    def loss_at(vals: dict[str, np.ndarray]) -> float:
        trial = state.copy()
        trial.log_c = float(vals["log_c"])
        trial.hyperplane = vals["w"]
        for lvl in state.levels:
            trial.projections[lvl] = vals[f"W:{lvl}"]
        t2 = ad.Tape()
        node, _ = loss_tape(t2, feats, labels, trial)
        return float(node.value)

    base = {name: np.array(node.value, dtype=np.float64) for name, node in params.items()}
    report = {}
    worst = 0.0
    for name, node in params.items():
        analytic = node.grad if node.grad is not None else np.zeros_like(node.value)
        fd = np.zeros_like(base[name])
        flat_v = base[name].reshape(-1)
        flat_g = fd.reshape(-1)
        for i in range(flat_v.size):
            orig = flat_v[i]
            flat_v[i] = orig + h
            fp = loss_at(base)
            flat_v[i] = orig - h
            fm = loss_at(base)
            flat_v[i] = orig
            flat_g[i] = (fp - fm) / (2.0 * h)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
        err = float(np.max(np.abs(analytic - fd) / denom))
        ok = bool(np.all(np.abs(analytic - fd) <= 1e-8 + 1e-4 * np.maximum(np.abs(analytic), np.abs(fd))))
        report[name] = {"max_rel_error": err, "ok": ok}
        worst = max(worst, err)
    return worst, report


# ---------------------------------------------------------------------------
# checkpoint IO
# ---------------------------------------------------------------------------


def save_checkpoint(state: ModelState, path, *, step: int = 0, optimizer: dict | None = None) -> None:
    """Write a checkpoint directory: JSON header plus one FTNS file per tensor."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = {"hyperplane": state.hyperplane}
    for lvl, W in state.projections.items():
        tensors[f"proj__{lvl}"] = W
    if optimizer:
        for pname, moments in optimizer.items():
            tensors[f"adam_m__{pname}"] = moments["m"]
            tensors[f"adam_v__{pname}"] = moments["v"]
    for name, arr in tensors.items():
        ft.write_tensor(np.asarray(arr, dtype=np.float64), path / f"{name}.ftns")
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "levels": state.levels,
        "d_in": {lvl: int(state.projections[lvl].shape[1]) for lvl in state.levels},
        "d_out": int(state.d_out),
        "log_c": float(state.log_c),
        "step": int(step),
        "tensors": sorted(tensors),
    }
    ft._atomic_write_bytes(path / "header.json", json.dumps(header, indent=2, sort_keys=True).encode())


def load_checkpoint(path):
    """Read a checkpoint; returns (state, step, optimizer-moments-or-None)."""
    path = Path(path)
    header_path = path / "header.json"
    if not header_path.exists():
        raise CheckpointError(f"no checkpoint header at {header_path}")
    header = json.loads(header_path.read_text())
    if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {header.get('format_version')}")
    projections = {}
    for lvl in header["levels"]:
        W = ft.read_tensor(path / f"proj__{lvl}.ftns")
        want = header["d_in"][lvl]
        if W.shape != (header["d_out"], want):
            raise CheckpointError(f"projection '{lvl}' has shape {W.shape}, header wants ({header['d_out']}, {want})")
        projections[lvl] = W
    state = ModelState(
        projections=projections,
        hyperplane=ft.read_tensor(path / "hyperplane.ftns"),
        log_c=float(header["log_c"]),
        levels=list(header["levels"]),
        d_out=int(header["d_out"]),
    )
    optimizer = None
    names = [n[len("adam_m__"):] for n in header.get("tensors", []) if n.startswith("adam_m__")]
    if names:
        optimizer = {}
        for pname in names:
            optimizer[pname] = {
                "m": ft.read_tensor(path / f"adam_m__{pname}.ftns"),
                "v": ft.read_tensor(path / f"adam_v__{pname}.ftns"),
            }
    return state, int(header.get("step", 0)), optimizer
