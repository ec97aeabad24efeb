"""Optimization loop, evaluation, and the ablation/few-shot harnesses.

Training runs Adam on the per-level projections, the hyperplane vector, and
(in learnable mode) the log-curvature. A batch is `batch_size` manifest
records; their pixel rows are pooled and the class-balanced BCE is taken over
that pool. All randomness derives from the config seed; training is bitwise
deterministic for a fixed (seed, config, platform).

Model selection: when the manifest has a validation split with image-level
labels of both classes, the image AUROC is evaluated every `val_every` epochs
and the best state is the one returned (and checkpointed).
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import features as ft
from . import model as mdl
from .errors import ManifestError, ParameterError, UndefinedMetricError
from .metrics import auroc
from .rng import generator

SPACELIKE_FLOOR = 1e-9


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    patch_size: int = 3
    levels: tuple[str, ...] = ("layer_2", "layer_3")
    d_out: int = 128
    curvature: str | float = "learnable"  # "learnable" or a fixed positive c
    synthesis_mix: tuple[float, float, float] = (1.0, 1.0, 1.0)
    few_shot_k: int | None = None
    max_steps: int | None = None
    val_every: int = 5

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.patch_size < 1:
            raise ParameterError("epochs >= 0, batch_size >= 1, lr > 0, patch_size >= 1 required")
        if self.d_out < 1 or not self.levels:
            raise ParameterError("d_out >= 1 and at least one level required")
        if isinstance(self.curvature, str):
            if self.curvature != "learnable":
                raise ParameterError(f"curvature must be 'learnable' or a positive number, got {self.curvature!r}")
        elif not (float(self.curvature) > 0):
            raise ParameterError(f"fixed curvature must be positive, got {self.curvature}")
        if self.max_steps is not None and self.max_steps < 0:
            raise ParameterError("max_steps must be >= 0")

    @property
    def learnable_curvature(self) -> bool:
        return isinstance(self.curvature, str)

    @property
    def init_log_c(self) -> float:
        return 0.0 if self.learnable_curvature else math.log(float(self.curvature))


@dataclass
class OptimState:
    """Adam moments; beta/epsilon defaults are recorded here and in checkpoints."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], opt: OptimState, lr: float):
    """One bias-corrected Adam update, in place; returns the params dict."""
    opt.step += 1
    t = opt.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ParameterError(f"gradient shape {g.shape} does not match parameter '{name}' {p.shape}")
        if name not in opt.m:
            opt.m[name] = np.zeros_like(p)
            opt.v[name] = np.zeros_like(p)
        opt.m[name] = opt.beta1 * opt.m[name] + (1 - opt.beta1) * g
        opt.v[name] = opt.beta2 * opt.v[name] + (1 - opt.beta2) * g * g
        m_hat = opt.m[name] / (1 - opt.beta1**t)
        v_hat = opt.v[name] / (1 - opt.beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + opt.eps)
    return params


def _revalidate_hyperplane(state: mdl.ModelState, rng) -> None:
    """Re-randomize the space part if an update left w non-spacelike."""
    w = state.hyperplane
    q = float(np.sum(w[1:] ** 2) - w[0] ** 2)
    if q <= SPACELIKE_FLOOR:
        space = rng.normal(size=w.shape[0] - 1)
        space *= math.sqrt(w[0] ** 2 + 1.0) / np.linalg.norm(space)
        state.hyperplane = np.concatenate([[w[0]], space])


# ---------------------------------------------------------------------------
# data access
# ---------------------------------------------------------------------------


class _PixelCache:
    """Loads and caches per-record pixel rows for one (levels, patch) setting."""

    def __init__(self, levels, patch):
        self.levels = list(levels)
        self.patch = patch
        self._store = {}

    def get(self, record: ft.Record):
        key = record.identity()
        if key not in self._store:
            feats, labels, shape = ft.load_aligned(record, self.levels, self.patch)
            if labels is None:
                labels = np.zeros(next(iter(feats.values())).shape[0], dtype=np.int64)
            self._store[key] = (feats, labels, shape)
        return self._store[key]


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    image_auroc: float | None = None
    pixel_auroc: float | None = None
    image_error: str | None = None
    pixel_error: str | None = None
    final_loss: float | None = None
    final_c: float | None = None
    runtime_s: float = 0.0

    @property
    def undefined(self) -> bool:
        return self.image_error is not None or self.pixel_error is not None


@dataclass
class EvalReport:
    """Per-seed metric values plus min/mean/max aggregates."""

    results: list[SeedResult] = field(default_factory=list)

    def _values(self, attr):
        return [getattr(r, attr) for r in self.results if getattr(r, attr) is not None]

    def summary(self) -> dict:
        out = {"n_seeds": len(self.results)}
        for attr in ("image_auroc", "pixel_auroc"):
            vals = self._values(attr)
            if vals:
                out[f"{attr}_mean"] = float(np.mean(vals))
                out[f"{attr}_min"] = float(np.min(vals))
                out[f"{attr}_max"] = float(np.max(vals))
            else:
                out[f"{attr}_mean"] = out[f"{attr}_min"] = out[f"{attr}_max"] = None
        return out


def evaluate(state: mdl.ModelState, records, config: TrainConfig, seed: int | None = None) -> SeedResult:
    """Image- and pixel-level AUROC of a model over manifest records.

    Pixel AUROC pools every pixel of records that carry masks. A metric whose
    inputs are degenerate (single class, no masks) is surfaced as a per-metric
    error string instead of failing the whole evaluation.
    """
    t0 = time.perf_counter()
    cache = _PixelCache(config.levels, config.patch_size)
    image_scores, image_labels = [], []
    pixel_probs, pixel_labels = [], []
    for record in records:
        feats, labels, _ = cache.get(record)
        probs = mdl.forward(feats, state)
        image_scores.append(mdl.image_score(probs))
        image_labels.append(record.label)
        if record.mask is not None:
            pixel_probs.append(probs)
            pixel_labels.append(labels)
    result = SeedResult(seed=-1 if seed is None else seed, final_c=state.curvature)
    try:
        result.image_auroc = auroc(np.asarray(image_scores), np.asarray(image_labels))
    except UndefinedMetricError as exc:
        result.image_error = str(exc)
    if pixel_probs:
        try:
            result.pixel_auroc = auroc(np.concatenate(pixel_probs), np.concatenate(pixel_labels))
        except UndefinedMetricError as exc:
            result.pixel_error = str(exc)
    else:
        result.pixel_error = "pixel AUROC undefined: no masks in split"
    result.runtime_s = time.perf_counter() - t0
    return result


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    state: mdl.ModelState
    log: list[dict]
    step: int
    optimizer: OptimState


def _state_params(state: mdl.ModelState, learnable_c: bool) -> dict[str, np.ndarray]:
    params = {"w": state.hyperplane}
    for lvl in state.levels:
        params[f"W:{lvl}"] = state.projections[lvl]
    if learnable_c:
        params["log_c"] = np.array(state.log_c)
    return params


def train(manifest: ft.Manifest, config: TrainConfig, *, resume_from=None) -> TrainResult:
    """Optimize the hyperbolic head on the manifest's train split.

    Deterministic under (seed, config). Returns the selected state (best
    validation image-AUROC checkpoint when a usable val split exists, else
    the final state), the per-epoch log, and the optimizer state.
    """
    config.validate()
    records = manifest.split("train")
    if not records:
        raise ManifestError("train split is empty")
    cache = _PixelCache(config.levels, config.patch_size)
    first_feats, _, _ = cache.get(records[0])
    level_dims = {lvl: arr.shape[1] for lvl, arr in first_feats.items()}

    start_step = 0
    optimizer = OptimState()
    if resume_from is not None:
        state, start_step, moments = mdl.load_checkpoint(resume_from)
        optimizer.step = start_step
        if moments:
            for pname, mv in moments.items():
                optimizer.m[pname] = mv["m"]
                optimizer.v[pname] = mv["v"]
    else:
        state = mdl.init_state(level_dims, config.d_out, seed=config.seed, log_c=config.init_log_c)
    state.validate()

    shuffle_rng = generator(config.seed, "shuffle")
    wreset_rng = generator(config.seed, "spacelike_reset")
    val_records = manifest.split("val")

    log: list[dict] = []
    best = None  # (val image auroc, state copy)
    step = start_step
    stop = False
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(len(records))
        losses = []
        for lo in range(0, len(order), config.batch_size):
            if config.max_steps is not None and (step - start_step) >= config.max_steps:
                stop = True
                break
            batch = [records[i] for i in order[lo : lo + config.batch_size]]
            feats = {lvl: [] for lvl in config.levels}
            labels = []
            for rec in batch:
                f, y, _ = cache.get(rec)
                for lvl in config.levels:
                    feats[lvl].append(f[lvl])
                labels.append(y)
            feats = {lvl: np.concatenate(chunks, axis=0) for lvl, chunks in feats.items()}
            labels = np.concatenate(labels)

            tape = ad.Tape()
            loss_node, param_nodes = mdl.loss_tape(tape, feats, labels, state, train_curvature=config.learnable_curvature)
            tape.backward(loss_node)
            params = _state_params(state, config.learnable_curvature)
            grads = {}
            for name in params:
                node = param_nodes[name]
                grads[name] = node.grad if node.grad is not None else np.zeros_like(params[name])
            loss_value = float(loss_node.value)
            if not math.isfinite(loss_value):
                raise ParameterError(
                    f"non-finite loss at step {step}: feature magnitudes likely exceed the "
                    "float64 range of the exponential map (check the extractor's normalization)"
                )
            adam_step(params, grads, optimizer, config.lr)
            if config.learnable_curvature:
                state.log_c = float(params["log_c"])
            _revalidate_hyperplane(state, wreset_rng)
            losses.append(loss_value)
            step += 1
        entry = {
            "epoch": epoch,
            "step": step,
            "loss": float(np.mean(losses)) if losses else None,
            "c": state.curvature,
        }
        run_val = bool(val_records) and (epoch % config.val_every == config.val_every - 1 or epoch == config.epochs - 1)
        if run_val:
            val = evaluate(state, val_records, config)
            entry["val_image_auroc"] = val.image_auroc
            entry["val_pixel_auroc"] = val.pixel_auroc
            # ties resolve to the later (more trained) state; val AUROC is coarse
            if val.image_auroc is not None and (best is None or val.image_auroc >= best[0]):
                best = (val.image_auroc, state.copy(), step)
        log.append(entry)
        if stop:
            break
    final_state = best[1] if best is not None else state
    return TrainResult(state=final_state, log=log, step=step, optimizer=optimizer)


# ---------------------------------------------------------------------------
# harnesses
# ---------------------------------------------------------------------------


def few_shot_harness(manifest: ft.Manifest, ks, seeds, config: TrainConfig) -> dict[int, EvalReport]:
    """Train/evaluate at each normal-image budget K.

    The K-image training subset is fixed (manifest order of distinct source
    images); only the per-seed model-init and batching RNG vary, mirroring an
    error-band protocol that never changes the training set.
    """
    records = manifest.split("train")
    if not records:
        raise ManifestError("train split is empty")
    sources, seen = [], set()
    for rec in records:
        src = rec.source or rec.identity()
        if src not in seen:
            seen.add(src)
            sources.append(src)
    ks = sorted(int(k) for k in ks)
    if ks[0] < 1:
        raise ParameterError("K must be >= 1")
    if ks[-1] > len(sources):
        raise ParameterError(f"K={ks[-1]} exceeds the {len(sources)} available normal images")
    test_records = manifest.split("test")
    out: dict[int, EvalReport] = {}
    for k in ks:
        chosen = set(sources[:k])
        subset = [rec for rec in records if (rec.source or rec.identity()) in chosen]
        sub_manifest = ft.Manifest(splits={"train": subset, "val": manifest.split("val"), "test": test_records}, root=manifest.root)
        report = EvalReport()
        for seed in seeds:
            cfg = replace(config, seed=int(seed))
            result = train(sub_manifest, cfg)
            res = evaluate(result.state, test_records, cfg, seed=int(seed))
            res.final_loss = result.log[-1]["loss"] if result.log else None
            res.final_c = result.state.curvature
            report.results.append(res)
        out[k] = report
    return out


ABLATION_AXES = ("curvature", "patch", "dim")


def ablation_harness(axis: str, values, config: TrainConfig, manifest: ft.Manifest) -> list[dict]:
    """Train+evaluate per axis value; returns CSV-ready rows.

    The curvature axis appends the learnable-curvature configuration as a
    reference row.
    """
    if axis not in ABLATION_AXES:
        raise ParameterError(f"unknown ablation axis '{axis}'; pick one of {ABLATION_AXES}")
    runs: list[tuple[str, TrainConfig]] = []
    for v in values:
        if axis == "curvature":
            runs.append((str(v), replace(config, curvature=float(v))))
        elif axis == "patch":
            runs.append((str(int(v)), replace(config, patch_size=int(v))))
        else:
            runs.append((str(int(v)), replace(config, d_out=int(v))))
    if axis == "curvature":
        runs.append(("learnable", replace(config, curvature="learnable")))
    rows = []
    for label, cfg in runs:
        t0 = time.perf_counter()
        result = train(manifest, cfg)
        res = evaluate(result.state, manifest.split("test"), cfg, seed=cfg.seed)
        rows.append(
            {
                "axis": axis,
                "value": label,
                "image_auroc": res.image_auroc,
                "pixel_auroc": res.pixel_auroc,
                "final_loss": result.log[-1]["loss"] if result.log else None,
                "final_c": result.state.curvature,
                "runtime_s": time.perf_counter() - t0,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# report writers (atomic, fixed column order)
# ---------------------------------------------------------------------------

ABLATION_COLUMNS = ["axis", "value", "image_auroc", "pixel_auroc", "final_loss", "final_c", "runtime_s"]
FEWSHOT_COLUMNS = [
    "k",
    "n_seeds",
    "image_auroc_mean",
    "image_auroc_min",
    "image_auroc_max",
    "pixel_auroc_mean",
    "pixel_auroc_min",
    "pixel_auroc_max",
]
EVAL_COLUMNS = ["seed", "image_auroc", "pixel_auroc", "final_loss", "final_c", "runtime_s", "image_error", "pixel_error"]


def _atomic_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_csv(path, columns, rows: list[dict]) -> None:
    import io

    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})
    _atomic_text(Path(path), buf.getvalue())


def write_eval_csv(path, report: EvalReport) -> None:
    rows = [
        {
            "seed": r.seed,
            "image_auroc": r.image_auroc,
            "pixel_auroc": r.pixel_auroc,
            "final_loss": r.final_loss,
            "final_c": r.final_c,
            "runtime_s": round(r.runtime_s, 6),
            "image_error": r.image_error,
            "pixel_error": r.pixel_error,
        }
        for r in report.results
    ]
    write_csv(path, EVAL_COLUMNS, rows)


def write_fewshot_csv(path, reports: dict[int, EvalReport]) -> None:
    rows = []
    for k in sorted(reports):
        s = reports[k].summary()
        rows.append({"k": k, **{col: s.get(col) for col in FEWSHOT_COLUMNS[1:]}})
    write_csv(path, FEWSHOT_COLUMNS, rows)


def write_train_log(path, log: list[dict]) -> None:
    text = "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in log)
    _atomic_text(Path(path), text)
