"""Command-line entry point.

Subcommands: synthesize, train, eval, ablate, fewshot, gradcheck. Every run
option can come from an INI config file (flat sections, `--config run.ini`)
or from a `--key value` flag; flags win. Unknown config keys are rejected up
front, as are missing input paths. All randomness flows from the single
`seed` option. Set HYPANOM_LOG=DEBUG|INFO|WARNING to control verbosity.
"""
from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import features as ft
from . import model as mdl
from . import pngio
from . import synthesis as sy
from . import train as tr
from .errors import CheckpointError, ConfigError, HypanomError

log = logging.getLogger("hypanom")

# every tunable the config file may set; flags mirror these names
CONFIG_KEYS = {
    "seed": int,
    "epochs": int,
    "lr": float,
    "batch_size": int,
    "patch_size": int,
    "levels": str,  # comma-separated level names
    "d_out": int,
    "curvature": str,  # "learnable" or a positive number
    "synthesis_mix": str,  # three comma-separated weights
    "max_steps": int,
    "val_every": int,
}


def _parse_config_file(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            if key not in CONFIG_KEYS:
                raise ConfigError(f"unknown config key '{key}' in [{section}] of {path}")
            out[key] = CONFIG_KEYS[key](value)
    return out


def _merged_options(args) -> dict:
    opts = {}
    if getattr(args, "config", None):
        opts.update(_parse_config_file(Path(args.config)))
    for key in CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            opts[key] = CONFIG_KEYS[key](flag)
    return opts


def _train_config(opts: dict) -> tr.TrainConfig:
    cfg = tr.TrainConfig()
    if "levels" in opts:
        cfg.levels = tuple(s.strip() for s in opts["levels"].split(",") if s.strip())
    if "curvature" in opts:
        raw = opts["curvature"]
        cfg.curvature = raw if raw == "learnable" else float(raw)
    if "synthesis_mix" in opts:
        parts = [float(s) for s in opts["synthesis_mix"].split(",")]
        if len(parts) != 3:
            raise ConfigError(f"synthesis_mix needs 3 weights, got {opts['synthesis_mix']!r}")
        cfg.synthesis_mix = tuple(parts)
    for key in ("seed", "epochs", "lr", "batch_size", "patch_size", "d_out", "max_steps", "val_every"):
        if key in opts:
            setattr(cfg, key, opts[key])
    cfg.validate()
    return cfg


def _require_path(value, kind: str) -> Path:
    p = Path(value)
    if not p.exists():
        raise ConfigError(f"{kind} does not exist: {p}")
    return p


def _add_common(sub):
    sub.add_argument("--config", help="INI config file; flags override its values")
    for key, typ in CONFIG_KEYS.items():
        sub.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, help=f"({typ.__name__})")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synthesize(args) -> int:
    opts = _merged_options(args)
    cfg = _train_config(opts)
    images_dir = _require_path(args.images, "image directory")
    paths = sorted(p for p in images_dir.iterdir() if p.suffix.lower() == ".png")
    if not paths:
        raise ConfigError(f"no PNG images found in {images_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    images = [pngio.read_image(p) for p in paths]
    results = sy.synthesize_batch(images, cfg.seed, cfg.synthesis_mix)
    for src, (img, mask, recipe) in zip(paths, results):
        stem = src.stem
        pngio.write_image(img, out_dir / f"{stem}__anom.png")
        pngio.write_mask(mask, out_dir / f"{stem}__mask.png")
        payload = {"kind": recipe.kind, "seed": recipe.seed, "params": recipe.params, "source": src.name}
        tr._atomic_text(out_dir / f"{stem}__recipe.json", json.dumps(payload, indent=2, sort_keys=True))
    log.info("synthesized %d images into %s", len(results), out_dir)
    print(f"synthesized {len(results)} images -> {out_dir}")
    return 0


def cmd_train(args) -> int:
    opts = _merged_options(args)
    cfg = _train_config(opts)
    manifest = ft.load_manifest(_require_path(args.manifest, "manifest"))
    resume = None
    if args.resume:
        resume = _require_path(args.resume, "checkpoint")
    out_dir = Path(args.out)
    result = tr.train(manifest, cfg, resume_from=resume)
    mdl.save_checkpoint(
        result.state,
        out_dir / "checkpoint",
        step=result.step,
        optimizer={name: {"m": m, "v": result.optimizer.v[name]} for name, m in result.optimizer.m.items()},
    )
    tr.write_train_log(out_dir / "train_log.jsonl", result.log)
    final_loss = result.log[-1]["loss"] if result.log else None
    log.info("trained %d steps, final loss %s", result.step, final_loss)
    print(f"trained {result.step} steps; checkpoint -> {out_dir / 'checkpoint'}")
    return 0


def _check_dims(state: mdl.ModelState, manifest: ft.Manifest, cfg: tr.TrainConfig) -> None:
    for split in ("test", "val", "train"):
        records = manifest.split(split)
        if records:
            feats, _, _ = ft.load_aligned(records[0], list(cfg.levels), cfg.patch_size)
            for lvl, arr in feats.items():
                want = state.projections[lvl].shape[1]
                if arr.shape[1] != want:
                    raise CheckpointError(
                        f"checkpoint expects {want} channels for level '{lvl}', manifest provides {arr.shape[1]}"
                    )
            return


def cmd_eval(args) -> int:
    opts = _merged_options(args)
    cfg = _train_config(opts)
    manifest = ft.load_manifest(_require_path(args.manifest, "manifest"))
    state, step, _ = mdl.load_checkpoint(_require_path(args.checkpoint, "checkpoint"))
    cfg.levels = tuple(state.levels)
    cfg.d_out = state.d_out
    _check_dims(state, manifest, cfg)
    records = manifest.split(args.split)
    if not records:
        raise ConfigError(f"manifest has no '{args.split}' split")
    result = tr.evaluate(state, records, cfg, seed=cfg.seed)
    report = tr.EvalReport(results=[result])
    out_dir = Path(args.out)
    tr.write_eval_csv(out_dir / "report.csv", report)
    tr._atomic_text(out_dir / "report.json", json.dumps(report.summary(), indent=2, sort_keys=True))
    print(
        f"step {step}: image AUROC = {result.image_auroc if result.image_auroc is not None else result.image_error}; "
        f"pixel AUROC = {result.pixel_auroc if result.pixel_auroc is not None else result.pixel_error}"
    )
    if result.undefined:
        log.error("undefined metric: image=%s pixel=%s", result.image_error, result.pixel_error)
        return 3
    return 0


def cmd_ablate(args) -> int:
    opts = _merged_options(args)
    cfg = _train_config(opts)
    manifest = ft.load_manifest(_require_path(args.manifest, "manifest"))
    values = [float(v) for v in args.values.split(",")]
    rows = tr.ablation_harness(args.axis, values, cfg, manifest)
    out_dir = Path(args.out)
    tr.write_csv(out_dir / "ablation.csv", tr.ABLATION_COLUMNS, rows)
    print(f"{len(rows)} ablation rows -> {out_dir / 'ablation.csv'}")
    return 0


def cmd_fewshot(args) -> int:
    opts = _merged_options(args)
    cfg = _train_config(opts)
    manifest = ft.load_manifest(_require_path(args.manifest, "manifest"))
    ks = [int(v) for v in args.ks.split(",")]
    seeds = [int(v) for v in args.seeds.split(",")]
    reports = tr.few_shot_harness(manifest, ks, seeds, cfg)
    out_dir = Path(args.out)
    tr.write_fewshot_csv(out_dir / "fewshot.csv", reports)
    payload = {str(k): rep.summary() for k, rep in reports.items()}
    tr._atomic_text(out_dir / "fewshot.json", json.dumps(payload, indent=2, sort_keys=True))
    print(f"few-shot table ({len(reports)} K values) -> {out_dir / 'fewshot.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    opts = _merged_options(args)
    seed = opts.get("seed", 0)
    worst, report = mdl.gradient_check(seed=seed)
    ok = True
    for name in sorted(report):
        entry = report[name]
        status = "ok" if entry["ok"] else "FAIL"
        print(f"gradcheck {name}: max relative error {entry['max_rel_error']:.3e} [{status}]")
        ok &= entry["ok"]
    print(f"gradcheck overall: {'PASS' if ok else 'FAIL'} (worst {worst:.3e})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hypanom",
        description="Hyperbolic anomaly detection engine: synthesize anomalies, train and "
        "evaluate the Lorentz-model classifier head, run ablation and few-shot studies.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    s = subs.add_parser("synthesize", help="generate anomalous images + masks from normal PNGs")
    s.add_argument("--images", required=True, help="directory of normal PNG images")
    s.add_argument("--out", required=True, help="output directory")
    _add_common(s)
    s.set_defaults(func=cmd_synthesize)

    s = subs.add_parser("train", help="train the hyperbolic head on a feature manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--resume", help="checkpoint directory to continue from")
    _add_common(s)
    s.set_defaults(func=cmd_train)

    s = subs.add_parser("eval", help="evaluate a checkpoint on a manifest split")
    s.add_argument("--manifest", required=True)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="test")
    _add_common(s)
    s.set_defaults(func=cmd_eval)

    s = subs.add_parser("ablate", help="sweep curvature, patch size, or dimensionality")
    s.add_argument("--axis", required=True, choices=tr.ABLATION_AXES)
    s.add_argument("--values", required=True, help="comma-separated axis values")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    _add_common(s)
    s.set_defaults(func=cmd_ablate)

    s = subs.add_parser("fewshot", help="few-shot protocol over K normal images x seeds")
    s.add_argument("--ks", required=True, help="comma-separated K values, e.g. 1,3,5,10,25")
    s.add_argument("--seeds", required=True, help="comma-separated seeds")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    _add_common(s)
    s.set_defaults(func=cmd_fewshot)

    s = subs.add_parser("gradcheck", help="finite-difference check of the full loss gradient")
    _add_common(s)
    s.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("HYPANOM_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HypanomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
