"""Feature ingestion: FTNS tensor files, patch pooling, upsampling, labels.

The pipeline consumes per-image multi-level feature maps produced out of
process (see the extraction sidecar), aggregates p x p neighborhoods by
average pooling at stride 1, upsamples every level to the highest spatial
resolution among them, and aligns full-resolution anomaly masks to that
feature resolution by majority vote.

FTNS file layout (little-endian):

    magic   4 bytes  b"FTNS"
    version u32      currently 1
    dtype   u8       1 = f32, 2 = f64, 3 = u8
    ndim    u8
    dims    ndim * u64
    payload row-major array data

The reader validates the header against the actual file size before touching
the payload, so a corrupt header cannot trigger a huge allocation.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, ManifestError, ParameterError, TensorFormatError

FTNS_MAGIC = b"FTNS"
FTNS_VERSION = 1

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("u1")}
_CODES_BY_KIND = {("f", 4): 1, ("f", 8): 2, ("u", 1): 3}


# ---------------------------------------------------------------------------
# FTNS read / write
# ---------------------------------------------------------------------------


def write_tensor(tensor: np.ndarray, path) -> None:
    tensor = np.asarray(tensor)
    if tensor.ndim > 0 and not tensor.flags["C_CONTIGUOUS"]:
        tensor = np.ascontiguousarray(tensor)  # keep 0-d as 0-d; this call would promote it
    code = _CODES_BY_KIND.get((tensor.dtype.kind, tensor.dtype.itemsize))
    if code is None:
        raise TensorFormatError(f"unsupported dtype {tensor.dtype}; use f32, f64 or u8")
    header = bytearray()
    header += FTNS_MAGIC
    header += struct.pack("<I", FTNS_VERSION)
    header += struct.pack("<BB", code, tensor.ndim)
    for d in tensor.shape:
        header += struct.pack("<Q", d)
    payload = tensor.astype(tensor.dtype.newbyteorder("<"), copy=False).tobytes()
    _atomic_write_bytes(Path(path), bytes(header) + payload)


def read_tensor(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 10 or raw[:4] != FTNS_MAGIC:
        raise TensorFormatError(f"{path}: bad magic, not an FTNS file")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FTNS_VERSION:
        raise TensorFormatError(f"{path}: unsupported FTNS version {version}")
    code, ndim = struct.unpack_from("<BB", raw, 8)
    dtype = _DTYPE_CODES.get(code)
    if dtype is None:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    offset = 10
    if len(raw) < offset + 8 * ndim:
        raise TensorFormatError(f"{path}: truncated header")
    dims = struct.unpack_from(f"<{ndim}Q", raw, offset)
    offset += 8 * ndim
    count = 1
    for d in dims:
        count *= int(d)
    expected = count * dtype.itemsize
    # size check BEFORE any allocation: a forged huge header must fail cheaply
    if len(raw) - offset != expected:
        raise TensorFormatError(
            f"{path}: payload size mismatch (header wants {expected} bytes, file has {len(raw) - offset})"
        )
    arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return arr.reshape(dims).copy()


def _atomic_write_bytes(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# patch pooling / upsampling / mask alignment
# ---------------------------------------------------------------------------


def patchify(level: np.ndarray, patch: int) -> np.ndarray:
    """Mean over the p x p neighborhood of each position, stride 1, same size.

    Edge handling replicates border rows/columns. Even p is allowed: the
    window spans (p-1)//2 before and p//2 after each position. p = 1 is the
    identity.
    """
    if level.ndim != 3:
        raise DimensionError(f"expected [H][W][C], got shape {level.shape}")
    h, w, _ = level.shape
    if patch < 1:
        raise ParameterError(f"patch size must be >= 1, got {patch}")
    if patch > min(h, w):
        raise ParameterError(f"patch {patch} exceeds spatial extent {min(h, w)}")
    if patch == 1:
        return level.astype(np.float64, copy=True)
    lo, hi = (patch - 1) // 2, patch // 2
    padded = np.pad(level.astype(np.float64), ((lo, hi), (lo, hi), (0, 0)), mode="edge")
    acc = np.zeros((h, w, level.shape[2]), dtype=np.float64)
    for dy in range(patch):
        for dx in range(patch):
            acc += padded[dy : dy + h, dx : dx + w]
    return acc / float(patch * patch)


def _lerp_axis_weights(src: int, dst: int):
    """align-corners-false bilinear sample positions for one axis."""
    pos = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    lo_cl = np.clip(lo, 0, src - 1)
    hi_cl = np.clip(lo + 1, 0, src - 1)
    return lo_cl, hi_cl, frac


def upsample_bilinear(level: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear (align-corners-false) upsampling of [h][w][C] to target (H, W).

    Downscaling is rejected; equal size returns a copy. The interpolation is
    written in lerp form a + t*(b-a), so constant fields pass through exactly.
    """
    if level.ndim != 3:
        raise DimensionError(f"expected [h][w][C], got shape {level.shape}")
    h, w, _ = level.shape
    ht, wt = target
    if ht < h or wt < w:
        raise ParameterError(f"target {target} would downscale {level.shape[:2]}")
    out = level.astype(np.float64, copy=True)
    if ht == h and wt == w:
        return out
    lo, hi, t = _lerp_axis_weights(h, ht)
    a, b = out[lo, :, :], out[hi, :, :]
    out = a + t[:, None, None] * (b - a)
    lo, hi, t = _lerp_axis_weights(w, wt)
    a, b = out[:, lo, :], out[:, hi, :]
    return a + t[None, :, None] * (b - a)


def _axis_overlap(src: int, dst: int) -> np.ndarray:
    """[dst, src] matrix of interval-overlap lengths for box footprints."""
    weights = np.zeros((dst, src), dtype=np.float64)
    step = src / dst
    for i in range(dst):
        lo, hi = i * step, (i + 1) * step
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, src)):
            weights[i, j] = min(hi, j + 1) - max(lo, j)
    return weights


def align_mask(mask: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Majority-rule downsampling of a {0,1} mask to feature resolution.

    A target cell is 1 iff at least half of its (area-weighted) source
    footprint is anomalous. Requires target <= source per axis.
    """
    if mask.ndim != 2:
        raise DimensionError(f"expected [H][W] mask, got shape {mask.shape}")
    h, w = mask.shape
    ht, wt = target
    if ht > h or wt > w:
        raise ParameterError(f"mask alignment cannot upscale {mask.shape} to {target}")
    m = (np.asarray(mask) > 0).astype(np.float64)
    ry = _axis_overlap(h, ht)
    cx = _axis_overlap(w, wt)
    area = ry @ m @ cx.T
    footprint = (h / ht) * (w / wt)
    frac = area / footprint
    return (frac >= 0.5).astype(np.uint8)


# ---------------------------------------------------------------------------
# dataset manifest
# ---------------------------------------------------------------------------


@dataclass
class Record:
    """One dataset entry: per-level feature files plus optional mask and label."""

    features: dict[str, Path]
    label: int = 0
    image: Path | None = None
    mask: Path | None = None
    source: str | None = None
    record_id: str = ""

    def identity(self) -> str:
        if self.record_id:
            return self.record_id
        if self.image is not None:
            return Path(self.image).stem
        return next(iter(sorted(self.features.values()))).stem


@dataclass
class Manifest:
    splits: dict[str, list[Record]] = field(default_factory=dict)
    root: Path = Path(".")

    def split(self, name: str) -> list[Record]:
        return self.splits.get(name, [])


def load_manifest(path) -> Manifest:
    """Read and validate a manifest; all referenced files must exist.

    Schema: {"splits": {name: [{"features": {level: path}, "label": 0|1,
    "image": path?, "mask": path?, "source": str?, "id": str?}, ...]}}.
    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        payload = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(payload, dict) or "splits" not in payload:
        raise ManifestError(f"{path}: expected a top-level 'splits' object")
    root = path.parent
    manifest = Manifest(root=root)
    for split_name, entries in payload["splits"].items():
        records = []
        for k, entry in enumerate(entries):
            if "features" not in entry or not entry["features"]:
                raise ManifestError(f"{path}: record {k} in '{split_name}' has no features")
            feats = {}
            for level, rel in entry["features"].items():
                fp = root / rel
                if not fp.exists():
                    raise ManifestError(f"{path}: missing feature file {fp}")
                feats[level] = fp
            mask = None
            if entry.get("mask"):
                mask = root / entry["mask"]
                if not mask.exists():
                    raise ManifestError(f"{path}: missing mask file {mask}")
            image = root / entry["image"] if entry.get("image") else None
            records.append(
                Record(
                    features=feats,
                    label=int(entry.get("label", 0)),
                    image=image,
                    mask=mask,
                    source=entry.get("source"),
                    record_id=str(entry.get("id", "")),
                )
            )
        manifest.splits[split_name] = records
    return manifest


def write_manifest(manifest_path, splits: dict[str, list[dict]]) -> None:
    """Write a manifest dict (paths already relative to the manifest dir)."""
    payload = json.dumps({"splits": splits}, indent=2, sort_keys=True)
    _atomic_write_bytes(Path(manifest_path), payload.encode())


# ---------------------------------------------------------------------------
# per-record pixel pipeline
# ---------------------------------------------------------------------------


def load_aligned(record: Record, levels: list[str], patch: int):
    """Load one record's levels, patchify, upsample to the shared resolution.

    Returns (features, labels, shape): features maps level -> [N, C_l] float64
    pixel rows, labels is an int array [N] from the aligned mask (None when
    the record has no mask), shape is the shared (H*, W*).
    """
    from .pngio import read_mask  # local import; pngio pulls in PIL

    maps = {}
    for level in levels:
        if level not in record.features:
            raise ManifestError(f"record {record.identity()} lacks level '{level}'")
        arr = read_tensor(record.features[level])
        if arr.ndim != 3:
            raise DimensionError(f"{record.features[level]}: expected [H][W][C], got {arr.shape}")
        maps[level] = patchify(arr.astype(np.float64), patch)
    hstar = max(m.shape[0] for m in maps.values())
    wstar = max(m.shape[1] for m in maps.values())
    feats = {}
    for level, m in maps.items():
        up = upsample_bilinear(m, (hstar, wstar))
        feats[level] = up.reshape(-1, up.shape[2])
    labels = None
    if record.mask is not None:
        mask = read_mask(record.mask)
        labels = align_mask(mask, (hstar, wstar)).reshape(-1).astype(np.int64)
    return feats, labels, (hstar, wstar)
