"""Readers and writers for the engine's on-disk formats.

Every file is written to a temporary sibling and renamed into place. Dump
manifests are written last so a reader never sees checksums for files that
are not there yet.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

FORMAT_VERSION = 1
BUNDLE_VERSION = 1
DTYPE = "f32le"
DIRECTIONS = ("learned", "random", "orthogonal")
BASELINE = "baseline"
BASELINE_COLUMNS = ("record_id", "p_true", "nll", "token_entropy")
# f32 storage of unit vectors
UNIT_TOL = 1e-4


class ValidationError(ValueError):
    pass


@dataclass
class DumpRecord:
    record_id: int
    group_id: int
    label: int
    paraphrase_id: int
    dataset_tag: str
    answer_length: int
    text: Optional[str] = None

    def to_json(self) -> str:
        d = asdict(self)
        if d["text"] is None:
            del d["text"]
        return json.dumps(d, ensure_ascii=False)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def f32le(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def write_dump(
    out: Path,
    records: Sequence[DumpRecord],
    layers: Mapping[int, np.ndarray],
    *,
    model_tag: str,
    num_layers: int,
    contrastive: bool = False,
) -> dict:
    """Writes `manifest.json`, `meta.jsonl` and `layer_<k>.f32` into `out`.

    `layers` maps a layer index to an (n_records, hidden_dim) array in record
    order. Returns the manifest.
    """
    if not records:
        raise ValidationError("no records")
    if not layers:
        raise ValidationError("no layers")
    ids = [r.record_id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate record_id")
    for r in records:
        if r.label not in (0, 1):
            raise ValidationError(f"record {r.record_id}: label must be 0 or 1, got {r.label!r}")
    indices = sorted(layers)
    if any(k < 0 or k >= num_layers for k in indices):
        raise ValidationError(f"layer indices {indices} outside 0..{num_layers}")
    dims = {np.shape(layers[k])[1] for k in indices}
    if len(dims) != 1:
        raise ValidationError(f"layers disagree on hidden_dim: {sorted(dims)}")
    (hidden_dim,) = dims
    if hidden_dim == 0:
        raise ValidationError("hidden_dim must be positive")

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    sha = {}
    meta = "".join(r.to_json() + "\n" for r in records).encode()
    atomic_write(out / "meta.jsonl", meta)
    sha["meta.jsonl"] = sha256_hex(meta)
    for k in indices:
        a = np.asarray(layers[k], dtype=np.float32)
        if a.shape != (len(records), hidden_dim):
            raise ValidationError(f"layer {k}: shape {a.shape}, expected {(len(records), hidden_dim)}")
        if not np.isfinite(a).all():
            raise ValidationError(f"layer {k}: non-finite activations")
        name = f"layer_{k}.f32"
        data = f32le(a)
        atomic_write(out / name, data)
        sha[name] = sha256_hex(data)

    manifest = {
        "format_version": FORMAT_VERSION,
        "model_tag": model_tag,
        "num_records": len(records),
        "hidden_dim": int(hidden_dim),
        "num_layers": int(num_layers),
        "layer_indices": indices,
        "dtype": DTYPE,
        "contrastive": bool(contrastive),
        "sha256": dict(sorted(sha.items())),
    }
    atomic_write(out / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())
    return manifest


@dataclass
class Bundle:
    layer_index: int
    hidden_dim: int
    scale: float
    mean_activation_norm: float
    alpha_values: list
    seed: int
    directions: dict = field(default_factory=dict)


def read_bundle(path: Path) -> Bundle:
    """Reads `bundle.json` (or the directory holding it) and its vectors."""
    path = Path(path)
    if path.is_dir():
        path = path / "bundle.json"
    try:
        m = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ValidationError(f"{path}: {e}") from e
    if m.get("format_version") != BUNDLE_VERSION:
        raise ValidationError(f"unsupported bundle format_version {m.get('format_version')!r}")
    d = int(m["hidden_dim"])
    b = Bundle(
        layer_index=int(m["layer_index"]),
        hidden_dim=d,
        scale=float(m["scale"]),
        mean_activation_norm=float(m["mean_activation_norm"]),
        alpha_values=[float(a) for a in m["alpha_values"]],
        seed=int(m["seed"]),
    )
    sums = m.get("sha256", {})
    for name in DIRECTIONS:
        file = m[name]
        data = (path.parent / file).read_bytes()
        if file in sums and sums[file].lower() != sha256_hex(data):
            raise ValidationError(f"{file}: checksum mismatch")
        if len(data) != 4 * d:
            raise ValidationError(f"{file}: {len(data)} bytes for hidden_dim {d}")
        v = np.frombuffer(data, dtype="<f4").astype(np.float64)
        if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
            raise ValidationError(f"{file}: not unit norm")
        b.directions[name] = v
    if abs(b.directions["orthogonal"] @ b.directions["learned"]) > UNIT_TOL:
        raise ValidationError("orthogonal control is not orthogonal to learned")
    return b


def read_jsonl(path: Path) -> list:
    rows = []
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append(json.loads(line))
        except json.JSONDecodeError as e:
            raise ValidationError(f"{path} line {i}: {e}") from e
    return rows


def write_jsonl(path: Path, rows: Iterable[dict]) -> None:
    atomic_write(Path(path), "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows).encode())


def outcome_rows(judged: Iterable[dict], bundle: Bundle, items: Sequence[int]) -> list:
    """Checks judged bits cover every (direction, alpha, item) exactly once.

    Extra keys are dropped. Baseline rows (alpha 0, no steering) are kept
    when present.
    """
    want = {(d, a, i) for d in DIRECTIONS for a in bundle.alpha_values for i in items}
    seen = {}
    for r in judged:
        try:
            key = (str(r["direction"]), float(r["alpha"]), int(r["item"]))
            c = r["correct"]
        except (KeyError, TypeError, ValueError) as e:
            raise ValidationError(f"judged row {r!r}: {e}") from e
        if isinstance(c, bool):
            c = int(c)
        if c not in (0, 1):
            raise ValidationError(f"judged row {r!r}: correct must be 0 or 1")
        if key not in want and not (key[0] == BASELINE and key[2] in items):
            raise ValidationError(f"judged row {r!r} is not part of the sweep")
        if key in seen:
            raise ValidationError(f"duplicate judged row {key}")
        seen[key] = c
    missing = want - seen.keys()
    if missing:
        raise ValidationError(f"{len(missing)} sweep cells have no judgement, e.g. {min(missing)}")
    order = {d: n for n, d in enumerate(DIRECTIONS + (BASELINE,))}
    return [
        {"item": i, "direction": d, "alpha": a, "correct": c}
        for (d, a, i), c in sorted(seen.items(), key=lambda kv: (order[kv[0][0]], kv[0][1], kv[0][2]))
    ]


def write_outcome(path: Path, rows: Sequence[dict]) -> None:
    write_jsonl(path, rows)


def write_baselines(path: Path, rows: Iterable[Mapping]) -> None:
    """CSV with header `record_id,p_true,nll,token_entropy`."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BASELINE_COLUMNS)
    for r in rows:
        vals = [r[c] for c in BASELINE_COLUMNS]
        if not all(math.isfinite(v) for v in vals[1:]):
            raise ValidationError(f"record {vals[0]}: non-finite baseline {vals[1:]}")
        w.writerow([int(vals[0])] + [repr(float(v)) for v in vals[1:]])
    atomic_write(Path(path), buf.getvalue().encode())
