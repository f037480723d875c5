"""Deterministic writers for reports (JSON), point clouds (CSV) and trees (JSON lines).

Every file starts with a header naming the library version and the hash
of the run configuration.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__


def _plain(x):
    """Convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def header(config_digest: str, kind: str) -> dict:
    return {"library": "kleincantor", "version": __version__, "config_hash": config_digest,
            "kind": kind}


def write_json(path: Path, payload: dict, config_digest: str, kind: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"header": header(config_digest, kind), **_plain(payload)}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path


def write_csv(path: Path, rows: list[dict], config_digest: str, kind: str) -> Path:
    """CSV with a leading ``#`` comment line carrying the header fields."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    h = header(config_digest, kind)
    with path.open("w", newline="") as fh:
        fh.write("# " + " ".join(f"{k}={v}" for k, v in h.items()) + "\n")
        if rows:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
            w.writeheader()
            for r in rows:
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in _plain(r).items()})
    return path


def read_csv(path: Path) -> tuple[str, list[dict]]:
    with Path(path).open() as fh:
        first = fh.readline()
        return first, list(csv.DictReader(fh))


def write_jsonl(path: Path, records: Iterable[dict], config_digest: str, kind: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(canonical_json({"header": header(config_digest, kind)}) + "\n")
        for r in records:
            fh.write(canonical_json(r) + "\n")
    return path
