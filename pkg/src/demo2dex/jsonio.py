"""Canonical JSON serialization and content hashing.

Every artifact the pipeline persists goes through `canonical_dumps` so that a
rerun with identical inputs produces byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np


def _plain(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def canonical_dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), allow_nan=False)


def dump_json(obj, path) -> None:
    Path(path).write_text(canonical_dumps(obj) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def sha256_of(obj) -> str:
    return hashlib.sha256(canonical_dumps(obj).encode()).hexdigest()


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
