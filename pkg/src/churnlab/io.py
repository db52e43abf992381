"""Serialization: probability matrices, digests and atomic file writes.

Floats are always written with ``repr`` (shortest round-trip text), so a
write/read cycle reproduces every float64 bit for bit.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError

__all__ = [
    "fnv1a64",
    "digest_array",
    "digest_json",
    "canonical_json",
    "atomic_write_text",
    "write_probs_csv",
    "read_probs_csv",
    "write_probs_jsonl",
    "read_probs_jsonl",
    "read_labels_csv",
]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & _MASK64
    return h


def digest_array(*arrays) -> str:
    """Hex FNV-1a over shape headers plus little-endian array bytes."""
    buf = bytearray()
    for a in arrays:
        a = np.asarray(a)
        kind = "<f8" if a.dtype.kind == "f" else "<i8"
        buf += repr(a.shape).encode()
        buf += np.ascontiguousarray(a, dtype=kind).tobytes()
    return f"{fnv1a64(bytes(buf)):016x}"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def digest_json(obj) -> str:
    return f"{fnv1a64(canonical_json(obj).encode()):016x}"


def atomic_write_text(path, text):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _probs_csv_text(probs, labels):
    probs = np.asarray(probs, dtype=np.float64)
    if labels is None:
        labels = np.full(probs.shape[0], -1)
    lines = ["label," + ",".join(f"p{j}" for j in range(probs.shape[1]))]
    for y, row in zip(np.asarray(labels).tolist(), probs.tolist()):
        lines.append(f"{int(y)}," + ",".join(repr(v) for v in row))
    return "\n".join(lines) + "\n"


def write_probs_csv(path, probs, labels=None):
    """CSV with header ``label,p0,...``; a missing label is written as -1."""
    atomic_write_text(path, _probs_csv_text(probs, labels))


def read_probs_csv(path):
    """Returns ``(probs, labels)``; labels is None when every label is -1."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label" or len(header) < 3:
            raise SchemaError(f"{path}: header must be label,p0,p1,...", line=1)
        width = len(header)
        labels, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise SchemaError(f"{path}: expected {width} columns, found {len(rec)}", line=lineno)
            try:
                labels.append(int(rec[0]))
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
    probs = np.array(rows, dtype=np.float64).reshape(len(rows), width - 1)
    y = np.array(labels, dtype=np.int64)
    return probs, (None if y.size and np.all(y == -1) else y)


def write_probs_jsonl(path, probs, labels=None):
    """One ``{"label": y, "p": [...]}`` object per line."""
    probs = np.asarray(probs, dtype=np.float64)
    if labels is None:
        labels = np.full(probs.shape[0], -1)
    lines = [json.dumps({"label": int(y), "p": row}) for y, row in zip(np.asarray(labels).tolist(), probs.tolist())]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_probs_jsonl(path):
    labels, rows = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                labels.append(int(rec["label"]))
                rows.append([float(v) for v in rec["p"]])
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
    if rows and len({len(r) for r in rows}) != 1:
        raise SchemaError(f"{path}: rows have differing lengths")
    probs = np.array(rows, dtype=np.float64)
    y = np.array(labels, dtype=np.int64)
    return probs, (None if y.size and np.all(y == -1) else y)


def read_labels_csv(path):
    """Labels from a CSV whose first column is ``label`` (other columns ignored)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "label":
            raise SchemaError(f"{path}: first column must be 'label'", line=1)
        out = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            try:
                out.append(int(rec[0]))
            except ValueError:
                raise ParseError(f"{path}: bad label {rec[0]!r}", line=lineno) from None
    return np.array(out, dtype=np.int64)
