"""Datasets and the seeded randomness channels used for training.

Every random draw comes from a Philox generator whose key is derived from a
tuple such as ``(order_seed, "order", epoch)``. Nothing is sequential: the
permutation for epoch 7 is computed directly, never by replaying epochs 0-6,
and the three channels (init, order, augment) can be frozen independently.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, SchemaError, UsageError

__all__ = [
    "Dataset",
    "SeedBundle",
    "keyed_generator",
    "gen_blobs",
    "load_csv",
    "save_csv",
    "epoch_order",
    "augment",
    "stride_split",
]

_MASK64 = (1 << 64) - 1
# every DATASET_ROW_STRIDE-th row (offset stride - 1) is held out for evaluation
DATASET_ROW_STRIDE = 5


def _word(part):
    if isinstance(part, str):
        # crc32 is stable across interpreters, unlike hash()
        return zlib.crc32(part.encode())
    return int(part) & _MASK64


def keyed_generator(*key):
    """numpy Generator on a Philox stream keyed by ``key`` (ints or strings)."""
    words = [_word(k) for k in key]
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=state))


@dataclass(frozen=True)
class SeedBundle:
    """One seed per randomness channel."""

    init_seed: int = 0
    order_seed: int = 0
    augment_seed: int = 0

    def to_dict(self):
        return {"init_seed": self.init_seed, "order_seed": self.order_seed, "augment_seed": self.augment_seed}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["init_seed"]), int(d["order_seed"]), int(d["augment_seed"]))


@dataclass
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_eval: np.ndarray
    y_eval: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.x_train = np.asarray(self.x_train, dtype=np.float64)
        self.x_eval = np.asarray(self.x_eval, dtype=np.float64)
        self.y_train = np.asarray(self.y_train, dtype=np.int64)
        self.y_eval = np.asarray(self.y_eval, dtype=np.int64)
        for name in ("x_train", "x_eval"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise UsageError(f"{name} contains non-finite values")
        for y in (self.y_train, self.y_eval):
            if y.size and (y.min() < 0 or y.max() >= self.n_classes):
                raise UsageError(f"labels must lie in [0, {self.n_classes})")

    @property
    def n_features(self):
        return self.x_train.shape[1]


def stride_split(x, y, n_classes, stride=DATASET_ROW_STRIDE):
    """80/20 split: every ``stride``-th row (offset stride-1) goes to eval."""
    idx = np.arange(len(y))
    is_eval = idx % stride == stride - 1
    return Dataset(x[~is_eval], y[~is_eval], x[is_eval], y[is_eval], n_classes)


def gen_blobs(n_per_class, k, d, spread, seed):
    """Isotropic Gaussian clusters with means on the radius-3 sphere.

    Rows are interleaved by class (row i has label i % k) so that the stride
    split keeps every class in both halves.
    """
    if k < 2 or d < 1 or n_per_class < 1 or not spread > 0:
        raise UsageError(f"invalid blob parameters n_per_class={n_per_class}, k={k}, d={d}, spread={spread}")
    means_rng = keyed_generator(seed, "blob-means")
    means = means_rng.standard_normal((k, d))
    norms = np.linalg.norm(means, axis=1, keepdims=True)
    means = 3.0 * means / np.where(norms > 0, norms, 1.0)
    n = n_per_class * k
    labels = np.arange(n) % k
    noise = keyed_generator(seed, "blob-noise").standard_normal((n, d))
    x = means[labels] + spread * noise
    return stride_split(x, labels, k)


def save_csv(path, x, y):
    """Write ``label,f0,...`` with shortest round-trip float text."""
    x = np.asarray(x, dtype=np.float64)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{j}" for j in range(x.shape[1])])
        for label, row in zip(np.asarray(y), x):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path, n_classes=None, split=True):
    """Read a ``label,f0,...,f{D-1}`` file in file order.

    With ``split`` the rows go through the same stride split as generated
    data; otherwise everything lands in the train half and eval is empty.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", line=1) from None
        if not header or header[0].strip() != "label" or len(header) < 2:
            raise SchemaError(f"{path}: header must be label,f0,...", line=1)
        width = len(header)
        labels, rows = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise SchemaError(f"{path}: expected {width} columns, found {len(rec)}", line=lineno)
            try:
                label = int(rec[0])
            except ValueError:
                raise ParseError(f"{path}: bad label {rec[0]!r}", line=lineno) from None
            try:
                feats = [float(v) for v in rec[1:]]
            except ValueError as exc:
                raise ParseError(f"{path}: {exc}", line=lineno) from None
            if not all(np.isfinite(feats)):
                raise ParseError(f"{path}: non-finite feature", line=lineno)
            labels.append(label)
            rows.append(feats)
    x = np.array(rows, dtype=np.float64).reshape(len(rows), width - 1)
    y = np.array(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = max(2, int(y.max()) + 1 if y.size else 2)
    if split:
        return stride_split(x, y, n_classes)
    return Dataset(x, y, np.zeros((0, width - 1)), np.zeros(0, dtype=np.int64), n_classes)


def epoch_order(order_seed, epoch, n):
    """Permutation of range(n) for one epoch (Fisher-Yates, keyed draws)."""
    if n < 1:
        raise UsageError("n must be >= 1")
    rng = keyed_generator(order_seed, "order", epoch)
    perm = np.arange(n)
    if n == 1:
        return perm
    # j_i uniform on [0, i] for i = n-1, ..., 1
    picks = rng.integers(0, np.arange(n, 1, -1))
    for i, j in zip(range(n - 1, 0, -1), picks.tolist()):
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def augment(batch, augment_seed, epoch, batch_index, sigma):
    """Add N(0, sigma^2) feature noise keyed by (seed, epoch, batch index)."""
    if sigma < 0:
        raise UsageError("sigma must be >= 0")
    if sigma == 0:
        return batch
    batch = np.asarray(batch, dtype=np.float64)
    rng = keyed_generator(augment_seed, "augment", epoch, batch_index)
    return batch + sigma * rng.standard_normal(batch.shape)
