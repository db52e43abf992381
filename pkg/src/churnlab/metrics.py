"""Churn, surrogate churn, confidence, calibration and bound audits.

All functions take plain ``(n, k)`` float64 probability matrices and integer
label vectors. Logs are natural; every log first clamps probabilities to
``[EPS, 1]`` and renormalises the row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

EPS = 1e-7

__all__ = [
    "EPS",
    "ChurnReport",
    "BoundAudit",
    "SliceChurn",
    "as_prob_matrix",
    "clamp_probs",
    "predict_labels",
    "churn",
    "schurn",
    "confidence",
    "entropy",
    "skl_to_uniform",
    "slice_churn",
    "distances",
    "ece",
    "accuracy",
    "audit_bounds",
    "check_binary_monotonicity",
    "churn_report",
]


def as_prob_matrix(p, atol=1e-9):
    """Validate and return ``p`` as a float64 row-stochastic matrix."""
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] < 2:
        raise UsageError(f"probability matrix must be (n, k>=2), got shape {p.shape}")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise UsageError("probabilities must lie in [0, 1]")
    if p.shape[0] and np.max(np.abs(p.sum(axis=1) - 1.0)) > atol:
        raise UsageError("rows must sum to 1")
    return p


def _pair(p1, p2):
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    if p1.shape != p2.shape or p1.ndim != 2:
        raise UsageError(f"shape mismatch: {p1.shape} vs {p2.shape}")
    return p1, p2


def _labels_for(p, labels):
    labels = np.asarray(labels)
    if labels.shape != (p.shape[0],):
        raise UsageError(f"expected {p.shape[0]} labels, got shape {labels.shape}")
    return labels.astype(np.int64)


def clamp_probs(p, eps=EPS):
    """Clip to [eps, 1] and renormalise along the last axis."""
    q = np.clip(np.asarray(p, dtype=np.float64), eps, 1.0)
    return q / q.sum(axis=-1, keepdims=True)


def predict_labels(p):
    """Row argmax; np.argmax already returns the first (lowest) index on ties."""
    return np.argmax(np.asarray(p), axis=-1)


def churn(p1, p2):
    p1, p2 = _pair(p1, p2)
    if p1.shape[0] == 0:
        return 0.0
    return float(np.count_nonzero(predict_labels(p1) != predict_labels(p2)) / p1.shape[0])


def _max_normalised_power(p, alpha):
    top = p.max(axis=1, keepdims=True)
    if np.any(top <= 0):
        raise UsageError("rows need a positive maximum")
    return (p / top) ** alpha


def schurn(p1, p2, alpha=1.0):
    """Half the mean L1 distance between max-normalised rows raised to alpha."""
    if not alpha > 0:
        raise UsageError(f"alpha must be > 0, got {alpha}")
    p1, p2 = _pair(p1, p2)
    if p1.shape[0] == 0:
        return 0.0
    a = _max_normalised_power(p1, alpha)
    b = _max_normalised_power(p2, alpha)
    # |a-b| is symmetric bit for bit, so schurn(p1,p2) == schurn(p2,p1)
    return float(0.5 * np.abs(a - b).sum(axis=1).mean())


def confidence(p):
    """Top probability minus runner-up, per row."""
    p = np.asarray(p, dtype=np.float64)
    top2 = np.sort(p, axis=-1)[..., -2:]
    return top2[..., 1] - top2[..., 0]


def entropy(p):
    q = clamp_probs(p)
    return -(q * np.log(q)).sum(axis=-1)


def skl_to_uniform(p):
    q = clamp_probs(p)
    u = 1.0 / q.shape[-1]
    return ((q - u) * (np.log(q) - np.log(u))).sum(axis=-1)


def accuracy(p, labels):
    p = np.asarray(p)
    labels = _labels_for(p, labels)
    if labels.size == 0:
        return 0.0
    return float(np.count_nonzero(predict_labels(p) == labels) / labels.size)


@dataclass
class SliceChurn:
    churn_correct: float
    churn_incorrect: float
    n_correct: int
    n_incorrect: int

    @property
    def correct_empty(self):
        return self.n_correct == 0

    @property
    def incorrect_empty(self):
        return self.n_incorrect == 0

    def __iter__(self):
        yield self.churn_correct
        yield self.churn_incorrect


def slice_churn(p1, p2, labels):
    """Churn on the rows model 1 gets right, and on the rows it gets wrong.

    An empty slice reports 0.0; check ``correct_empty``/``incorrect_empty``.
    """
    p1, p2 = _pair(p1, p2)
    labels = _labels_for(p1, labels)
    y1 = predict_labels(p1)
    differ = y1 != predict_labels(p2)
    correct = y1 == labels
    n_c = int(np.count_nonzero(correct))
    n_i = int(labels.size - n_c)
    c = np.count_nonzero(differ & correct) / n_c if n_c else 0.0
    i = np.count_nonzero(differ & ~correct) / n_i if n_i else 0.0
    return SliceChurn(float(c), float(i), n_c, n_i)


def distances(row1, row2):
    """(L1, KL(row1||row2), symmetric KL) on clamped, renormalised rows."""
    a = np.asarray(row1, dtype=np.float64)
    b = np.asarray(row2, dtype=np.float64)
    if a.shape != b.shape:
        raise UsageError(f"shape mismatch: {a.shape} vs {b.shape}")
    a = clamp_probs(a)
    b = clamp_probs(b)
    la, lb = np.log(a), np.log(b)
    l1 = np.abs(a - b).sum(axis=-1)
    kl = (a * (la - lb)).sum(axis=-1)
    kl_rev = (b * (lb - la)).sum(axis=-1)
    # exact zero for identical rows; guard tiny negative rounding otherwise
    kl = np.maximum(kl, 0.0)
    skl = np.maximum(kl + kl_rev, 0.0)
    if np.ndim(l1) == 0:
        return float(l1), float(kl), float(skl)
    return l1, kl, skl


def ece(p, labels, n_bins=15):
    """Top-label expected calibration error with equal-width bins.

    Bins are (lo, hi] except the first, which also takes 0.
    """
    if n_bins < 1:
        raise UsageError("n_bins must be >= 1")
    p = np.asarray(p, dtype=np.float64)
    labels = _labels_for(p, labels)
    n = labels.size
    if n == 0:
        return 0.0
    conf = p.max(axis=1)
    hit = (predict_labels(p) == labels).astype(np.float64)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    bins = np.searchsorted(edges[1:-1], conf, side="left")
    total = 0.0
    for b in range(n_bins):
        mask = bins == b
        m = int(np.count_nonzero(mask))
        if m == 0:
            continue
        total += (m / n) * abs(hit[mask].mean() - conf[mask].mean())
    return float(total)


@dataclass
class BoundAudit:
    """Result of checking the churn bounds on one pair of prediction matrices.

    Each ``*_witness`` is the first violating row index (or None when the
    check passed). For the error bound there is no single row, so a failure
    points at the first disagreeing row.
    """

    error_bound_ok: bool
    error_bound_witness: int | None
    margin_ok: bool
    margin_witness: int | None
    pinsker_ok: bool
    pinsker_witness: int | None
    error_bound_slack: float
    margin_slack: np.ndarray = field(repr=False)
    pinsker_slack: np.ndarray = field(repr=False)

    @property
    def ok(self):
        return self.error_bound_ok and self.margin_ok and self.pinsker_ok

    def summary(self):
        def line(name, ok, witness):
            return f"{name:<28} {'ok' if ok else 'VIOLATED'}" + ("" if ok else f" (row {witness})")

        return "\n".join(
            [
                line("churn <= err1 + err2", self.error_bound_ok, self.error_bound_witness),
                line("disagree => L1 > min conf", self.margin_ok, self.margin_witness),
                line("pinsker L1 <= sqrt(2 KL)", self.pinsker_ok, self.pinsker_witness),
            ]
        )


def _first(mask):
    idx = np.flatnonzero(mask)
    return int(idx[0]) if idx.size else None


def audit_bounds(p1, p2, labels, pinsker_tol=1e-9):
    p1, p2 = _pair(p1, p2)
    labels = _labels_for(p1, labels)
    n = labels.size
    y1, y2 = predict_labels(p1), predict_labels(p2)
    differ = y1 != y2

    # integer counts: no rounding in the comparison itself
    n_churn = int(np.count_nonzero(differ))
    n_err = int(np.count_nonzero(y1 != labels)) + int(np.count_nonzero(y2 != labels))
    error_bound_ok = n_churn <= n_err
    error_bound_slack = (n_err - n_churn) / n if n else 0.0

    l1_raw = np.abs(p1 - p2).sum(axis=1)
    gamma_min = np.minimum(confidence(p1), confidence(p2))
    margin_slack = l1_raw - gamma_min
    margin_bad = differ & ~(l1_raw > gamma_min)

    l1, kl, _ = distances(p1, p2)
    pinsker_slack = np.sqrt(2.0 * kl) - l1
    pinsker_bad = pinsker_slack < -pinsker_tol

    return BoundAudit(
        error_bound_ok=error_bound_ok,
        error_bound_witness=None if error_bound_ok else _first(differ),
        margin_ok=not margin_bad.any(),
        margin_witness=_first(margin_bad),
        pinsker_ok=not pinsker_bad.any(),
        pinsker_witness=_first(pinsker_bad),
        error_bound_slack=float(error_bound_slack),
        margin_slack=margin_slack,
        pinsker_slack=pinsker_slack,
    )


def _binary_entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return -(p * np.log(p) + (1.0 - p) * np.log1p(-p))


def _binary_skl_uniform(p):
    p = np.asarray(p, dtype=np.float64)
    return (p - 0.5) * (np.log(p) - np.log(0.5)) + (0.5 - p) * (np.log1p(-p) - np.log(0.5))


def check_binary_monotonicity(pairs, tol=1e-12):
    """Binary case: lower entropy / larger SKL-to-uniform must mean higher confidence.

    ``pairs`` is a sequence of (p, p') with each value the probability of
    class 1. Returns ``(ok, witness)`` where witness is the first offending
    index. ``tol`` absorbs last-bit rounding at mirror-image pairs such as
    (0.3, 0.7), where both sides are mathematically equal.
    """
    arr = np.asarray(pairs, dtype=np.float64).reshape(-1, 2)
    if np.any(arr <= 0) or np.any(arr >= 1):
        raise UsageError("binary probabilities must lie in (0, 1)")
    p, q = arr[:, 0], arr[:, 1]
    gp, gq = np.abs(2 * p - 1), np.abs(2 * q - 1)
    hp, hq = _binary_entropy(p), _binary_entropy(q)
    sp, sq = _binary_skl_uniform(p), _binary_skl_uniform(q)
    bad = ((hp <= hq) & (gp < gq - tol)) | ((sp >= sq) & (gp < gq - tol))
    witness = _first(bad)
    return witness is None, witness


@dataclass
class ChurnReport:
    churn: float
    schurn: dict
    churn_correct: float
    churn_incorrect: float
    correct_empty: bool
    incorrect_empty: bool
    mean_confidence: tuple
    mean_entropy: tuple
    ece: tuple
    accuracy: tuple

    def to_dict(self):
        d = dict(self.__dict__)
        d["schurn"] = {repr(float(a)): v for a, v in self.schurn.items()}
        for key in ("mean_confidence", "mean_entropy", "ece", "accuracy"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["schurn"] = {float(a): v for a, v in d["schurn"].items()}
        for key in ("mean_confidence", "mean_entropy", "ece", "accuracy"):
            d[key] = tuple(d[key])
        return cls(**d)


def churn_report(p1, p2, labels, alphas=(1.0,), n_bins=15):
    """Everything reported for one model pair; rechecks the error bound."""
    p1, p2 = _pair(p1, p2)
    labels = _labels_for(p1, labels)
    c = churn(p1, p2)
    s = slice_churn(p1, p2, labels)
    acc = (accuracy(p1, labels), accuracy(p2, labels))
    n = labels.size
    if n and np.count_nonzero(predict_labels(p1) != predict_labels(p2)) > (
        np.count_nonzero(predict_labels(p1) != labels) + np.count_nonzero(predict_labels(p2) != labels)
    ):
        raise AssertionError("churn exceeds the summed error rates")
    return ChurnReport(
        churn=c,
        schurn={float(a): schurn(p1, p2, a) for a in alphas},
        churn_correct=s.churn_correct,
        churn_incorrect=s.churn_incorrect,
        correct_empty=s.correct_empty,
        incorrect_empty=s.incorrect_empty,
        mean_confidence=(float(confidence(p1).mean()), float(confidence(p2).mean())),
        mean_entropy=(float(entropy(p1).mean()), float(entropy(p2).mean())),
        ece=(ece(p1, labels, n_bins), ece(p2, labels, n_bins)),
        accuracy=acc,
    )
