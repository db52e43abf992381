"""Differentiable training objectives built on :mod:`churnlab.tensor`.

Every builder takes probability Vars (outputs of ``build_forward``) and
returns a scalar Var on the same tape. Logs always see probabilities clipped
to ``[EPS, 1]`` and renormalised, matching :mod:`churnlab.metrics`.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .errors import UsageError
from .metrics import EPS

__all__ = [
    "METHOD_KINDS",
    "MethodSpec",
    "RampSchedule",
    "coefficient_at",
    "ce_loss",
    "entropy_regularized_loss",
    "skl_regularized_loss",
    "codistill_loss",
    "combined_loss",
    "distill_loss",
    "landscape_scan",
    "write_landscape_csv",
]

METHOD_KINDS = (
    "baseline",
    "entropy",
    "skl",
    "codistill_l1",
    "codistill_skl",
    "codistill_ce_independent",
    "combined",
    "ensemble_distill",
)
CODISTILL_KINDS = ("codistill_l1", "codistill_skl", "codistill_ce_independent", "combined")


@dataclass
class MethodSpec:
    """Training objective and its coefficients.

    ``ramp_c`` of None means "saturate after 10% of training"; the harness
    fills it in once the step budget is known. ``reg_kind`` picks the
    regulariser used by ``combined`` ("entropy" or "skl").
    """

    kind: str = "baseline"
    alpha: float = 0.0
    beta: float = 0.0
    ramp_c: float | None = None
    ramp_style: str = "linear"
    ramp_t0: int = 0
    alpha_ramp: bool = True
    top_k: int | None = None
    temperature: float = 1.0
    n_teachers: int = 2
    stale_T: int = 1
    reg_kind: str = "entropy"

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise UsageError(f"method.kind: unknown method {self.kind!r}; expected one of {METHOD_KINDS}")
        if not 0.0 <= self.alpha <= 1.0:
            raise UsageError(f"method.alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise UsageError(f"method.beta must be >= 0, got {self.beta}")
        if self.ramp_c is not None and not self.ramp_c > 0:
            raise UsageError(f"method.ramp_c must be > 0, got {self.ramp_c}")
        if self.ramp_style not in ("linear", "step"):
            raise UsageError(f"method.ramp_style must be linear or step, got {self.ramp_style!r}")
        if self.top_k is not None and self.top_k < 2:
            raise UsageError(f"method.top_k must be >= 2, got {self.top_k}")
        if not self.temperature > 0:
            raise UsageError(f"method.temperature must be > 0, got {self.temperature}")
        if self.n_teachers < 1:
            raise UsageError("method.n_teachers must be >= 1")
        if self.stale_T < 1:
            raise UsageError("method.stale_T must be >= 1")
        if self.reg_kind not in ("entropy", "skl"):
            raise UsageError(f"method.reg_kind must be entropy or skl, got {self.reg_kind!r}")

    @property
    def n_models(self):
        return 2 if self.kind in CODISTILL_KINDS else 1

    @property
    def train_cost(self):
        if self.kind == "ensemble_distill":
            return self.n_teachers + 1
        return self.n_models

    def to_dict(self):
        return asdict(self)


@dataclass
class RampSchedule:
    cap: float
    slope_c: float = 1.0
    style: str = "linear"
    t0: int = 0

    def __post_init__(self):
        if self.cap < 0:
            raise UsageError("ramp cap must be >= 0")
        if not self.slope_c > 0:
            raise UsageError("ramp slope must be > 0")
        if self.style not in ("linear", "step"):
            raise UsageError(f"unknown ramp style {self.style!r}")


def coefficient_at(sched, step):
    """min(c*t, cap) for linear ramps; 0 before t0 and cap after for step ramps."""
    if sched.style == "step":
        return sched.cap if step >= sched.t0 else 0.0
    return min(sched.slope_c * step, sched.cap)


# ---- building blocks -------------------------------------------------------


def _clamped(p):
    q = T.clip(p, EPS, 1.0)
    return q / T.sum_rows(q)


def _check_labels(p, labels):
    labels = np.asarray(labels, dtype=np.int64)
    n, k = p.shape
    if labels.shape != (n,):
        raise UsageError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise UsageError(f"labels must lie in [0, {k})")
    return labels


def _top_k(p, top_k):
    if top_k is None:
        return p
    k = p.shape[1]
    if top_k > k:
        raise UsageError(f"top_k={top_k} exceeds the number of classes {k}")
    # selection is a constant index: no gradient through the sort
    idx = np.argsort(-p.value, axis=1, kind="stable")[:, :top_k]
    return T.gather(p, idx)


def _row_entropy(p, top_k=None):
    q = _clamped(_top_k(p, top_k))
    return -T.sum_rows(q * T.log(q))


def _row_skl_uniform(p, top_k=None):
    q = _clamped(_top_k(p, top_k))
    k = q.shape[1]
    return T.sum_rows((q - 1.0 / k) * (T.log(q) - math.log(1.0 / k)))


def _row_skl(p1, p2):
    a, b = _clamped(p1), _clamped(p2)
    return T.sum_rows((a - b) * (T.log(a) - T.log(b)))


def _row_l1(p1, p2):
    return T.sum_rows(T.absolute(p1 - p2))


def _row_cross_entropy(target, p):
    """-sum_j target_j log p_j with ``target`` a constant array."""
    target = np.asarray(target, dtype=np.float64)
    q = _clamped(p)
    return -T.sum_rows(T.log(q) * target)


# ---- objectives ------------------------------------------------------------


def ce_loss(probs, labels):
    """Mean negative log-likelihood of the labels."""
    labels = _check_labels(probs, labels)
    return -T.mean(T.log(T.gather(_clamped(probs), labels)))


def entropy_regularized_loss(probs, labels, alpha, top_k=None):
    """(1 - alpha) * CE + alpha * mean entropy (optionally over the top-k)."""
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
    if top_k is not None and top_k > probs.shape[1]:
        raise UsageError(f"top_k={top_k} exceeds the number of classes {probs.shape[1]}")
    ce = ce_loss(probs, labels)
    if alpha == 0:
        return ce
    return ce * (1.0 - alpha) + T.mean(_row_entropy(probs, top_k)) * alpha


def skl_regularized_loss(probs, labels, alpha, top_k=None):
    """(1 - alpha) * CE - alpha * mean SKL(row, uniform)."""
    if not 0.0 <= alpha <= 1.0:
        raise UsageError(f"alpha must lie in [0, 1], got {alpha}")
    if top_k is not None and top_k > probs.shape[1]:
        raise UsageError(f"top_k={top_k} exceeds the number of classes {probs.shape[1]}")
    ce = ce_loss(probs, labels)
    if alpha == 0:
        return ce
    return ce * (1.0 - alpha) - T.mean(_row_skl_uniform(probs, top_k)) * alpha


def codistill_loss(probs1, probs2, labels, beta_t, variant="skl"):
    """Two-model objective penalising disagreement between their predictions.

    ``l1`` and ``skl`` are joint: CE(w1) + CE(w2) + beta_t * mean distance,
    with gradients reaching both models. ``ce_independent`` returns a pair of
    losses, one per model, where the other model's probabilities enter as a
    constant target (pass the stale teacher probabilities; a Var is detached).
    """
    if beta_t < 0:
        raise UsageError(f"beta_t must be >= 0, got {beta_t}")
    p2_shape = probs2.shape if isinstance(probs2, T.Var) else np.shape(probs2)
    if probs1.shape != p2_shape:
        raise UsageError(f"batch shape mismatch: {probs1.shape} vs {p2_shape}")
    if variant == "ce_independent":
        return _codistill_independent(probs1, probs2, labels, beta_t)
    if not isinstance(probs2, T.Var):
        raise UsageError("joint co-distillation needs both models on the tape")
    base = ce_loss(probs1, labels) + ce_loss(probs2, labels)
    if variant == "l1":
        dist = _row_l1
    elif variant == "skl":
        dist = _row_skl
    else:
        raise UsageError(f"unknown co-distillation variant {variant!r}")
    if beta_t == 0:
        return base
    return base + T.mean(dist(probs1, probs2)) * beta_t


def _codistill_independent(probs1, probs2, labels, beta_t):
    """Each model's own CE plus beta * CE against the other's frozen output.

    Either argument may be a Var or an array. The teacher side is always a
    constant, so loss 1 never sends gradient into model 2 and vice versa.
    """
    t1 = probs1.value if isinstance(probs1, T.Var) else np.asarray(probs1)
    t2 = probs2.value if isinstance(probs2, T.Var) else np.asarray(probs2)
    out = []
    for student, teacher in ((probs1, t2), (probs2, t1)):
        if not isinstance(student, T.Var):
            out.append(None)
            continue
        loss = ce_loss(student, labels)
        if beta_t != 0:
            loss = loss + T.mean(_row_cross_entropy(teacher, student)) * beta_t
        out.append(loss)
    return tuple(out)


def combined_loss(probs1, probs2, labels, alpha_t, beta_t, reg_kind="entropy", top_k=None):
    """SKL co-distillation plus alpha_t times a confidence regulariser on both models.

    The regulariser is added, not blended: CE keeps weight 1 whatever alpha_t.
    """
    if alpha_t < 0 or beta_t < 0:
        raise UsageError("alpha_t and beta_t must be >= 0")
    if reg_kind not in ("entropy", "skl"):
        raise UsageError(f"unknown regulariser kind {reg_kind!r}")
    loss = codistill_loss(probs1, probs2, labels, beta_t, "skl")
    if alpha_t == 0:
        return loss
    if reg_kind == "entropy":
        ereg = T.mean(_row_entropy(probs1, top_k)) + T.mean(_row_entropy(probs2, top_k))
    else:
        ereg = -(T.mean(_row_skl_uniform(probs1, top_k)) + T.mean(_row_skl_uniform(probs2, top_k)))
    return loss + ereg * alpha_t


def _soften(p, temperature):
    """Re-softmax probabilities at a temperature: softmax(log p / tau)."""
    z = np.log(np.clip(p, EPS, 1.0)) / temperature
    z -= z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def distill_loss(student_probs, teacher_probs, temperature=1.0):
    """Mean cross-entropy from the softened teacher to the softened student.

    log p differs from the logits by a per-row constant, so softmax(log p / tau)
    equals softmax(logits / tau) up to the clamp.
    """
    if not temperature > 0:
        raise UsageError(f"temperature must be > 0, got {temperature}")
    teacher = np.asarray(teacher_probs, dtype=np.float64)
    if teacher.shape != student_probs.shape:
        raise UsageError(f"teacher shape {teacher.shape} != student shape {student_probs.shape}")
    if temperature == 1.0:
        return T.mean(_row_cross_entropy(teacher, student_probs))
    soft_teacher = _soften(teacher, temperature)
    soft_student = T.softmax(T.log(_clamped(student_probs)) / temperature)
    return T.mean(_row_cross_entropy(soft_teacher, soft_student))


# ---- loss landscape curves --------------------------------------------------


def _h_bin(p):
    return -(p * math.log(p) + (1.0 - p) * math.log1p(-p))


def _log_sigmoid(f):
    return -math.log1p(math.exp(-f)) if f >= 0 else f - math.log1p(math.exp(f))


def landscape_scan(alpha_grid, tau_grid, p_grid, f_grid=None):
    """Binary loss curves for plotting.

    Rows are ``(kind, param, x, loss)``:
      * ``entropy``: (1-a)(-ln p) + a H(p) over probabilities p,
      * ``entropy_logistic``: same loss on sigmoid(f) over scores f,
      * ``temperature``: -ln sigmoid(f / tau) over scores f.
    """
    if f_grid is None:
        f_grid = np.linspace(-8.0, 8.0, 65)
    rows = []
    for a in alpha_grid:
        for p in p_grid:
            if not 0.0 < p < 1.0:
                raise UsageError(f"p must lie in (0, 1), got {p}")
            rows.append(("entropy", float(a), float(p), (1 - a) * -math.log(p) + a * _h_bin(p)))
    for a in alpha_grid:
        for f in f_grid:
            f = float(f)
            s = 1.0 / (1.0 + math.exp(-f)) if f >= 0 else math.exp(f) / (1.0 + math.exp(f))
            h = _h_bin(s) if 0.0 < s < 1.0 else 0.0
            rows.append(("entropy_logistic", float(a), f, (1 - a) * -_log_sigmoid(f) + a * h))
    for tau in tau_grid:
        if not tau > 0:
            raise UsageError(f"temperature must be > 0, got {tau}")
        for f in f_grid:
            rows.append(("temperature", float(tau), float(f), -_log_sigmoid(float(f) / tau)))
    return rows


def write_landscape_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("kind,param,x,loss\n")
        for kind, param, x, loss in rows:
            fh.write(f"{kind},{param:.17g},{x:.17g},{loss:.17g}\n")
