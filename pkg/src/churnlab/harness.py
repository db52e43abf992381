"""Training runs, multi-seed experiments and their on-disk artifacts."""

from __future__ import annotations

import functools
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics
from . import tensor as T
from .data import SeedBundle, augment, epoch_order, gen_blobs, keyed_generator, load_csv
from .errors import ChurnlabError, ConfigError, NumericError, UsageError
from .io import (
    atomic_write_text,
    canonical_json,
    digest_array,
    digest_json,
    read_probs_csv,
    write_probs_csv,
)
from .losses import (
    MethodSpec,
    RampSchedule,
    codistill_loss,
    coefficient_at,
    combined_loss,
    distill_loss,
    entropy_regularized_loss,
    skl_regularized_loss,
    ce_loss,
)

log = logging.getLogger(__name__)

__all__ = [
    "ExperimentConfig",
    "RunArtifact",
    "ExperimentSummary",
    "ExperimentError",
    "load_dataset",
    "derive_bundle",
    "run_training",
    "run_experiment",
    "ablation_grid",
    "ensemble_distill_run",
    "summarize_pairwise",
    "load_artifacts",
    "load_summaries",
    "format_table",
    "format_ablation",
]

SIDECAR_ROWS = 10_000


class ExperimentError(ChurnlabError):
    """Every run of an experiment failed."""


DATASET_KEYS = {
    "blobs": {"kind", "n_per_class", "k", "d", "spread", "seed"},
    "csv": {"kind", "path", "n_classes"},
}


def _default_dataset():
    return {"kind": "blobs", "n_per_class": 200, "k": 3, "d": 8, "spread": 1.0, "seed": 0}


def _default_lr():
    return {"peak_lr": 0.05, "warmup_steps": 100, "decay_steps": [1000, 1500], "decay_factor": 0.1}


@dataclass
class ExperimentConfig:
    """Everything that determines a set of training runs.

    ``dataset`` is ``{"kind": "blobs", ...gen_blobs kwargs}`` or
    ``{"kind": "csv", "path": ...}``; ``lr`` holds :class:`LrSchedule` fields.
    """

    name: str = ""
    dataset: dict = field(default_factory=_default_dataset)
    hidden: list = field(default_factory=lambda: [32, 32])
    lr: dict = field(default_factory=_default_lr)
    momentum: float = 0.9
    total_steps: int = 2000
    batch_size: int = 32
    augment_sigma: float = 0.1
    method: MethodSpec = field(default_factory=MethodSpec)
    n_runs: int = 10
    seeds: SeedBundle = field(default_factory=SeedBundle)
    fix_init: bool = False
    fix_order: bool = False
    fix_augment: bool = False
    out_dir: str | None = None

    def __post_init__(self):
        if isinstance(self.method, dict):
            self.method = MethodSpec(**self.method)
        if isinstance(self.seeds, dict):
            self.seeds = SeedBundle.from_dict(self.seeds)
        self.hidden = [int(h) for h in self.hidden]
        bad = set(self.lr) - set(_default_lr())
        if bad:
            raise ConfigError(f"unknown config key(s): {', '.join('lr.' + b for b in sorted(bad))}")
        self.lr = {**_default_lr(), **self.lr}
        if self.total_steps < 0 or self.batch_size < 1:
            raise ConfigError("total_steps must be >= 0 and batch_size >= 1")
        if self.total_steps < self.schedule.warmup_steps:
            raise ConfigError("total_steps must be >= lr.warmup_steps")
        if self.augment_sigma < 0:
            raise ConfigError("augment_sigma must be >= 0")

    @property
    def label(self):
        return self.name or self.method.kind

    @property
    def schedule(self):
        return T.LrSchedule(**self.lr)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["method"] = self.method.to_dict()
        d["seeds"] = self.seeds.to_dict()
        d["hidden"] = list(self.hidden)
        d["lr"] = dict(self.lr)
        d["dataset"] = dict(self.dataset)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        d = dict(d)
        if "method" in d and isinstance(d["method"], dict):
            mknown = {f.name for f in fields(MethodSpec)}
            bad = set(d["method"]) - mknown
            if bad:
                raise UsageError(f"unknown config key(s): {', '.join('method.' + b for b in sorted(bad))}")
        if "seeds" in d and isinstance(d["seeds"], dict):
            bad = set(d["seeds"]) - {"init_seed", "order_seed", "augment_seed"}
            if bad:
                raise UsageError(f"unknown config key(s): {', '.join('seeds.' + b for b in sorted(bad))}")
            d["seeds"] = SeedBundle(**{**SeedBundle().to_dict(), **d["seeds"]})
        if "dataset" in d:
            kind = d["dataset"].get("kind", "blobs")
            if kind not in DATASET_KEYS:
                raise UsageError(f"dataset.kind: unknown dataset kind {kind!r}")
            bad = set(d["dataset"]) - DATASET_KEYS[kind]
            if bad:
                raise UsageError(f"unknown config key(s): {', '.join('dataset.' + b for b in sorted(bad))}")
        if "lr" in d:
            bad = set(d["lr"]) - {"peak_lr", "warmup_steps", "decay_steps", "decay_factor"}
            if bad:
                raise UsageError(f"unknown config key(s): {', '.join('lr.' + b for b in sorted(bad))}")
        return cls(**d)

    def digest(self):
        """Hash of everything that affects training (not the output location)."""
        d = self.to_dict()
        d.pop("out_dir")
        return digest_json(d)


# ---- artifacts ---------------------------------------------------------------


@dataclass
class RunArtifact:
    config_digest: str
    run_index: int
    seeds: SeedBundle
    method: str
    train_cost: int
    status: str
    steps: int
    eval_digest: str
    eval_labels: np.ndarray
    probs: np.ndarray | None
    accuracy: float = float("nan")
    mean_entropy: float = float("nan")
    mean_confidence: float = float("nan")
    ece: float = float("nan")
    init_digest: str = ""
    params_digest: str = ""
    failed_step: int | None = None
    wall_clock: float = 0.0

    @property
    def ok(self):
        return self.status == "ok"

    @property
    def filename(self):
        return f"run_{self.config_digest}_{self.run_index}.json"

    def probs_digest(self):
        return digest_array(self.probs) if self.probs is not None else ""

    def to_dict(self, probs_file=None):
        d = asdict(self)
        d["seeds"] = self.seeds.to_dict()
        d["eval_labels"] = np.asarray(self.eval_labels).tolist()
        if probs_file is not None:
            d["probs"] = None
            d["probs_file"] = probs_file
        else:
            d["probs"] = None if self.probs is None else np.asarray(self.probs).tolist()
        return d

    @classmethod
    def from_dict(cls, d, base_dir=None):
        d = dict(d)
        probs_file = d.pop("probs_file", None)
        if probs_file is not None:
            probs, _ = read_probs_csv(Path(base_dir or ".") / probs_file)
            d["probs"] = probs
        elif d.get("probs") is not None:
            d["probs"] = np.array(d["probs"], dtype=np.float64)
        d["seeds"] = SeedBundle.from_dict(d["seeds"])
        d["eval_labels"] = np.array(d["eval_labels"], dtype=np.int64)
        return cls(**d)

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        probs_file = None
        if self.probs is not None and self.probs.shape[0] > SIDECAR_ROWS:
            probs_file = self.filename.replace(".json", ".probs.csv")
            write_probs_csv(out_dir / probs_file, self.probs, self.eval_labels)
        atomic_write_text(out_dir / self.filename, json.dumps(self.to_dict(probs_file)))
        return out_dir / self.filename


def load_artifacts(run_dir, config_digest=None):
    run_dir = Path(run_dir)
    pattern = f"run_{config_digest}_*.json" if config_digest else "run_*.json"
    arts = [RunArtifact.from_dict(json.loads(p.read_text()), run_dir) for p in run_dir.glob(pattern)]
    return sorted(arts, key=lambda a: (a.config_digest, a.run_index))


# ---- training ------------------------------------------------------------------


@functools.lru_cache(maxsize=16)
def _dataset_cached(spec_json):
    spec = json.loads(spec_json)
    kind = spec.pop("kind", "blobs")
    if kind == "blobs":
        return gen_blobs(**spec)
    if kind == "csv":
        return load_csv(spec["path"], n_classes=spec.get("n_classes"))
    raise ConfigError(f"dataset.kind: unknown dataset kind {kind!r}")


def load_dataset(spec):
    return _dataset_cached(canonical_json(spec))


def derive_bundle(config, i):
    """Run i's seeds: base + i on every channel not frozen by the ablation flags."""
    s = config.seeds
    return SeedBundle(
        s.init_seed if config.fix_init else s.init_seed + i,
        s.order_seed if config.fix_order else s.order_seed + i,
        s.augment_seed if config.fix_augment else s.augment_seed + i,
    )


def _ramps(method, total_steps):
    """Ramps for beta and alpha; default slope saturates at 10% of training."""

    def ramp(cap):
        c = method.ramp_c
        if c is None:
            c = cap / (0.1 * total_steps) if cap > 0 and total_steps > 0 else 1.0
        return RampSchedule(cap=cap, slope_c=c, style=method.ramp_style, t0=method.ramp_t0)

    return ramp(method.beta), ramp(method.alpha)


def _batches(ds, config, bundle):
    """Yield (step, x, y) with keyed order and augmentation."""
    n = ds.x_train.shape[0]
    bs = min(config.batch_size, n)
    per_epoch = max(1, n // bs)
    order, cached = None, -1
    for t in range(config.total_steps):
        epoch, b = divmod(t, per_epoch)
        if epoch != cached:
            order, cached = epoch_order(bundle.order_seed, epoch, n), epoch
        idx = order[b * bs : (b + 1) * bs]
        x = augment(ds.x_train[idx], bundle.augment_seed, epoch, b, config.augment_sigma)
        yield t, x, ds.y_train[idx]


def _objective(method, probs, y, t, ramps, stale):
    """Loss Var(s) for one step; returns a list aligned with ``probs``."""
    kind = method.kind
    beta_t = coefficient_at(ramps[0], t)
    if kind == "baseline":
        return [ce_loss(probs[0], y)]
    if kind == "entropy":
        return [entropy_regularized_loss(probs[0], y, method.alpha, method.top_k)]
    if kind == "skl":
        return [skl_regularized_loss(probs[0], y, method.alpha, method.top_k)]
    if kind == "codistill_l1":
        return [codistill_loss(probs[0], probs[1], y, beta_t, "l1")]
    if kind == "codistill_skl":
        return [codistill_loss(probs[0], probs[1], y, beta_t, "skl")]
    if kind == "combined":
        alpha_t = coefficient_at(ramps[1], t) if method.alpha_ramp else method.alpha
        return [combined_loss(probs[0], probs[1], y, alpha_t, beta_t, method.reg_kind, method.top_k)]
    if kind == "codistill_ce_independent":
        l1, _ = codistill_loss(probs[0], stale[1], y, beta_t, "ce_independent")
        l2, _ = codistill_loss(probs[1], stale[0], y, beta_t, "ce_independent")
        return [l1, l2]
    raise UsageError(f"method.kind {kind!r} is not a direct training objective")


def _train(ds, config, method, bundle, streams=(0,), teacher=None):
    """Train ``len(streams)`` models jointly; returns (params list, init digest).

    ``teacher`` maps a batch to target probabilities for distillation.
    """
    sizes = [ds.n_features] + list(config.hidden) + [ds.n_classes]
    params = [T.init_params(sizes, bundle.init_seed, s) for s in streams]
    init_digest = digest_array(params[0].values)
    states = [T.OptState.zeros(p.values.size, config.momentum) for p in params]
    schedule = config.schedule
    ramps = _ramps(method, config.total_steps)
    history = [[p] for p in params]
    for t, x, y in _batches(ds, config, bundle):
        tape = T.Tape()
        try:
            fwd = [T.build_forward(tape, p, x) for p in params]
        except NumericError as exc:
            exc.step = t
            raise
        probs = [f[0] for f in fwd]
        if teacher is not None:
            losses = [distill_loss(probs[0], teacher(x), method.temperature)]
        else:
            stale = None
            if method.kind == "codistill_ce_independent":
                # history[m][0] holds model m's parameters from step max(0, t - T)
                stale = [T.forward_probs(h[0], x) for h in history]
            losses = _objective(method, probs, y, t, ramps, stale)
        if not all(np.isfinite(loss.value) for loss in losses):
            raise NumericError(f"non-finite loss at step {t}", step=t)
        lr = T.lr_at(schedule, t)
        if len(losses) == 1:
            leaves = [leaf for f in fwd for leaf in f[1]]
            flat = T.compute_gradients(tape, losses[0], leaves)
            grads = np.split(flat, np.cumsum([p.values.size for p in params])[:-1])
        else:
            grads = [T.compute_gradients(tape, loss, fwd[m][1]) for m, loss in enumerate(losses)]
        for m in range(len(params)):
            states[m].step = t
            params[m], states[m] = T.optimizer_step(params[m], grads[m], states[m], lr)
        if method.kind == "codistill_ce_independent":
            for m in range(len(params)):
                history[m].append(params[m])
                del history[m][: max(0, len(history[m]) - (method.stale_T + 1))]
    return params, init_digest


def _artifact(config, ds, run_index, bundle, method, params, init_digest, started, steps, cost):
    probs = T.forward_probs(params, ds.x_eval)
    return RunArtifact(
        config_digest=config.digest(),
        run_index=run_index,
        seeds=bundle,
        method=method.kind,
        train_cost=cost,
        status="ok",
        steps=steps,
        eval_digest=digest_array(ds.x_eval, ds.y_eval),
        eval_labels=ds.y_eval.copy(),
        probs=probs,
        accuracy=metrics.accuracy(probs, ds.y_eval),
        mean_entropy=float(metrics.entropy(probs).mean()),
        mean_confidence=float(metrics.confidence(probs).mean()),
        ece=metrics.ece(probs, ds.y_eval),
        init_digest=init_digest,
        params_digest=digest_array(params.values),
        wall_clock=time.perf_counter() - started,
    )


def _failed(config, ds, run_index, bundle, method, exc, started):
    log.warning("run %d (%s) failed: %s", run_index, method.kind, exc)
    return RunArtifact(
        config_digest=config.digest(),
        run_index=run_index,
        seeds=bundle,
        method=method.kind,
        train_cost=method.train_cost,
        status="failed",
        steps=0 if exc.step is None else exc.step,
        eval_digest=digest_array(ds.x_eval, ds.y_eval),
        eval_labels=ds.y_eval.copy(),
        probs=None,
        failed_step=exc.step,
        wall_clock=time.perf_counter() - started,
    )


def run_training(config, bundle, run_index=0):
    """Train one model (or one co-distillation pair) and return model 1's artifact.

    The artifact is written to ``config.out_dir`` when one is set.
    """
    if config.method.kind == "ensemble_distill":
        return ensemble_distill_run(config, bundle, run_index)
    started = time.perf_counter()
    ds = load_dataset(config.dataset)
    method = config.method
    try:
        params, init_digest = _train(ds, config, method, bundle, streams=tuple(range(method.n_models)))
        art = _artifact(
            config, ds, run_index, bundle, method, params[0], init_digest, started, config.total_steps, method.train_cost
        )
    except NumericError as exc:
        if exc.step is None:
            # training finished but the final evaluation overflowed
            exc.step = config.total_steps
        art = _failed(config, ds, run_index, bundle, method, exc, started)
    if config.out_dir:
        art.save(config.out_dir)
    return art


def _teacher_bundle(bundle, j):
    """Seeds for ensemble teacher j, independent of the student's channels."""
    rng = keyed_generator(bundle.init_seed, bundle.order_seed, bundle.augment_seed, "teacher", j)
    s = rng.integers(0, 2**62, size=3)
    return SeedBundle(int(s[0]), int(s[1]), int(s[2]))


def ensemble_distill_run(config, bundle, run_index=0, teacher_bundles=None):
    """Train ``n_teachers`` baselines, then one student on their averaged output.

    ``teacher_bundles`` overrides the derived teacher seeds (tests use the
    student's own bundle to get a teacher that shares its initialisation).
    """
    started = time.perf_counter()
    ds = load_dataset(config.dataset)
    method = config.method
    baseline = MethodSpec(kind="baseline")
    if teacher_bundles is None:
        teacher_bundles = [_teacher_bundle(bundle, j) for j in range(method.n_teachers)]
    try:
        teachers = [_train(ds, config, baseline, tb)[0][0] for tb in teacher_bundles]

        def teacher(x):
            acc = T.forward_probs(teachers[0], x)
            for tp in teachers[1:]:
                acc = acc + T.forward_probs(tp, x)
            return acc / len(teachers)

        params, init_digest = _train(ds, config, method, bundle, teacher=teacher)
        art = _artifact(
            config,
            ds,
            run_index,
            bundle,
            method,
            params[0],
            init_digest,
            started,
            config.total_steps,
            len(teachers) + 1,
        )
    except NumericError as exc:
        art = _failed(config, ds, run_index, bundle, method, exc, started)
    if config.out_dir:
        art.save(config.out_dir)
    return art


def teacher_ensemble_probs(config, bundle, teacher_bundles=None):
    """Eval-split probabilities of each teacher and of their average."""
    ds = load_dataset(config.dataset)
    if teacher_bundles is None:
        teacher_bundles = [_teacher_bundle(bundle, j) for j in range(config.method.n_teachers)]
    baseline = MethodSpec(kind="baseline")
    singles = [T.forward_probs(_train(ds, config, baseline, tb)[0][0], ds.x_eval) for tb in teacher_bundles]
    return singles, sum(singles[1:], singles[0]) / len(singles)


# ---- experiments ---------------------------------------------------------------


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return [float("nan"), float("nan")]
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return [float(arr.mean()), std]


@dataclass
class ExperimentSummary:
    """Pairwise churn reports plus mean/std aggregates.

    ``stats`` maps a metric name to ``[mean, std]`` (n-1 denominator; a
    single sample gets std 0). Churn metrics aggregate over the unordered
    run pairs, the rest over runs.
    """

    label: str
    method: str
    train_cost: int
    n_runs: int
    n_failed: int
    run_indices: list
    pairs: list
    stats: dict
    config: dict | None = None

    def to_dict(self):
        d = asdict(self)
        d["pairs"] = [{"i": i, "j": j, "report": r.to_dict()} for i, j, r in self.pairs]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["pairs"] = [(p["i"], p["j"], metrics.ChurnReport.from_dict(p["report"])) for p in d["pairs"]]
        return cls(**d)

    def __eq__(self, other):
        if not isinstance(other, ExperimentSummary):
            return NotImplemented
        return canonical_json(self.to_dict()) == canonical_json(other.to_dict())

    def save(self, out_dir):
        out_dir = Path(out_dir)
        digest = (self.config or {}).get("_digest") or digest_json(self.config or {"label": self.label})
        path = out_dir / f"summary_{digest}.json"
        atomic_write_text(path, json.dumps(self.to_dict(), indent=1))
        atomic_write_text(out_dir / f"summary_{digest}.txt", format_table([self]))
        return path


def summarize_pairwise(artifacts, label=None, config=None, n_failed=0):
    """Churn reports over every unordered pair of successful artifacts."""
    arts = [a for a in artifacts if a.ok]
    if len(arts) < 2:
        raise UsageError(f"need at least 2 successful artifacts, got {len(arts)}")
    digests = {a.eval_digest for a in arts}
    if len(digests) != 1:
        raise UsageError(f"artifacts were evaluated on different eval sets: {sorted(digests)}")
    labels = arts[0].eval_labels
    pairs = []
    for (ia, a), (ib, b) in itertools.combinations(enumerate(arts), 2):
        pairs.append((a.run_index, b.run_index, metrics.churn_report(a.probs, b.probs, labels, alphas=(1.0,))))
    reports = [r for _, _, r in pairs]
    stats = {
        "churn": _mean_std([r.churn for r in reports]),
        "schurn": _mean_std([r.schurn[1.0] for r in reports]),
        "churn_correct": _mean_std([r.churn_correct for r in reports]),
        "churn_incorrect": _mean_std([r.churn_incorrect for r in reports]),
        "accuracy": _mean_std([a.accuracy for a in arts]),
        "ece": _mean_std([a.ece for a in arts]),
        "confidence": _mean_std([a.mean_confidence for a in arts]),
        "entropy": _mean_std([a.mean_entropy for a in arts]),
    }
    return ExperimentSummary(
        label=label or arts[0].method,
        method=arts[0].method,
        train_cost=arts[0].train_cost,
        n_runs=len(arts),
        n_failed=n_failed,
        run_indices=[a.run_index for a in arts],
        pairs=pairs,
        stats=stats,
        config=config,
    )


def _run_one(args):
    config, bundle, i = args
    return run_training(config, bundle, i)


def run_experiment(config, jobs=1):
    """``config.n_runs`` independent runs, summarised pairwise.

    Runs are spread over ``jobs`` worker processes; each run stays
    single-threaded so the result does not depend on ``jobs``.
    """
    if config.n_runs < 2:
        raise UsageError("n_runs must be >= 2 to measure churn")
    tasks = [(config, derive_bundle(config, i), i) for i in range(config.n_runs)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            arts = list(pool.map(_run_one, tasks))
    else:
        arts = [_run_one(t) for t in tasks]
    failed = [a for a in arts if not a.ok]
    if failed:
        log.warning("%d of %d runs failed and are excluded", len(failed), len(arts))
    if len(arts) - len(failed) < 2:
        raise ExperimentError(f"{len(failed)} of {len(arts)} runs failed; nothing to summarise")
    cfg = config.to_dict()
    cfg.pop("out_dir")
    cfg["_digest"] = config.digest()
    summary = summarize_pairwise(arts, label=config.label, config=cfg, n_failed=len(failed))
    if config.out_dir:
        summary.save(config.out_dir)
    return summary


def summary_from_disk(run_dir, config):
    """Rebuild an experiment summary from the persisted run artifacts."""
    arts = load_artifacts(run_dir, config.digest())
    failed = sum(1 for a in arts if not a.ok)
    cfg = config.to_dict()
    cfg.pop("out_dir")
    cfg["_digest"] = config.digest()
    return summarize_pairwise(arts, label=config.label, config=cfg, n_failed=failed)


def load_summaries(run_dir):
    paths = sorted(Path(run_dir).glob("**/summary_*.json"))
    return [ExperimentSummary.from_dict(json.loads(p.read_text())) for p in paths]


ABLATION_CELLS = ((False, False), (True, False), (False, True), (True, True))


def ablation_grid(config, jobs=1):
    """The four {fix_init} x {fix_order} cells; augmentation follows the order flag.

    Returns a list of ``((fix_init, fix_order), summary)``.
    """
    out = []
    for fix_init, fix_order in ABLATION_CELLS:
        cell = replace(
            config,
            fix_init=fix_init,
            fix_order=fix_order,
            fix_augment=fix_order,
            name=f"{config.label} init={'fixed' if fix_init else 'rand'} order={'fixed' if fix_order else 'rand'}",
        )
        out.append(((fix_init, fix_order), run_experiment(cell, jobs=jobs)))
    return out


# ---- text tables -----------------------------------------------------------------


def _pm(ms, scale=100.0):
    return f"{ms[0] * scale:.2f}±{ms[1] * scale:.2f}"


TABLE_COLUMNS = (
    "Method",
    "TrainCost",
    "Accuracy±std",
    "Churn%±std",
    "SChurn%±std",
    "ChurnCorrect",
    "ChurnIncorrect",
    "ECE",
)


def table_rows(summaries):
    """Row values per summary; the lowest mean churn gets a ``*``."""
    best = min(s.stats["churn"][0] for s in summaries) if summaries else None
    rows = []
    for s in summaries:
        churn = _pm(s.stats["churn"])
        if len(summaries) > 1 and s.stats["churn"][0] == best:
            churn += "*"
        rows.append(
            [
                s.label,
                f"{s.train_cost}x",
                _pm(s.stats["accuracy"]),
                churn,
                _pm(s.stats["schurn"]),
                _pm(s.stats["churn_correct"]),
                _pm(s.stats["churn_incorrect"]),
                _pm(s.stats["ece"]),
            ]
        )
    return rows


def format_table(summaries):
    rows = [list(TABLE_COLUMNS)] + table_rows(summaries)
    widths = [max(len(r[c]) for r in rows) for c in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def format_ablation(cells):
    """Ablation cells laid out as columns, metrics as rows."""
    head = ["", *[f"init={'F' if fi else '-'} order={'F' if fo else '-'}" for (fi, fo), _ in cells]]
    rows = [head]
    for key, name in (("accuracy", "Accuracy"), ("churn", "Churn%"), ("schurn", "SChurn%")):
        rows.append([name, *[_pm(s.stats[key]) for _, s in cells]])
    widths = [max(len(r[c]) for r in rows) for c in range(len(head))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows) + "\n"


def method_config(base, kind, name="", **method_kwargs):
    """Copy of ``base`` with a different training method."""
    return replace(base, method=MethodSpec(kind=kind, **method_kwargs), name=name)
