"""Command-line entry point: ``churnlab <subcommand> [options]``.

Every subcommand is a thin wrapper over library calls; results go under the
output directory (``--out``, else ``$CHURNLAB_OUT``, else ``./churnlab_out``)
together with a ``manifest.json``.

Exit codes: 0 success, 1 usage error, 2 numeric/run failure or a violated bound.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .data import DATASET_ROW_STRIDE, SeedBundle, save_csv
from .errors import ChurnlabError, NumericError, UsageError
from .harness import (
    DATASET_KEYS,
    TABLE_COLUMNS,
    ExperimentConfig,
    ExperimentError,
    ablation_grid,
    derive_bundle,
    format_ablation,
    format_table,
    load_dataset,
    load_summaries,
    run_experiment,
    run_training,
)
from .io import atomic_write_text, digest_array, read_labels_csv, read_probs_csv, read_probs_jsonl
from .losses import MethodSpec, landscape_scan, write_landscape_csv
from .metrics import audit_bounds

log = logging.getLogger("churnlab")

SUBCOMMANDS = ("gen-data", "train", "experiment", "ablate", "report", "landscape", "audit")
DEFAULT_OUT = "churnlab_out"

_SECTION_KEYS = {
    "method": {f.name for f in fields(MethodSpec)},
    "seeds": {"init_seed", "order_seed", "augment_seed"},
    "lr": {"peak_lr", "warmup_steps", "decay_steps", "decay_factor"},
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


# ---- configuration -------------------------------------------------------------------


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(d, assignment):
    """Apply one dotted ``key=value`` pair to a config dict in place.

    Values are parsed as JSON when possible (``0.04``, ``true``, ``[64,64]``)
    and kept as strings otherwise.
    """
    if "=" not in assignment:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    key, value = assignment.split("=", 1)
    parts = key.strip().split(".")
    top = {f.name for f in fields(ExperimentConfig)}
    if parts[0] not in top:
        raise UsageError(f"unknown config key: {key}")
    if len(parts) == 1:
        d[parts[0]] = _parse_value(value)
        return d
    if len(parts) != 2 or parts[0] not in (*_SECTION_KEYS, "dataset"):
        raise UsageError(f"unknown config key: {key}")
    section = dict(d.get(parts[0]) or {})
    if parts[0] == "dataset":
        if parts[1] == "kind":
            section = {"kind": _parse_value(value)}
            d["dataset"] = section
            return d
        allowed = DATASET_KEYS.get(section.get("kind", "blobs"), set())
    else:
        allowed = _SECTION_KEYS[parts[0]]
    if parts[1] not in allowed:
        raise UsageError(f"unknown config key: {key}")
    section[parts[1]] = _parse_value(value)
    d[parts[0]] = section
    return d


def build_config(config_path=None, overrides=(), seed=None, runs=None, out=None):
    """Defaults, then the JSON file, then ``--set`` overrides, then flags."""
    d = ExperimentConfig().to_dict()
    if config_path is not None:
        try:
            with open(config_path) as fh:
                file_d = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{config_path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(file_d, dict):
            raise UsageError(f"{config_path}: top level must be a JSON object")
        for key, value in file_d.items():
            if isinstance(value, dict) and isinstance(d.get(key), dict) and key != "dataset":
                d[key] = {**d[key], **value}
            elif key == "dataset" and isinstance(value, dict) and value.get("kind", "blobs") == "blobs":
                d[key] = {**d[key], **value}
            else:
                d[key] = value
    for assignment in overrides:
        apply_override(d, assignment)
    if seed is not None:
        d["seeds"] = {"init_seed": seed, "order_seed": seed, "augment_seed": seed}
    if runs is not None:
        d["n_runs"] = runs
    if out is not None:
        d["out_dir"] = str(out)
    try:
        return ExperimentConfig.from_dict(d)
    except TypeError as exc:
        raise UsageError(str(exc)) from None


def _out_dir(args):
    return Path(args.out or os.environ.get("CHURNLAB_OUT") or DEFAULT_OUT)


# ---- report --------------------------------------------------------------------------


def _cell(ms):
    return f"{ms[0]!r}±{ms[1]!r}"


def report(run_dir, out_dir=None):
    """Table text for every summary under ``run_dir``; also writes report.csv/.txt.

    The CSV keeps full precision (fractions, not percentages) as
    ``mean±std`` cells; the lowest mean churn is marked with ``*``.
    """
    summaries = load_summaries(run_dir)
    if not summaries:
        raise UsageError(f"{run_dir}: no experiment summaries found")
    summaries.sort(key=lambda s: s.label)
    text = format_table(summaries)
    best = min(s.stats["churn"][0] for s in summaries)
    rows = []
    for s in summaries:
        churn = _cell(s.stats["churn"]) + ("*" if len(summaries) > 1 and s.stats["churn"][0] == best else "")
        rows.append(
            [
                s.label,
                str(s.train_cost),
                _cell(s.stats["accuracy"]),
                churn,
                _cell(s.stats["schurn"]),
                _cell(s.stats["churn_correct"]),
                _cell(s.stats["churn_incorrect"]),
                _cell(s.stats["ece"]),
            ]
        )
    out_dir = Path(out_dir or run_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [",".join(TABLE_COLUMNS)] + [",".join(_csv_quote(v) for v in r) for r in rows]
    atomic_write_text(out_dir / "report.csv", "\n".join(lines) + "\n")
    atomic_write_text(out_dir / "report.txt", text)
    return text, out_dir / "report.csv"


def _csv_quote(v):
    return f'"{v}"' if ("," in v or '"' in v) else v


def read_report_csv(path):
    """Parse report.csv back into ``{method: {column: value}}``.

    ``mean±std`` cells become ``(mean, std, starred)`` tuples.
    """
    out = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TABLE_COLUMNS:
            raise UsageError(f"{path}: unexpected header {header}")
        for rec in reader:
            row = {"TrainCost": int(rec[1])}
            for name, cell in zip(header[2:], rec[2:]):
                starred = cell.endswith("*")
                mean, std = cell.rstrip("*").split("±")
                row[name] = (float(mean), float(std), starred)
            out[rec[0]] = row
    return out


# ---- subcommands ------------------------------------------------------------------------------


def _config_from_args(args, out):
    return build_config(args.config, args.set or (), args.seed, args.runs, out)


def cmd_gen_data(args, out):
    config = _config_from_args(args, None)
    ds = load_dataset(config.dataset)
    n = len(ds.y_train) + len(ds.y_eval)
    is_eval = np.arange(n) % DATASET_ROW_STRIDE == DATASET_ROW_STRIDE - 1
    x = np.empty((n, ds.n_features))
    y = np.empty(n, dtype=np.int64)
    x[~is_eval], x[is_eval] = ds.x_train, ds.x_eval
    y[~is_eval], y[is_eval] = ds.y_train, ds.y_eval
    out.mkdir(parents=True, exist_ok=True)
    save_csv(out / "data.csv", x, y)
    digest = digest_array(x, y)
    print(f"wrote {out / 'data.csv'}: {n} rows, {ds.n_features} features, {ds.n_classes} classes, digest {digest}")
    return 0, config, {"dataset_digest": digest}


def cmd_train(args, out):
    config = _config_from_args(args, out)
    bundle = derive_bundle(config, args.run_index)
    art = run_training(config, bundle, args.run_index)
    if not art.ok:
        print(f"run failed at step {art.failed_step}", file=sys.stderr)
        return 2, config, {"artifact": art.filename}
    print(
        f"{config.label}: accuracy {art.accuracy:.4f}  entropy {art.mean_entropy:.4f}  "
        f"ece {art.ece:.4f}  probs {art.probs_digest()}"
    )
    return 0, config, {"artifact": art.filename, "probs_digest": art.probs_digest()}


def cmd_experiment(args, out):
    config = _config_from_args(args, out)
    summary = run_experiment(config, jobs=args.jobs)
    print(format_table([summary]), end="")
    if summary.n_failed:
        print(f"warning: {summary.n_failed} run(s) failed and were excluded", file=sys.stderr)
    return 0, config, {"n_failed": summary.n_failed}


def cmd_ablate(args, out):
    config = _config_from_args(args, out)
    cells = ablation_grid(config, jobs=args.jobs)
    text = format_ablation(cells)
    atomic_write_text(out / "ablation.txt", text)
    print(text, end="")
    return 0, config, {}


def cmd_report(args, out):
    run_dir = Path(args.run_dir) if args.run_dir else out
    text, _ = report(run_dir, out if args.out else run_dir)
    print(text, end="")
    return 0, None, {"run_dir": str(run_dir)}


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None


def cmd_landscape(args, out):
    p_grid = np.linspace(args.p_min, 1 - args.p_min, args.points)
    f_grid = np.linspace(-args.f_max, args.f_max, args.points)
    rows = landscape_scan(_floats(args.alphas), _floats(args.taus), p_grid, f_grid)
    out.mkdir(parents=True, exist_ok=True)
    write_landscape_csv(rows, out / "landscape.csv")
    print(f"wrote {len(rows)} rows to {out / 'landscape.csv'}")
    return 0, None, {}


def _read_preds(path):
    path = Path(path)
    if path.suffix in (".jsonl", ".json"):
        return read_probs_jsonl(path)
    return read_probs_csv(path)


def cmd_audit(args, out):
    if len(args.preds) != 2:
        raise UsageError("audit needs exactly two --preds files")
    (p1, y1), (p2, _) = (_read_preds(p) for p in args.preds)
    labels = read_labels_csv(args.labels) if args.labels else y1
    if labels is None:
        raise UsageError("no labels: pass --labels or use prediction files with a label column")
    result = audit_bounds(p1, p2, labels)
    text = result.summary()
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "audit.txt", text + "\n")
    print(text)
    return (0 if result.ok else 2), None, {"bounds_ok": bool(result.ok)}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "experiment": cmd_experiment,
    "ablate": cmd_ablate,
    "report": cmd_report,
    "landscape": cmd_landscape,
    "audit": cmd_audit,
}


def build_parser():
    parser = _Parser(prog="churnlab", description="Measure and reduce prediction churn.")
    parser.add_argument("--version", action="version", version=f"churnlab {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    def add(name, help_text, config=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--out", help="output directory (default $CHURNLAB_OUT or ./churnlab_out)")
        if config:
            p.add_argument("--config", help="JSON experiment config")
            p.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable")
            p.add_argument("--seed", type=int, help="base seed for all three channels")
            p.add_argument("--runs", type=int, help="number of runs")
            p.add_argument("--jobs", type=int, default=1, help="worker processes")
        return p

    add("gen-data", "write the configured dataset as CSV")
    add("train", "train one run").add_argument("--run-index", type=int, default=0)
    add("experiment", "multi-seed experiment with pairwise churn")
    add("ablate", "the four-cell seed ablation grid")
    add("report", "tabulate every summary in a run directory", config=False).add_argument("run_dir", nargs="?")
    p = add("landscape", "one-dimensional loss curves as CSV", config=False)
    p.add_argument("--alphas", default="0,0.1,0.3,0.5,1")
    p.add_argument("--taus", default="0.5,1,2,4")
    p.add_argument("--points", type=int, default=99)
    p.add_argument("--p-min", type=float, default=0.01)
    p.add_argument("--f-max", type=float, default=6.0)
    p = add("audit", "check the churn bounds on two prediction files", config=False)
    p.add_argument("--preds", action="append", default=[], required=True)
    p.add_argument("--labels")
    return parser


def _now():
    return datetime.now(timezone.utc).isoformat()


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    parser = build_parser()
    started = _now()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"missing subcommand\n{parser.format_usage()}")
        out = _out_dir(args)
        code, config, extra = COMMANDS[args.command](args, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NumericError, ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ChurnlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest = {
        "command": args.command,
        "argv": argv,
        "version": __version__,
        "config_digest": config.digest() if config is not None else None,
        "config": config.to_dict() if config is not None else None,
        "started": started,
        "finished": _now(),
        "exit_code": code,
        **extra,
    }
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=1, default=str) + "\n")
    return code


if __name__ == "__main__":
    sys.exit(main())
