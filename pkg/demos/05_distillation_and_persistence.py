"""
Ensemble distillation and saved artifacts
=========================================

A student trained on the averaged predictions of two teachers, followed by a
round trip of every artifact through disk.
"""

import os
from dataclasses import replace
from pathlib import Path

import numpy as np

from churnlab import harness, io, metrics
from churnlab.data import SeedBundle

out = Path(os.environ.get("CHURNLAB_OUT", "demo_out")) / "distill"
config = harness.method_config(
    harness.ExperimentConfig(total_steps=800, lr={"warmup_steps": 50, "decay_steps": [500, 700]}),
    "ensemble_distill",
    n_teachers=2,
    temperature=2.0,
)

# %%
# The teachers' averaged predictions are themselves a probability matrix.
singles, avg = harness.teacher_ensemble_probs(config, SeedBundle(1, 1, 1))
labels = harness.load_dataset(config.dataset).y_eval
print("teacher accuracies", [metrics.accuracy(p, labels) for p in singles])
print("ensemble accuracy ", metrics.accuracy(avg, labels))

# %%
# The student costs three trainings: two teachers plus itself.
student = harness.ensemble_distill_run(config, SeedBundle(1, 1, 1))
print("student accuracy", student.accuracy, "train cost", student.train_cost)

# %%
# A short experiment written to disk, then summarised again from the files.
cfg = replace(config, n_runs=3, out_dir=str(out))
summary = harness.run_experiment(cfg)
again = harness.summary_from_disk(out, cfg)
print("identical after reload:", again == summary)

# %%
# Probability matrices survive CSV and JSON-lines bit for bit.
io.write_probs_csv(out / "student.csv", student.probs, labels)
back, _ = io.read_probs_csv(out / "student.csv")
print("csv round trip exact:", np.array_equal(back, student.probs))
