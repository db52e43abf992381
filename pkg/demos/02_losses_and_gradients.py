"""
Training objectives and their gradients
=======================================

The objectives that push a model toward confident predictions, and the
co-distillation objectives that pull two models toward each other. Every
value is computed on a small tape, and the gradient is compared with central
differences.
"""

import os
from pathlib import Path

import numpy as np

from churnlab import losses, tensor

out = Path(os.environ.get("CHURNLAB_OUT", "demo_out")) / "losses"
out.mkdir(parents=True, exist_ok=True)

# %%
# Cross-entropy and its entropy-regularised version on one batch.
tape = tensor.Tape()
p = tape.param(np.array([[0.7, 0.2, 0.1], [0.3, 0.4, 0.3]]))
y = np.array([0, 1])
print("cross-entropy           ", float(losses.ce_loss(p, y).value))
for alpha in (0.0, 0.3, 1.0):
    v = losses.entropy_regularized_loss(p, y, alpha)
    print(f"entropy-regularised a={alpha}", float(v.value))
print("SKL-regularised a=0.3   ", float(losses.skl_regularized_loss(p, y, 0.3).value))
print("top-2 entropy a=0.3     ", float(losses.entropy_regularized_loss(p, y, 0.3, top_k=2).value))

# %%
# Co-distillation adds a disagreement penalty to the two cross-entropies.
tape = tensor.Tape()
p1 = tape.param(np.array([[0.75, 0.25]]))
p2 = tape.param(np.array([[0.25, 0.75]]))
for variant in ("l1", "skl"):
    print(variant, float(losses.codistill_loss(p1, p2, [0], 1.0, variant).value))

# %%
# Gradients through a real network, checked against central differences.
rng = np.random.default_rng(0)
params = tensor.init_params([3, 8, 4], init_seed=1)
x = rng.standard_normal((5, 3))
labels = rng.integers(0, 4, 5)


def loss_at(values):
    t = tensor.Tape()
    probs, _ = tensor.build_forward(t, tensor.ModelParams(params.layer_shapes, values), x)
    return losses.entropy_regularized_loss(probs, labels, 0.3)


t = tensor.Tape()
probs, leaves = tensor.build_forward(t, params, x)
analytic = tensor.compute_gradients(t, losses.entropy_regularized_loss(probs, labels, 0.3), leaves)
h = 1e-6
numeric = np.empty_like(analytic)
for i in range(analytic.size):
    up, dn = params.values.copy(), params.values.copy()
    up[i] += h
    dn[i] -= h
    numeric[i] = (float(loss_at(up).value) - float(loss_at(dn).value)) / (2 * h)
print("max |analytic - numeric|", np.abs(analytic - numeric).max())

# %%
# Ramp schedules delay the coupling until the models are useful classifiers.
ramp = losses.RampSchedule(cap=0.04, slope_c=0.04 / 200)
print([round(losses.coefficient_at(ramp, t), 4) for t in (0, 50, 100, 200, 1000)])

# %%
# One-dimensional loss curves for a binary example, written as CSV.
rows = losses.landscape_scan([0.0, 0.3, 0.6], [0.5, 1.0, 4.0], np.linspace(0.02, 0.98, 49))
losses.write_landscape_csv(rows, out / "landscape.csv")
print("wrote", len(rows), "rows to", out / "landscape.csv")
