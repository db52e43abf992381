"""
Measuring churn between two classifiers
=======================================

Two models that score the same examples can agree on accuracy and still
disagree on which examples they get right. This script walks through the
disagreement metrics on small hand-made probability matrices.
"""

import numpy as np

from churnlab import metrics

# %%
# Four examples, three classes. Model A and model B have the same accuracy
# but flip their predictions on rows 2 and 3.
labels = np.array([0, 1, 2, 2])
p_a = np.array([[0.8, 0.1, 0.1], [0.2, 0.7, 0.1], [0.1, 0.2, 0.7], [0.4, 0.35, 0.25]])
p_b = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.45, 0.1, 0.45], [0.2, 0.2, 0.6]])

print("accuracy A", metrics.accuracy(p_a, labels), " B", metrics.accuracy(p_b, labels))
print("churn     ", metrics.churn(p_a, p_b))

# %%
# Soft churn compares max-normalised probability vectors. Small exponents
# see every shift in probability mass; large ones approach hard churn.
for alpha in (1.0, 4.0, 64.0, 1024.0):
    print(f"soft churn alpha={alpha:<6} {metrics.schurn(p_a, p_b, alpha):.4f}")

# %%
# Churn split by whether model A was right on the example.
sc = metrics.slice_churn(p_a, p_b, labels)
print("churn where A is correct  ", sc.churn_correct)
print("churn where A is incorrect", sc.churn_incorrect)

# %%
# Confidence is the gap between the top two probabilities. Rows where the
# models disagree always have an L1 distance above the smaller confidence,
# and churn never exceeds the sum of both error rates.
print("confidence A", metrics.confidence(p_a))
audit = metrics.audit_bounds(p_a, p_b, labels)
print(audit.summary())

# %%
# Distances between matching rows: L1, KL and symmetric KL.
l1, kl, skl = metrics.distances(p_a, p_b)
print(np.column_stack([l1, kl, skl]).round(4))

# %%
# Calibration: a batch where every example has top probability 0.9 but only
# half are right is off by 0.4.
print("ECE", metrics.ece(np.tile([0.9, 0.1], (4, 1)), np.array([0, 0, 1, 1])))

# %%
# Everything above in one record, as stored for each pair of runs.
report = metrics.churn_report(p_a, p_b, labels, alphas=(1.0, 16.0))
print(report.to_dict())
