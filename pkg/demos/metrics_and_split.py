"""The evaluation criteria and the variance split on a toy example."""

import numpy as np

from rmukit import compute_metrics, synth_generate, SyntheticSpec, variance_split

truth = np.array([1.0, 2.0, 3.0, 4.0, 5.0])
pred = np.array([2.0, 1.0, 3.0, 5.0, 4.0])
m = compute_metrics(pred, truth)
print(f"PLCC {m.plcc:.4f}  SROCC {m.srocc:.4f}  KROCC {m.krocc:.4f}  RMSE {m.rmse:.4f}")
# Two swapped neighbours: 8 of the 10 pairs agree, so KROCC = (8 - 2) / 10.

# Rank metrics only see the order, so any increasing transform leaves them alone.
m2 = compute_metrics(np.exp(pred), truth)
print(f"after exp: SROCC {m2.srocc:.4f}  KROCC {m2.krocc:.4f}  (PLCC moved to {m2.plcc:.4f})")

try:
    compute_metrics(pred, np.full(5, 3.0))
except ValueError as exc:
    print("constant truth:", exc)

data = synth_generate(SyntheticSpec(num_sequences=10, seed=0))
train_set, test_set = variance_split(data, train_fraction=0.7)
print("train variances:", [round(s.variance_key, 4) for s in train_set])
print("test variances: ", [round(s.variance_key, 4) for s in test_set])
