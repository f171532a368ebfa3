"""
One-month-ahead crash / near-crash prediction
=============================================

Fit the model to synthetic teen-driving data and score every month from
the driver's own history.  The pooled scores give an ROC curve.  Scores
here are in-sample; ``loso_cv`` refits without each driver in turn (about
a minute and a half for this dataset).
"""

import sys

import numpy as np

from mixhmm import (
    TEEN_DRIVING_ESTIMATES,
    FitConfig,
    fit,
    lognormal_miles,
    loso_cv,
    permutation_null,
    predict_series,
    roc,
    simulate_shared,
)

data = simulate_shared(TEEN_DRIVING_ESTIMATES, N=42, n=18, miles_gen=lognormal_miles(), seed=7)
cfg = FitConfig(init=TEEN_DRIVING_ESTIMATES, compute_se=False)

if "--loso" in sys.argv:
    result = loso_cv(data, cfg)
    scores, labels = result.scores, result.labels
else:
    model = fit(data, cfg)
    scores = np.concatenate([predict_series(model, s) for s in data])
    labels = np.concatenate([s.y[1:] for s in data])

curve = roc(scores, labels)
null = permutation_null(scores, labels, n_perm=1000, seed=1)
print(f"{len(scores)} predicted months, {labels.sum()} with a crash or near crash")
print(f"AUC {curve.auc:.3f}; permutation 95th percentile {np.quantile(null, 0.95):.3f}")

# a few operating points
for target in (0.1, 0.2, 0.4):
    k = np.searchsorted(curve.fpr, target)
    print(f"false positive rate {curve.fpr[k]:.2f} -> true positive rate {curve.tpr[k]:.2f}")
