"""Conformal prediction sets over the branch labels, with their coverage guarantee.

Shows the score quantile, set construction, the rank-based p-value view, the
distance-weighted variant, and an empirical coverage measurement against the
guaranteed level.
"""

import numpy as np

from linkguard.conformal import (
    calibrate_exchangeable,
    calibrate_weighted,
    pi_value,
    predict_set_exchangeable,
    predict_set_weighted,
    sets_exchangeable_batch,
)
from linkguard.harness import coverage_sweep
from linkguard.probes import TrainConfig, train_layer_classifier

rng = np.random.default_rng(0)


def draw(n, delta=1.5, pos_rate=0.3, dim=6):
    y = (rng.random(n) < pos_rate).astype(int)
    x = rng.standard_normal((n, dim)) + y[:, None] * delta / np.sqrt(dim)
    return x, y


x_train, y_train = draw(1500)
clf = train_layer_classifier(x_train, y_train, TrainConfig(hidden_width=16, epochs=200, seed=0))

x_cal, y_cal = draw(1000)
alpha = 0.1
calibrator = calibrate_exchangeable(clf, x_cal, y_cal, alpha)
print(f"alpha={alpha}: score threshold = {calibrator.epsilon:.4f}")
print("a label enters the set when its probability is at least", round(1 - calibrator.epsilon, 4))

x_test, y_test = draw(4000)
member = sets_exchangeable_batch(calibrator, clf, x_test)
coverage = member[np.arange(len(y_test)), y_test].mean()
print(f"empirical coverage {coverage:.4f} (guaranteed >= {1 - alpha})")
print(f"average set size {member.sum(axis=1).mean():.3f}")

point = x_test[0]
print("\nexample point:", predict_set_exchangeable(calibrator, clf, point))
print("p-value of a mid-range score:", round(pi_value(calibrator.scores, 0.2), 4))

# the weighted variant recomputes the threshold per test point from neighbors
weighted = calibrate_weighted(clf, x_cal, y_cal, alpha, n_neighbors=200)
print("\nweighted variant, same point:", predict_set_weighted(weighted, clf, point))
print(f"kernel width tau = {weighted.tau:.3f} (median pairwise squared distance)")

print("\ncoverage across error levels (calibration and test i.i.d.):")
for row in coverage_sweep([0.05, 0.1, 0.2], n_cal=1500, n_test=4000, seed=1):
    print(
        f"  alpha={row['alpha']:.2f}: coverage {row['coverage']:.4f} "
        f">= {row['guaranteed']:.2f}, avg set size {row['avg_set_size']:.3f}"
    )
