import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linkguard.conformal import (
    ConformalCalibrator,
    calibrate_exchangeable,
    calibrate_weighted,
    pi_value,
    predict_set_by_pi,
    predict_set_exchangeable,
    predict_set_weighted,
    prediction_set,
    quantile_threshold,
    sets_exchangeable_batch,
    threshold_from_weighted_scores,
    weighted_threshold,
)
from linkguard.probes import LayerClassifier, predict_probs


def linear_probe(scale=1.0):
    """1-D classifier with p(1|x) = 1 / (1 + exp(2*scale*x)); x steers the probability."""
    w1 = np.array([[1.0, -1.0]])
    b1 = np.zeros(2)
    w2 = np.array([[scale, -scale], [-scale, scale]])
    b2 = np.zeros(2)
    return LayerClassifier(0, w1, b1, w2, b2)


def input_for_p1(p1, scale=1.0):
    """Input x such that the linear probe outputs p(1|x) = p1."""
    return np.array([math.log((1 - p1) / p1) / (2 * scale)])


def test_linear_probe_control():
    clf = linear_probe()
    for target in (0.05, 0.5, 0.95):
        probs = predict_probs(clf, input_for_p1(target))
        assert probs[1] == pytest.approx(target, abs=1e-12)


# -- quantile threshold -----------------------------------------------------------


def test_threshold_n9_alpha01_is_max():
    scores = np.linspace(0.01, 0.09, 9)
    # ceil(10 * 0.9) = 9 -> the 9th smallest of 9 = max
    assert quantile_threshold(scores, 0.1) == pytest.approx(0.09)


def test_threshold_n19_alpha01():
    scores = np.linspace(0.01, 0.19, 19)
    # ceil(20 * 0.9) = 18 -> 18th smallest of 19
    assert quantile_threshold(scores, 0.1) == pytest.approx(sorted(scores)[17])


def test_threshold_degenerate_alpha_gives_inf():
    scores = np.linspace(0.01, 0.09, 9)
    # alpha -> 0: index 10 > 9
    assert quantile_threshold(scores, 0.01) == math.inf


def test_calibrate_requires_points():
    clf = linear_probe()
    with pytest.raises(ValueError, match="empty"):
        calibrate_exchangeable(clf, np.zeros((0, 1)), np.zeros(0, dtype=int), 0.1)


def test_scores_in_unit_interval():
    with pytest.raises(ValueError, match="\\[0, 1\\]"):
        ConformalCalibrator("exchangeable", 0.1, np.array([0.5, 1.4]))


# -- exchangeable prediction sets ---------------------------------------------------


def calibrator_with_epsilon(eps, alpha=0.1):
    return ConformalCalibrator("exchangeable", alpha, np.array([min(eps, 1.0)]), epsilon=eps)


def test_set_includes_confident_label():
    clf = linear_probe()
    cal = calibrator_with_epsilon(0.1)
    # p(1|x)=0.95 >= 0.9, p(0|x)=0.05 < 0.9
    assert predict_set_exchangeable(cal, clf, input_for_p1(0.95)) == {1}


def test_infinite_threshold_gives_full_set():
    clf = linear_probe()
    cal = calibrator_with_epsilon(math.inf)
    assert predict_set_exchangeable(cal, clf, input_for_p1(0.95)) == {0, 1}


def test_wide_threshold_includes_both():
    clf = linear_probe()
    cal = calibrator_with_epsilon(0.6)
    # p = (0.5, 0.5), both >= 0.4
    assert predict_set_exchangeable(cal, clf, input_for_p1(0.5)) == {0, 1}


def test_batch_membership_matches_scalar():
    rng = np.random.default_rng(0)
    clf = linear_probe()
    x = rng.standard_normal((50, 1))
    y = (rng.random(50) < 0.5).astype(int)
    cal = calibrate_exchangeable(clf, x, y, 0.2)
    member = sets_exchangeable_batch(cal, clf, x)
    for i in range(50):
        assert frozenset(np.flatnonzero(member[i]).tolist()) == predict_set_exchangeable(cal, clf, x[i])


# -- pi values ----------------------------------------------------------------------


def test_pi_value_example():
    assert pi_value([0.1, 0.3, 0.5], 0.2) == pytest.approx(0.75)


def test_pi_value_above_all_scores():
    assert pi_value([0.1, 0.3, 0.5], 0.9) == pytest.approx(0.25)  # 1/(N+1)


def test_pi_value_zero_test_score():
    assert pi_value([0.1, 0.3, 0.5], 0.0) == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 100_000),
    n_cal=st.integers(1, 30),
    alpha=st.sampled_from([0.05, 0.1, 0.2, 0.33, 0.5]),
)
def test_pi_rule_agrees_with_quantile_rule(seed, n_cal, alpha):
    rng = np.random.default_rng(seed)
    clf = linear_probe()
    x = rng.standard_normal((n_cal, 1)) * 2
    y = rng.integers(0, 2, size=n_cal)
    cal = calibrate_exchangeable(clf, x, y, alpha)
    for _ in range(5):
        test_x = rng.standard_normal(1) * 2
        assert predict_set_exchangeable(cal, clf, test_x) == predict_set_by_pi(cal, clf, test_x)


# -- monotonicity and coverage --------------------------------------------------------


def test_threshold_monotone_in_alpha():
    rng = np.random.default_rng(1)
    scores = rng.random(57)
    alphas = [0.02, 0.05, 0.1, 0.2, 0.4]
    thresholds = [quantile_threshold(scores, a) for a in alphas]
    assert all(t1 >= t2 for t1, t2 in zip(thresholds, thresholds[1:]))


def test_sets_nested_in_alpha():
    rng = np.random.default_rng(2)
    clf = linear_probe()
    x = rng.standard_normal((200, 1))
    y = (rng.random(200) < 0.4).astype(int)
    strict = calibrate_exchangeable(clf, x, y, 0.2)
    loose = calibrate_exchangeable(clf, x, y, 0.05)
    for _ in range(25):
        point = rng.standard_normal(1)
        assert predict_set_exchangeable(strict, clf, point) <= predict_set_exchangeable(loose, clf, point)


def test_marginal_coverage_on_exchangeable_data():
    # calibration and test points i.i.d. from the same mixture
    rng = np.random.default_rng(7)

    def draw(n):
        y = (rng.random(n) < 0.4).astype(int)
        x = rng.standard_normal((n, 1)) + y[:, None] * 1.5
        return x, y

    clf = linear_probe(scale=-0.75)  # orient the probe toward the positive shift
    n_test = 4000
    for alpha in (0.05, 0.1, 0.2):
        x_cal, y_cal = draw(1500)
        x_test, y_test = draw(n_test)
        cal = calibrate_exchangeable(clf, x_cal, y_cal, alpha)
        member = sets_exchangeable_batch(cal, clf, x_test)
        coverage = member[np.arange(n_test), y_test].mean()
        slack = 3.0 * math.sqrt(alpha * (1 - alpha) / n_test)
        assert coverage >= 1 - alpha - slack


# -- weighted variant ------------------------------------------------------------------


def test_weighted_scan_example():
    eps = threshold_from_weighted_scores(np.array([0.3, 0.3, 0.3]), np.array([0.1, 0.2, 0.9]), 0.1)
    assert eps == pytest.approx(0.9)


def test_weighted_scan_insufficient_mass():
    # two equidistant neighbors with mass 2/3 < 0.9
    eps = threshold_from_weighted_scores(np.array([1 / 3, 1 / 3]), np.array([0.1, 0.2]), 0.1)
    assert eps == math.inf


def test_weighted_insufficient_mass_full_set():
    rng = np.random.default_rng(3)
    clf = linear_probe()
    x = rng.standard_normal((4, 1))
    y = rng.integers(0, 2, size=4)
    cal = calibrate_weighted(clf, x, y, alpha=0.1, n_neighbors=2, tau=1.0)
    assert predict_set_weighted(cal, clf, np.array([0.0])) == {0, 1}


def test_weighted_neighbor_count_validated():
    clf = linear_probe()
    x = np.zeros((3, 1))
    y = np.array([0, 1, 0])
    with pytest.raises(ValueError, match="n_neighbors"):
        calibrate_weighted(clf, x, y, alpha=0.1, n_neighbors=5)


def test_weighted_tau_validated():
    clf = linear_probe()
    x = np.zeros((3, 1))
    y = np.array([0, 1, 0])
    with pytest.raises(ValueError, match="tau"):
        calibrate_weighted(clf, x, y, alpha=0.1, tau=0.0)


def test_weighted_large_tau_reduces_to_subset_quantile():
    # tau -> inf: equal weights 1/(K+1); threshold is the ceil((K+1)(1-alpha))-th
    # smallest score among the K nearest neighbors, or inf when out of range
    rng = np.random.default_rng(11)
    clf = linear_probe()
    x = rng.standard_normal((40, 1))
    y = rng.integers(0, 2, size=40)
    k = 20
    alpha = 0.2
    cal = calibrate_weighted(clf, x, y, alpha=alpha, n_neighbors=k, tau=1e12)
    point = np.array([0.3])
    d2 = ((x - point) ** 2).sum(axis=1)
    neighbor_scores = np.sort(cal.scores[np.argsort(d2, kind="stable")[:k]])
    index = math.ceil((k + 1) * (1 - alpha))
    expected = neighbor_scores[index - 1] if index <= k else math.inf
    assert weighted_threshold(cal, point) == pytest.approx(expected, abs=1e-9)


def test_weighted_conservative_on_exchangeable_data():
    rng = np.random.default_rng(23)

    def draw(n):
        y = (rng.random(n) < 0.4).astype(int)
        x = rng.standard_normal((n, 2)) + y[:, None] * 1.2
        return x, y

    from linkguard.probes import TrainConfig, train_layer_classifier

    x_train, y_train = draw(600)
    clf = train_layer_classifier(x_train, y_train, TrainConfig(hidden_width=16, epochs=150, seed=0))
    x_cal, y_cal = draw(800)
    x_test, y_test = draw(1500)
    alpha = 0.2
    cal = calibrate_weighted(clf, x_cal, y_cal, alpha=alpha)
    hits = 0
    for i in range(x_test.shape[0]):
        if y_test[i] in predict_set_weighted(cal, clf, x_test[i]):
            hits += 1
    assert hits / x_test.shape[0] >= 1 - alpha  # conservative under exchangeability


def test_prediction_set_dispatch():
    rng = np.random.default_rng(4)
    clf = linear_probe()
    x = rng.standard_normal((30, 1))
    y = rng.integers(0, 2, size=30)
    exch = calibrate_exchangeable(clf, x, y, 0.2)
    weighted = calibrate_weighted(clf, x, y, 0.2, n_neighbors=10)
    point = np.array([0.1])
    assert prediction_set(exch, clf, point) == predict_set_exchangeable(exch, clf, point)
    assert prediction_set(weighted, clf, point) == predict_set_weighted(weighted, clf, point)
