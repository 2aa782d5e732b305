import pytest
from hypothesis import given
from hypothesis import strategies as st

from linkguard.metrics import coverage_ear, set_metrics, tar_far


# -- set metrics -------------------------------------------------------------


def test_set_metrics_partial_overlap():
    assert set_metrics({"a", "b"}, {"a", "c"}) == (0.0, 0.5, 0.5)


def test_set_metrics_exact():
    assert set_metrics({"a", "b"}, {"b", "a"}) == (1.0, 1.0, 1.0)


def test_set_metrics_empty_prediction():
    assert set_metrics({"a"}, set()) == (0.0, 0.0, 0.0)


def test_set_metrics_requires_ground_truth():
    with pytest.raises(ValueError):
        set_metrics(set(), {"a"})


# -- coverage / EAR -----------------------------------------------------------


def test_coverage_ear_example():
    coverage, ear = coverage_ear([1, 0, 1, 0], [1, 0, 0, 0])
    assert coverage == 1.0
    assert ear == 0.25


def test_coverage_ear_perfect():
    assert coverage_ear([0, 1, 0], [0, 1, 0]) == (1.0, 0.0)


def test_coverage_zero_when_all_missed():
    coverage, ear = coverage_ear([0, 0, 0], [0, 1, 1])
    assert coverage == 0.0
    assert ear == 0.0


def test_coverage_undefined_without_branches():
    coverage, ear = coverage_ear([0, 1, 0], [0, 0, 0])
    assert coverage is None
    assert ear == pytest.approx(1 / 3)


def test_coverage_length_mismatch():
    with pytest.raises(ValueError):
        coverage_ear([1], [1, 0])


# -- TAR / FAR ------------------------------------------------------------------


def test_tar_far_example():
    tar, far = tar_far([1, 1, 0, 0], [0, 1, 1, 0])
    assert tar == 0.25
    assert far == 0.25


def test_tar_far_never_abstain():
    assert tar_far([0, 0, 0], [1, 0, 1]) == (0.0, 0.0)


def test_tar_far_always_abstain_never_correct():
    assert tar_far([1, 1], [0, 0]) == (1.0, 0.0)


@given(
    flags=st.lists(st.tuples(st.integers(0, 1), st.integers(0, 1)), min_size=1, max_size=50)
)
def test_tar_far_sums_to_abstention_rate(flags):
    abstained = [a for a, _ in flags]
    correct = [c for _, c in flags]
    tar, far = tar_far(abstained, correct)
    assert tar + far == pytest.approx(sum(abstained) / len(abstained))
