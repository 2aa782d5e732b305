import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linkguard.aggregate import (
    aggregate_details,
    decide_branching,
    majority_vote,
    random_permutation_aggregate,
    vote_at_least_half,
    vote_size_bound,
)

S = frozenset
sets_strategy = st.lists(
    st.sampled_from([S(), S({0}), S({1}), S({0, 1})]), min_size=1, max_size=9
)


# -- majority vote -----------------------------------------------------------------


def test_vote_example():
    sets = [S({1}), S({1}), S({0, 1})]
    # count(1)=3/3 > 0.5, count(0)=1/3 <= 0.5
    assert majority_vote(sets, 0.5) == {1}


def test_vote_theta_zero_is_union():
    sets = [S({0}), S({1}), S()]
    assert majority_vote(sets, 0.0) == {0, 1}


def test_vote_all_empty():
    assert majority_vote([S(), S(), S()], 0.5) == S()


def test_vote_rejects_empty_input():
    with pytest.raises(ValueError):
        majority_vote([], 0.5)


def test_vote_rejects_bad_theta():
    with pytest.raises(ValueError):
        majority_vote([S({1})], 1.0)


def test_vote_strict_threshold():
    # exactly half is NOT strictly more than theta = 1/2
    sets = [S({1}), S({0})]
    assert majority_vote(sets, 0.5) == S()
    assert vote_at_least_half(sets) == {0, 1}


# -- size bound ---------------------------------------------------------------------


def test_size_bound_example():
    sets = [S({1}), S({0, 1}), S({0}), S({1}), S({1})]  # sizes 1,2,1,1,1
    assert vote_size_bound(sets, 0.5) == 2  # floor(6 / 2.5)


def test_size_bound_full_sets():
    sets = [S({0, 1})] * 5
    assert vote_size_bound(sets, 0.5) == 4
    assert len(majority_vote(sets, 0.5)) == 2


def test_size_bound_single_set():
    assert vote_size_bound([S({0, 1})], 0.5) == 4


def test_size_bound_rejects_zero_theta():
    with pytest.raises(ValueError):
        vote_size_bound([S({1})], 0.0)


@settings(max_examples=300, deadline=None)
@given(sets=sets_strategy, theta=st.floats(0.05, 0.95))
def test_size_bound_property(sets, theta):
    bound = vote_size_bound(sets, theta)
    assert len(majority_vote(sets, theta)) <= bound


# -- random permutation ---------------------------------------------------------------


def hand_permutation_aggregate(sets, order):
    """Prefix rule executed literally for a given order (independent oracle)."""
    result = {0, 1}
    for i in range(1, len(sets) + 1):
        prefix = [sets[j] for j in order[:i]]
        prefix_set = {c for c in (0, 1) if sum(c in s for s in prefix) >= i / 2}
        result &= prefix_set
    return frozenset(result)


def test_permutation_hand_example():
    # C1={0}, C2={0,1}, C3={1} in natural order: prefixes {0}, {0,1}, {0,1}
    sets = [S({0}), S({0, 1}), S({1})]
    assert hand_permutation_aggregate(sets, [0, 1, 2]) == {0}
    # the seeded function must agree with the hand rule on its own permutation
    seed = 99
    perm = np.random.default_rng(seed).permutation(3)
    assert random_permutation_aggregate(sets, seed) == hand_permutation_aggregate(sets, list(perm))


def test_permutation_identical_sets():
    for target in (S(), S({0}), S({1}), S({0, 1})):
        sets = [target] * 4
        for seed in range(5):
            assert random_permutation_aggregate(sets, seed) == target


def test_permutation_single_set():
    for target in (S(), S({0}), S({1}), S({0, 1})):
        assert random_permutation_aggregate([target], seed=0) == target


def test_decide_branching_examples():
    assert decide_branching([S({1})] * 3, seed=0) is True
    assert decide_branching([S({0})] * 3, seed=0) is False
    sets = [S({0}), S({0, 1}), S({1})]
    perm = np.random.default_rng(5).permutation(3)
    expected = 1 in hand_permutation_aggregate(sets, list(perm))
    assert decide_branching(sets, seed=5) is expected


@settings(max_examples=300, deadline=None)
@given(sets=sets_strategy, seed=st.integers(0, 2**31 - 1))
def test_permutation_subset_of_half_vote(sets, seed):
    assert random_permutation_aggregate(sets, seed) <= vote_at_least_half(sets)


@settings(max_examples=200, deadline=None)
@given(sets=sets_strategy, seed=st.integers(0, 2**31 - 1))
def test_permutation_matches_hand_rule(sets, seed):
    perm = np.random.default_rng(seed).permutation(len(sets))
    assert random_permutation_aggregate(sets, seed) == hand_permutation_aggregate(sets, list(perm))


# -- aggregation result ------------------------------------------------------------------


def test_aggregate_details_records_permutation():
    sets = [S({0}), S({0, 1}), S({1})]
    result = aggregate_details(sets, seed=3)
    assert result.rng_name == "pcg64"
    assert sorted(result.permutation) == [0, 1, 2]
    assert result.c_pi <= vote_at_least_half(sets)
    assert result.is_branching == (1 in result.c_pi)
    assert result.c_theta == majority_vote(sets, 0.5)


def test_aggregate_details_seed_reproducible():
    sets = [S({0}), S({1}), S({0, 1}), S({1})]
    a = aggregate_details(sets, seed=17)
    b = aggregate_details(sets, seed=17)
    assert a.permutation == b.permutation
    assert a.c_pi == b.c_pi
