import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from linkguard.traces import (
    BranchDataset,
    GenerationTrace,
    ReplayBudgetError,
    TraceFormatError,
    build_branch_dataset,
    find_branching_points,
    read_traces,
    split_dataset,
    write_traces,
)


def make_trace(trace_id="t", m=3, n=2, d=4, labels=None, seed=0):
    rng = np.random.default_rng(seed)
    labels = labels if labels is not None else [0] * m
    return GenerationTrace(
        trace_id,
        "q?",
        frozenset({"a"}),
        list(range(m)),
        list(range(m)),
        labels,
        rng.standard_normal((m, n, d)).astype(np.float32),
    )


# -- find_branching_points -------------------------------------------------------


def test_replay_identity_case(scripted_model_factory):
    gt = [5, 6, 7]
    model = scripted_model_factory(gt)
    branches, trace = find_branching_points(model, gt)
    assert branches == []
    assert trace.labels == [0, 0, 0]
    assert trace.gen_tokens == gt


def test_replay_two_branches(scripted_model_factory):
    # gt=[a,b,c,d]; the model emits a,X (b forced), then c,Y (d forced)
    a, b, c, d, x, y = 1, 2, 3, 4, 8, 9
    model = scripted_model_factory([a, x, c, y])
    branches, trace = find_branching_points(model, [a, b, c, d])
    assert branches == [1, 3]
    assert trace.labels == [0, 1, 0, 1]
    assert trace.gen_tokens == [a, x, c, y]
    assert trace.gt_tokens == [a, b, c, d]


def test_replay_first_token_deviation(scripted_model_factory):
    model = scripted_model_factory([7])
    branches, _ = find_branching_points(model, [1])
    assert branches == [0]


def test_replay_budget_error_carries_partial(scripted_model_factory):
    model = scripted_model_factory([1, 2, 3, 4])
    with pytest.raises(ReplayBudgetError) as err:
        find_branching_points(model, [1, 2, 3, 4], max_rounds=2)
    assert len(err.value.partial.gen_tokens) == 2


def test_forcing_replay_matches_gt(scripted_model_factory):
    # forcing the branch indices always reproduces the ground truth
    gt = [3, 1, 4, 1, 5]
    model = scripted_model_factory([3, 9, 4, 9, 5])
    branches, trace = find_branching_points(model, gt)
    replayed = [g if i in branches else trace.gen_tokens[i] for i, g in enumerate(gt)]
    assert replayed == gt
    assert [i for i, s in enumerate(trace.labels) if s] == branches


def test_empty_gt_rejected(scripted_model_factory):
    with pytest.raises(ValueError):
        find_branching_points(scripted_model_factory([]), [])


# -- build_branch_dataset ---------------------------------------------------------


def test_dataset_counts_single_trace():
    ds = build_branch_dataset([make_trace(m=3, n=2, labels=[0, 1, 0])])
    assert len(ds) == 3
    for layer in range(2):
        vectors, labels = ds.layer_pairs(layer)
        assert vectors.shape == (3, 4)
        assert labels.shape == (3,)


def test_dataset_counts_two_traces():
    ds = build_branch_dataset([make_trace(m=2, labels=[0, 1]), make_trace(m=4, seed=1)])
    assert len(ds) == 6


def test_single_class_dataset_warns():
    with pytest.warns(UserWarning, match="single class"):
        build_branch_dataset([make_trace(m=3, labels=[0, 0, 0])])


def test_mismatched_layer_count_rejected():
    with pytest.raises(TraceFormatError, match="hidden"):
        build_branch_dataset([make_trace(n=2), make_trace(trace_id="other", n=3)])


# -- split_dataset ----------------------------------------------------------------


def split_fixture(n_pos=10, n_neg=90, seed=3):
    rng = np.random.default_rng(seed)
    labels = np.array([1] * n_pos + [0] * n_neg, dtype=np.int8)
    hidden = rng.standard_normal((n_pos + n_neg, 2, 3)).astype(np.float32)
    return BranchDataset(hidden, labels)


def test_split_half_and_deterministic():
    ds = split_fixture()
    t1, c1 = split_dataset(ds, 0.5, seed=7)
    t2, c2 = split_dataset(ds, 0.5, seed=7)
    assert len(t1) == len(c1) == 50
    assert t1.hidden.tobytes() == t2.hidden.tobytes()
    assert c1.labels.tobytes() == c2.labels.tobytes()


def test_split_is_stratified():
    ds = split_fixture(n_pos=10, n_neg=90)
    train, calib = split_dataset(ds, 0.5, seed=11)
    assert abs(int((calib.labels == 1).sum()) - 5) <= 1
    assert abs(int((train.labels == 1).sum()) - 5) <= 1


def test_split_disjoint_exhaustive():
    ds = split_fixture()
    train, calib = split_dataset(ds, 0.3, seed=0)
    assert len(train) + len(calib) == len(ds)
    combined = np.concatenate([train.hidden, calib.hidden])
    assert combined.shape[0] == ds.hidden.shape[0]


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.2, 1.5])
def test_split_fraction_bounds(fraction):
    with pytest.raises(ValueError):
        split_dataset(split_fixture(), fraction, seed=0)


# -- trace file round trip ---------------------------------------------------------


def test_round_trip_bit_exact(tmp_path):
    traces = [make_trace("a", m=4, labels=[0, 1, 0, 1]), make_trace("b", m=2, seed=5)]
    path = tmp_path / "traces.jsonl"
    write_traces(traces, path)
    loaded = read_traces(path)
    assert len(loaded) == 2
    for orig, back in zip(traces, loaded):
        assert back.id == orig.id
        assert back.gt_tables == orig.gt_tables
        assert back.gt_tokens == orig.gt_tokens
        assert back.gen_tokens == orig.gen_tokens
        assert back.labels == orig.labels
        assert back.hidden.tobytes() == orig.hidden.tobytes()


def test_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert read_traces(path) == []


def test_labels_length_mismatch_names_field(tmp_path):
    record = {
        "id": "bad1",
        "question": "",
        "gt_tables": [],
        "gt_tokens": [1, 2],
        "gen_tokens": [1, 2],
        "labels": [0],
        "hidden": [[[0.0]], [[0.0]]],
    }
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(TraceFormatError, match="labels") as err:
        read_traces(path)
    assert err.value.record_id == "bad1"


def test_missing_field_named(tmp_path):
    record = {"id": "bad2", "question": "", "gt_tables": [], "gt_tokens": [], "gen_tokens": [], "labels": []}
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(TraceFormatError, match="hidden"):
        read_traces(path)


def test_ragged_hidden_rejected(tmp_path):
    record = {
        "id": "bad3",
        "question": "",
        "gt_tables": [],
        "gt_tokens": [1],
        "gen_tokens": [1],
        "labels": [0],
        "hidden": [[[0.0, 1.0], [0.0]]],
    }
    path = tmp_path / "bad.jsonl"
    path.write_text(json.dumps(record) + "\n", encoding="utf-8")
    with pytest.raises(TraceFormatError, match="hidden"):
        read_traces(path)


@settings(max_examples=25, deadline=None)
@given(
    m=st.integers(1, 6),
    n=st.integers(1, 4),
    d=st.integers(1, 5),
    seed=st.integers(0, 10_000),
)
def test_round_trip_property(tmp_path_factory, m, n, d, seed):
    rng = np.random.default_rng(seed)
    trace = GenerationTrace(
        f"p{seed}",
        "q",
        frozenset({"t"}),
        rng.integers(0, 50, size=m).tolist(),
        rng.integers(0, 50, size=m).tolist(),
        rng.integers(0, 2, size=m).tolist(),
        (rng.standard_normal((m, n, d)) * 10).astype(np.float32),
    )
    path = tmp_path_factory.mktemp("rt") / "t.jsonl"
    write_traces([trace], path)
    back = read_traces(path)[0]
    assert back.gt_tokens == trace.gt_tokens
    assert back.labels == trace.labels
    assert back.hidden.tobytes() == trace.hidden.tobytes()
