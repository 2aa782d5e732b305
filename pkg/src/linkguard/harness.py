"""Policy evaluation and Monte-Carlo validation of the coverage guarantees.

Two kinds of driver live here. ``evaluate_policies`` runs simulated instances
under each abstention policy, replays every instance once more with detection
disabled to learn whether the model would have been right anyway, and
aggregates exact match, abstention, TAR and FAR. ``validate_theorems`` and
``coverage_sweep`` check the statistical machinery directly: empirical
coverage of split conformal sets against its guaranteed level, miss rates of
the vote and permutation aggregates against their bounds under independent,
identical and mixed layer dependence, the deterministic vote-size bound, and
subset dominance of the permutation aggregate.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .aggregate import (
    majority_vote,
    random_permutation_aggregate,
    vote_at_least_half,
    vote_size_bound,
)
from .conformal import calibrate_exchangeable, sets_exchangeable_batch
from .detector import BranchDetector, NeverFireDetector, OracleDetector
from .metrics import coverage_ear, set_metrics, tar_far
from .pipeline import calibrate_classifiers, fit_classifiers
from .probes import TrainConfig, predict_probs, select_top_k_layers, train_layer_classifier
from .runtime import STATUS_ABSTAINED, LinkRun, drive_with_responder
from .simulate import SimConfig, SimWorld
from .traces import build_branch_dataset, split_dataset

# -- policy evaluation ----------------------------------------------------------


@dataclass
class PolicyResult:
    policy: str
    n_instances: int
    abstention_rate: float
    tar: float
    far: float
    em: float | None  # exact match over non-abstained instances
    precision: float | None
    recall: float | None
    em_halfwidth: float | None  # 3-sigma normal approximation

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    config: dict
    seeds: list[int]
    detector_info: dict
    coverage: float | None
    ear: float
    policies: dict[str, PolicyResult]
    per_seed: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "config": self.config,
            "seeds": self.seeds,
            "detector": self.detector_info,
            "coverage": self.coverage,
            "ear": self.ear,
            "policies": {name: res.to_dict() for name, res in self.policies.items()},
            "per_seed": self.per_seed,
        }
        return out


def _em_flags(outcome, instance, link_columns: bool) -> tuple[float, float, float]:
    em, precision, recall = set_metrics(instance.gt_tables, outcome.tables)
    if link_columns and em == 1.0:
        for table in instance.gt_tables:
            gt_cols = instance.gt_columns[table]
            got = outcome.columns.get(table, [])
            col_em, _, _ = set_metrics(gt_cols, got)
            if col_em != 1.0:
                em = 0.0
                break
    return em, precision, recall


def _run_instance(world: SimWorld, index: int, policy: str, detector, link_columns: bool):
    instance = world.instances[index]
    model = world.table_model(index)
    if detector == "oracle":
        table_detector = OracleDetector(model)
        column_detector = lambda table, column_model: OracleDetector(column_model)  # noqa: E731
    elif isinstance(detector, OracleDetector):
        table_detector = detector
        column_detector = lambda table, column_model: OracleDetector(column_model)  # noqa: E731
    else:
        table_detector = detector
        column_detector = detector
    run = LinkRun(
        model,
        table_detector,
        world.catalog,
        policy,
        column_factory=world.column_factory(index) if link_columns else None,
        column_detector=column_detector if link_columns else None,
        surrogate=world.surrogate(index) if policy == "surrogate" else None,
        question=instance.question,
        link_columns=link_columns,
    )
    if policy == "human":
        drive_with_responder(run, world.oracle_responder(index))
    else:
        run.start()
    return run.outcome()


def detector_token_metrics(world: SimWorld, detector) -> tuple[float | None, float]:
    """Pooled coverage/EAR of the detector over the world's teacher-forcing traces."""
    predicted: list[int] = []
    truth: list[int] = []
    for trace in world.make_traces():
        for i in range(len(trace.gen_tokens)):
            decision = detector.decide(i, trace.gt_tokens[:i], trace.gen_tokens[i], trace.hidden[i])
            predicted.append(1 if decision.fire else 0)
            truth.append(trace.labels[i])
    return coverage_ear(predicted, truth)


def evaluate_policies(
    config: SimConfig,
    detector,
    policies: Sequence[str],
    seeds: Sequence[int],
    n_instances: int,
    *,
    link_columns: bool = False,
    measure_detector: bool = True,
) -> EvalReport:
    """Run every instance under each policy and aggregate the abstention metrics.

    The would-be-correct flag for TAR/FAR comes from replaying the identical
    instance with detection disabled; the simulator's per-position randomness
    makes that replay token-identical to the counterfactual unabstained run.
    """
    per_policy: dict[str, dict[str, list[float]]] = {
        p: {"abstained": [], "correct": [], "em": [], "precision": [], "recall": []}
        for p in policies
    }
    per_seed_rows: list[dict] = []
    coverage_acc: list[float] = []
    ear_acc: list[float] = []

    for seed in seeds:
        world = SimWorld(replace(config, seed=int(seed)), n_instances)
        seed_stats = {
            p: {"abstained": 0, "correct_when_run": 0, "run": 0, "tar": 0, "far": 0}
            for p in policies
        }
        for index in range(n_instances):
            instance = world.instances[index]
            baseline = _run_instance(world, index, "abstain", NeverFireDetector(), link_columns)
            base_em, _, _ = _em_flags(baseline, instance, link_columns)
            would_be_correct = base_em == 1.0
            for policy in policies:
                outcome = _run_instance(world, index, policy, detector, link_columns)
                abstained = outcome.status == STATUS_ABSTAINED
                stats = per_policy[policy]
                stats["abstained"].append(1.0 if abstained else 0.0)
                stats["correct"].append(1.0 if would_be_correct else 0.0)
                if not abstained:
                    em, precision, recall = _em_flags(outcome, instance, link_columns)
                    stats["em"].append(em)
                    stats["precision"].append(precision)
                    stats["recall"].append(recall)
                    seed_stats[policy]["run"] += 1
                    seed_stats[policy]["correct_when_run"] += int(em == 1.0)
                else:
                    seed_stats[policy]["abstained"] += 1
                    seed_stats[policy]["far" if would_be_correct else "tar"] += 1
        row = {"seed": int(seed)}
        for policy in policies:
            run_count = seed_stats[policy]["run"]
            row[policy] = {
                "abstention_rate": seed_stats[policy]["abstained"] / n_instances,
                "tar": seed_stats[policy]["tar"] / n_instances,
                "far": seed_stats[policy]["far"] / n_instances,
                "em": (seed_stats[policy]["correct_when_run"] / run_count) if run_count else None,
            }
        per_seed_rows.append(row)
        if measure_detector and isinstance(detector, BranchDetector):
            cov, ear = detector_token_metrics(world, detector)
            if cov is not None:
                coverage_acc.append(cov)
            ear_acc.append(ear)

    results: dict[str, PolicyResult] = {}
    for policy in policies:
        stats = per_policy[policy]
        n_total = len(stats["abstained"])
        tar, far = tar_far(
            [int(a) for a in stats["abstained"]], [int(c) for c in stats["correct"]]
        )
        n_run = len(stats["em"])
        em = float(np.mean(stats["em"])) if n_run else None
        halfwidth = (
            3.0 * math.sqrt(max(em * (1 - em), 1e-12) / n_run) if em is not None and n_run else None
        )
        results[policy] = PolicyResult(
            policy=policy,
            n_instances=n_total,
            abstention_rate=float(np.mean(stats["abstained"])),
            tar=tar,
            far=far,
            em=em,
            precision=float(np.mean(stats["precision"])) if n_run else None,
            recall=float(np.mean(stats["recall"])) if n_run else None,
            em_halfwidth=halfwidth,
        )

    detector_info = {"type": detector if isinstance(detector, str) else type(detector).__name__}
    if isinstance(detector, BranchDetector):
        detector_info.update(
            {
                "alpha": detector.alpha,
                "k": detector.selection.k,
                "layers": detector.selection.layers,
                "method": detector.method,
            }
        )
    return EvalReport(
        config=config.to_dict(),
        seeds=[int(s) for s in seeds],
        detector_info=detector_info,
        coverage=float(np.mean(coverage_acc)) if coverage_acc else None,
        ear=float(np.mean(ear_acc)) if ear_acc else 0.0,
        policies=results,
        per_seed=per_seed_rows,
    )


# -- Monte-Carlo bound validation -------------------------------------------------


def _draw_regime(
    regime: str, trials: int, k: int, alpha: float, other_rate: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """(miss, other) boolean matrices [trials, k]: true label excluded / other included."""
    if regime == "independent":
        miss = rng.random((trials, k)) < alpha
        other = rng.random((trials, k)) < other_rate
    elif regime == "identical":
        miss = np.repeat(rng.random((trials, 1)) < alpha, k, axis=1)
        other = np.repeat(rng.random((trials, 1)) < other_rate, k, axis=1)
    elif regime == "mixture":
        shared = rng.random(trials) < 0.5
        miss_i = rng.random((trials, k)) < alpha
        other_i = rng.random((trials, k)) < other_rate
        miss_s = np.repeat(rng.random((trials, 1)) < alpha, k, axis=1)
        other_s = np.repeat(rng.random((trials, 1)) < other_rate, k, axis=1)
        miss = np.where(shared[:, None], miss_s, miss_i)
        other = np.where(shared[:, None], other_s, other_i)
    else:
        raise ValueError(f"unknown regime {regime!r}")
    return miss, other


def _permutation_membership(
    in_true: np.ndarray,
    in_other: np.ndarray,
    rng: np.random.Generator | None,
    perm: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Membership of (true label, other label) in the permutation aggregate, vectorized."""
    trials, k = in_true.shape
    if perm is None:
        perm = np.argsort(rng.random((trials, k)), axis=1)
    true_p = np.take_along_axis(in_true, perm, axis=1)
    other_p = np.take_along_axis(in_other, perm, axis=1)
    prefix = np.arange(1, k + 1)
    keep_true = (2 * np.cumsum(true_p, axis=1) >= prefix).all(axis=1)
    keep_other = (2 * np.cumsum(other_p, axis=1) >= prefix).all(axis=1)
    return keep_true, keep_other


@dataclass
class TheoremReport:
    trials: int
    alpha: float
    k: int
    rows: list[dict]
    size_bound_violations: int
    dominance_violations: int
    ear_dominance_violations: int

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def all_within_bounds(self) -> bool:
        ok = all(row["within_bound"] for row in self.rows)
        return ok and not (
            self.size_bound_violations or self.dominance_violations or self.ear_dominance_violations
        )


def validate_theorems(
    trials: int = 100_000,
    alpha: float = 0.1,
    k: int = 5,
    thetas: Sequence[float] = (0.3, 0.5, 0.7),
    seed: int = 2024,
    other_rate: float = 0.3,
    tolerance: float = 0.02,
) -> TheoremReport:
    """Monte-Carlo check of the aggregation guarantees under controlled dependence.

    Per-layer sets are synthesized to miss the true label with probability
    alpha (independent, identical, or a mixture across layers). Checked, each
    at ``tolerance`` slack: vote miss rate at most alpha/(1-theta); permutation
    miss rate at most 2*alpha in all regimes and at most alpha for identical
    sets. The deterministic claims (vote size bound, permutation inside the
    at-least-half vote, per-token spurious-flag dominance) must hold with zero
    violations, including over adversarially random set families.
    """
    rng = np.random.default_rng(seed)
    rows: list[dict] = []
    dominance_violations = 0
    ear_dominance_violations = 0

    for regime in ("independent", "identical", "mixture"):
        miss, other = _draw_regime(regime, trials, k, alpha, other_rate, rng)
        in_true = ~miss
        count_true = in_true.sum(axis=1)
        count_other = other.sum(axis=1)

        for theta in thetas:
            miss_vote = float(np.mean(count_true <= theta * k))
            bound = alpha / (1.0 - theta)
            rows.append(
                {
                    "check": "vote_miss",
                    "regime": regime,
                    "theta": theta,
                    "miss_rate": miss_vote,
                    "bound": bound,
                    "within_bound": miss_vote <= bound + tolerance,
                }
            )

        keep_true, keep_other = _permutation_membership(in_true, other, rng)
        miss_pi = float(np.mean(~keep_true))
        pi_bound = alpha if regime == "identical" else 2 * alpha
        rows.append(
            {
                "check": "permutation_miss",
                "regime": regime,
                "theta": 0.5,
                "miss_rate": miss_pi,
                "bound": pi_bound,
                "within_bound": miss_pi <= pi_bound + tolerance,
            }
        )
        if regime == "independent":
            # at theta = 1/2 independent sets obey the exponential tail as well
            hoeffding = math.exp(-2 * k * (0.5 - alpha) ** 2)
            miss_half = float(np.mean(count_true < k / 2.0))
            rows.append(
                {
                    "check": "independent_half_vote_miss",
                    "regime": regime,
                    "theta": 0.5,
                    "miss_rate": miss_half,
                    "bound": hoeffding,
                    "within_bound": miss_half <= hoeffding + tolerance,
                }
            )

        # deterministic claims on the same draws
        in_half_true = 2 * count_true >= k
        in_half_other = 2 * count_other >= k
        dominance_violations += int(np.sum(keep_true & ~in_half_true))
        dominance_violations += int(np.sum(keep_other & ~in_half_other))
        # spurious flags: label "other" plays the branch label on non-branch tokens
        ear_dominance_violations += int(np.sum(keep_other > in_half_other))

    size_bound_violations = _size_bound_trial(rng, trials=trials)

    return TheoremReport(
        trials=trials,
        alpha=alpha,
        k=k,
        rows=rows,
        size_bound_violations=size_bound_violations,
        dominance_violations=dominance_violations,
        ear_dominance_violations=ear_dominance_violations,
    )


def _size_bound_trial(rng: np.random.Generator, trials: int) -> int:
    """Adversarial vote-size-bound check: uniform random set families, random theta."""
    violations = 0
    ks = rng.integers(1, 10, size=trials)
    thetas = rng.uniform(0.05, 0.95, size=trials)
    # draw per-trial memberships lazily in chunks to keep memory flat
    for start in range(0, trials, 10_000):
        stop = min(start + 10_000, trials)
        for t in range(start, stop):
            k = int(ks[t])
            member = rng.random((k, 2)) < 0.5
            theta = float(thetas[t])
            count = member.sum(axis=0)
            size_vote = int(np.sum(count > theta * k))
            bound = int(np.floor(count.sum() / (k * theta)))
            if size_vote > bound:
                violations += 1
    return violations


def spot_check_aggregates(seed: int = 5, cases: int = 200) -> bool:
    """Cross-check the vectorized Monte-Carlo membership against the set functions."""
    rng = np.random.default_rng(seed)
    for _ in range(cases):
        k = int(rng.integers(1, 9))
        miss = rng.random((1, k)) < 0.4
        other = rng.random((1, k)) < 0.4
        sets = [
            frozenset(([1] if not miss[0, i] else []) + ([0] if other[0, i] else []))
            for i in range(k)
        ]
        perm_seed = int(rng.integers(0, 2**31))
        agg = random_permutation_aggregate(sets, perm_seed)
        # replay the exact permutation the set-level function drew
        perm = np.random.default_rng(perm_seed).permutation(k)[None, :]
        keep_true, keep_other = _permutation_membership(~miss, other, None, perm=perm)
        if (1 in agg) != bool(keep_true[0]) or (0 in agg) != bool(keep_other[0]):
            return False
        half = vote_at_least_half(sets)
        if not agg <= half:
            return False
        majority_vote(sets, 0.5)
        vote_size_bound(sets, 0.5)
    return True


# -- split-conformal coverage sweep ---------------------------------------------


def coverage_sweep(
    alphas: Sequence[float],
    n_cal: int = 2000,
    n_test: int = 5000,
    seed: int = 0,
    dim: int = 8,
    delta: float = 1.5,
    pos_rate: float = 0.3,
    n_train: int = 2000,
    train_config: TrainConfig | None = None,
) -> list[dict]:
    """Empirical coverage of exchangeable prediction sets on synthetic data.

    Calibration and test points are drawn i.i.d. from the same two-Gaussian
    mixture, so the marginal guarantee applies; one classifier and one score
    vector serve every error level.
    """
    rng = np.random.default_rng(seed)
    direction = np.ones(dim) / np.sqrt(dim)

    def draw(n: int) -> tuple[np.ndarray, np.ndarray]:
        y = (rng.random(n) < pos_rate).astype(np.int64)
        x = rng.standard_normal((n, dim))
        x = x + (y[:, None] * delta) * direction[None, :]
        return x, y

    x_train, y_train = draw(n_train)
    x_cal, y_cal = draw(n_cal)
    x_test, y_test = draw(n_test)
    config = train_config or TrainConfig(hidden_width=32, epochs=200, seed=seed)
    clf = train_layer_classifier(x_train, y_train, config)

    rows: list[dict] = []
    for alpha in alphas:
        calibrator = calibrate_exchangeable(clf, x_cal, y_cal, float(alpha))
        member = sets_exchangeable_batch(calibrator, clf, x_test)
        covered = member[np.arange(n_test), y_test]
        rows.append(
            {
                "alpha": float(alpha),
                "coverage": float(np.mean(covered)),
                "guaranteed": 1.0 - float(alpha),
                "avg_set_size": float(member.sum(axis=1).mean()),
                "threshold": calibrator.epsilon,
                "n_cal": n_cal,
                "n_test": n_test,
            }
        )
    return rows


# -- spurious-flag stability across k ---------------------------------------------


def ear_by_k(
    ks: Sequence[int] = (1, 3, 5, 7, 9),
    alpha: float = 0.1,
    config: SimConfig | None = None,
    n_train_instances: int = 400,
    n_eval_instances: int = 200,
    train_config: TrainConfig | None = None,
    seed: int = 0,
) -> list[dict]:
    """Spurious-flag rate of both aggregation rules as the layer count grows.

    Uses a world whose layer quality degrades from strong through middling to
    useless, so growing k drags noisy sets into the aggregate; permutation
    intersection suppresses them while the at-least-half vote does not.
    """
    if config is None:
        config = SimConfig(
            n_layers=11,
            layer_separation=(5.0, 5.0, 5.0) + (1.2,) * 6 + (0.0, 0.0),
            layer_correlation=0.0,
            seed=seed,
        )
    world = SimWorld(config, n_train_instances)
    dataset = build_branch_dataset(world.make_traces())
    train, calibration = split_dataset(dataset, 0.5, seed=17)
    classifiers = fit_classifiers(train, train_config or TrainConfig())
    calibrators = calibrate_classifiers(classifiers, calibration, alpha)
    ranking = select_top_k_layers(
        [classifiers[j] for j in sorted(classifiers)], calibration, k=config.n_layers
    )

    eval_world = SimWorld(replace(config, seed=config.seed + 1), n_eval_instances)
    token_sets: list[dict[int, frozenset]] = []
    token_labels: list[int] = []
    token_positions: list[int] = []
    for trace in eval_world.make_traces():
        for i in range(len(trace.gen_tokens)):
            per_layer = {
                j: frozenset(
                    y
                    for y in (0, 1)
                    if predict_probs(classifiers[j], trace.hidden[i, j])[y]
                    >= 1.0 - calibrators[j].epsilon
                )
                for j in range(config.n_layers)
            }
            token_sets.append(per_layer)
            token_labels.append(trace.labels[i])
            token_positions.append(i)

    rows: list[dict] = []
    for k in ks:
        layers = [idx for idx, _ in ranking.ranked[:k]]
        flags_perm: list[int] = []
        flags_half: list[int] = []
        for per_layer, position in zip(token_sets, token_positions):
            sets = [per_layer[j] for j in layers]
            flags_perm.append(1 if 1 in random_permutation_aggregate(sets, (seed, position)) else 0)
            flags_half.append(1 if 1 in vote_at_least_half(sets) else 0)
        cov_p, ear_p = coverage_ear(flags_perm, token_labels)
        cov_h, ear_h = coverage_ear(flags_half, token_labels)
        rows.append(
            {
                "k": int(k),
                "ear_permutation": ear_p,
                "ear_half_vote": ear_h,
                "coverage_permutation": cov_p,
                "coverage_half_vote": cov_h,
            }
        )
    return rows


# -- report output -----------------------------------------------------------------


def write_summary(payload: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(payload, indent=1, default=str) + "\n", encoding="utf-8")


def write_rows_jsonl(rows: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, default=str) + "\n")


def write_rows_csv(rows: Sequence[dict], path: str | Path) -> None:
    if not rows:
        Path(path).write_text("", encoding="utf-8")
        return
    keys = list(rows[0].keys())
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
