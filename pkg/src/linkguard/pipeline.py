"""End-to-end fitting: traces -> per-layer classifiers -> calibrated detector."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .conformal import ConformalCalibrator, calibrate_exchangeable, calibrate_weighted
from .detector import BranchDetector
from .probes import LayerClassifier, TrainConfig, select_top_k_layers, train_layer_classifier
from .traces import BranchDataset, GenerationTrace, build_branch_dataset, split_dataset


def fit_classifiers(
    train: BranchDataset, config: TrainConfig = TrainConfig()
) -> dict[int, LayerClassifier]:
    """One classifier per layer, each trained with its own derived seed."""
    classifiers: dict[int, LayerClassifier] = {}
    for layer in range(train.n_layers):
        vectors, labels = train.layer_pairs(layer)
        layer_config = TrainConfig(
            hidden_width=config.hidden_width,
            epochs=config.epochs,
            learning_rate=config.learning_rate,
            class_weighting=config.class_weighting,
            seed=config.seed * 1000 + layer,
        )
        classifiers[layer] = train_layer_classifier(vectors, labels, layer_config, layer)
    return classifiers


def calibrate_classifiers(
    classifiers: dict[int, LayerClassifier],
    calibration: BranchDataset,
    alpha: float,
    mode: str = "exchangeable",
    n_neighbors: int | None = None,
    tau: float | None = None,
) -> dict[int, ConformalCalibrator]:
    calibrators: dict[int, ConformalCalibrator] = {}
    for layer, clf in classifiers.items():
        vectors, labels = calibration.layer_pairs(layer)
        if mode == "exchangeable":
            calibrators[layer] = calibrate_exchangeable(clf, vectors, labels, alpha)
        elif mode == "weighted":
            calibrators[layer] = calibrate_weighted(
                clf, vectors, labels, alpha, n_neighbors=n_neighbors, tau=tau
            )
        else:
            raise ValueError(f"unknown calibration mode {mode!r}")
    return calibrators


@dataclass
class FitResult:
    detector: BranchDetector
    train: BranchDataset
    calibration: BranchDataset


def fit_detector(
    traces: Sequence[GenerationTrace],
    *,
    alpha: float = 0.1,
    k: int = 5,
    calib_fraction: float = 0.5,
    mode: str = "exchangeable",
    train_config: TrainConfig = TrainConfig(),
    split_seed: int = 17,
    base_seed: int = 0,
    method: str = "permutation",
    theta: float = 0.5,
) -> FitResult:
    """Fit the full detector from teacher-forcing traces."""
    dataset = build_branch_dataset(traces)
    train, calibration = split_dataset(dataset, calib_fraction, split_seed)
    classifiers = fit_classifiers(train, train_config)
    calibrators = calibrate_classifiers(classifiers, calibration, alpha, mode)
    selection = select_top_k_layers(
        [classifiers[j] for j in sorted(classifiers)], calibration, k
    )
    detector = BranchDetector(
        classifiers=classifiers,
        calibrators=calibrators,
        selection=selection,
        base_seed=base_seed,
        method=method,
        theta=theta,
    )
    return FitResult(detector, train, calibration)
