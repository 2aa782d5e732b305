"""Versioned flat-file persistence for classifiers, calibrators, and selections.

One JSON file carries every trained layer: dims, weights row-major, training
metadata, and (once calibrated) the calibration scores with their threshold
parameters plus the layer selection and aggregation settings. Loading
validates all shapes before handing anything back.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .conformal import ConformalCalibrator
from .detector import BranchDetector
from .probes import LayerClassifier, LayerSelection

STORE_FORMAT = "branch-detector"
STORE_VERSION = 1


class StoreFormatError(ValueError):
    """The persisted file is malformed or shape-inconsistent."""


def _classifier_payload(clf: LayerClassifier) -> dict:
    return {
        "layer_index": clf.layer_index,
        "dim": clf.dim,
        "hidden_width": clf.hidden_width,
        "w1": clf.w1.reshape(-1).tolist(),
        "b1": clf.b1.tolist(),
        "w2": clf.w2.reshape(-1).tolist(),
        "b2": clf.b2.tolist(),
        "metadata": {"epochs": clf.epochs, "final_loss": clf.final_loss},
    }


def _calibrator_payload(cal: ConformalCalibrator) -> dict:
    payload = {
        "mode": cal.mode,
        "alpha": cal.alpha,
        "scores": cal.scores.tolist(),
    }
    if cal.mode == "exchangeable":
        payload["epsilon"] = cal.epsilon if np.isfinite(cal.epsilon) else "inf"
    else:
        payload["n_neighbors"] = cal.n_neighbors
        payload["tau"] = cal.tau
        payload["vectors"] = np.asarray(cal.vectors).reshape(-1).tolist()
        payload["vector_dim"] = int(np.asarray(cal.vectors).shape[1])
    return payload


def save_bundle(
    path: str | Path,
    classifiers: dict[int, LayerClassifier],
    calibrators: dict[int, ConformalCalibrator] | None = None,
    selection: LayerSelection | None = None,
    base_seed: int = 0,
    method: str = "permutation",
    theta: float = 0.5,
) -> None:
    layers = []
    for layer in sorted(classifiers):
        entry = _classifier_payload(classifiers[layer])
        if calibrators and layer in calibrators:
            entry["calibration"] = _calibrator_payload(calibrators[layer])
        layers.append(entry)
    payload = {
        "format": STORE_FORMAT,
        "version": STORE_VERSION,
        "layers": layers,
        "selection": (
            {"k": selection.k, "ranked": [[i, a] for i, a in selection.ranked]}
            if selection
            else None
        ),
        "base_seed": base_seed,
        "method": method,
        "theta": theta,
    }
    Path(path).write_text(json.dumps(payload) + "\n", encoding="utf-8")


def _load_classifier(entry: dict) -> LayerClassifier:
    dim = int(entry["dim"])
    width = int(entry["hidden_width"])
    w1 = np.asarray(entry["w1"], dtype=np.float64)
    b1 = np.asarray(entry["b1"], dtype=np.float64)
    w2 = np.asarray(entry["w2"], dtype=np.float64)
    b2 = np.asarray(entry["b2"], dtype=np.float64)
    if w1.size != dim * width:
        raise StoreFormatError(
            f"layer {entry.get('layer_index')}: w1 has {w1.size} values, expected {dim * width}"
        )
    if b1.size != width or w2.size != width * 2 or b2.size != 2:
        raise StoreFormatError(f"layer {entry.get('layer_index')}: weight shapes inconsistent")
    meta = entry.get("metadata", {})
    return LayerClassifier(
        layer_index=int(entry["layer_index"]),
        w1=w1.reshape(dim, width),
        b1=b1,
        w2=w2.reshape(width, 2),
        b2=b2,
        epochs=int(meta.get("epochs", 0)),
        loss_curve=[float(meta["final_loss"])] if "final_loss" in meta else [],
    )


def _load_calibrator(entry: dict, dim: int) -> ConformalCalibrator:
    mode = entry["mode"]
    scores = np.asarray(entry["scores"], dtype=np.float64)
    if mode == "exchangeable":
        eps = entry.get("epsilon", "inf")
        return ConformalCalibrator(
            mode="exchangeable",
            alpha=float(entry["alpha"]),
            scores=scores,
            epsilon=float("inf") if eps == "inf" else float(eps),
        )
    if mode == "weighted":
        vec_dim = int(entry["vector_dim"])
        if vec_dim != dim:
            raise StoreFormatError(f"calibration vector dim {vec_dim} != classifier dim {dim}")
        flat = np.asarray(entry["vectors"], dtype=np.float32)
        if flat.size != scores.size * vec_dim:
            raise StoreFormatError("calibration vectors do not match score count")
        return ConformalCalibrator(
            mode="weighted",
            alpha=float(entry["alpha"]),
            scores=scores,
            vectors=flat.reshape(scores.size, vec_dim),
            n_neighbors=int(entry["n_neighbors"]),
            tau=float(entry["tau"]),
        )
    raise StoreFormatError(f"unknown calibration mode {mode!r}")


def load_bundle(path: str | Path) -> dict:
    """Load a persisted bundle; returns classifiers/calibrators/selection/settings."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise StoreFormatError(f"{path} is not valid JSON: {exc}") from exc
    if payload.get("format") != STORE_FORMAT:
        raise StoreFormatError(f"{path} is not a {STORE_FORMAT} file")
    if payload.get("version") != STORE_VERSION:
        raise StoreFormatError(f"unsupported version {payload.get('version')}")
    classifiers: dict[int, LayerClassifier] = {}
    calibrators: dict[int, ConformalCalibrator] = {}
    for entry in payload["layers"]:
        clf = _load_classifier(entry)
        classifiers[clf.layer_index] = clf
        if entry.get("calibration"):
            calibrators[clf.layer_index] = _load_calibrator(entry["calibration"], clf.dim)
    selection = None
    if payload.get("selection"):
        selection = LayerSelection(
            tuple((int(i), float(a)) for i, a in payload["selection"]["ranked"]),
            int(payload["selection"]["k"]),
        )
    return {
        "classifiers": classifiers,
        "calibrators": calibrators,
        "selection": selection,
        "base_seed": int(payload.get("base_seed", 0)),
        "method": payload.get("method", "permutation"),
        "theta": float(payload.get("theta", 0.5)),
    }


def save_detector(detector: BranchDetector, path: str | Path) -> None:
    save_bundle(
        path,
        detector.classifiers,
        detector.calibrators,
        detector.selection,
        base_seed=detector.base_seed,
        method=detector.method,
        theta=detector.theta,
    )


def load_detector(path: str | Path) -> BranchDetector:
    bundle = load_bundle(path)
    if not bundle["calibrators"] or bundle["selection"] is None:
        raise StoreFormatError(f"{path} holds classifiers only; calibrate before loading a detector")
    return BranchDetector(
        classifiers=bundle["classifiers"],
        calibrators=bundle["calibrators"],
        selection=bundle["selection"],
        base_seed=bundle["base_seed"],
        method=bundle["method"],
        theta=bundle["theta"],
    )
