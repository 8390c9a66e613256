"""Region-pooled energy features and a one-vs-rest linear max-margin
classifier for pre-defined crowd activities.

The classifier is a small in-house stochastic subgradient solver (hinge loss
plus L2) so training stays deterministic under a fixed seed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fields import ThermalEnergyField
from .regions import SemanticRegionMap
from .util import SCHEMA_VERSION, dump_json, load_json


def extract_feature(tef: ThermalEnergyField, regions: SemanticRegionMap) -> np.ndarray:
    """Mean energy vector per semantic region, concatenated in region order.

    Produces [Ex_0, Ey_0, Ex_1, Ey_1, ...]; an empty region contributes (0, 0).
    """
    if tef.dims != regions.dims:
        raise ValidationError("field and region map dims differ")
    k = regions.num_regions
    feat = np.zeros(2 * k)
    for r in range(k):
        mask = regions.labels == r
        if mask.any():
            feat[2 * r : 2 * r + 2] = tef.vectors[mask].mean(axis=0)
    return feat


@dataclass
class LinearModel:
    classes: list
    weights: np.ndarray  # (n_classes, feature_length)
    biases: np.ndarray   # (n_classes,)

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ValidationError("model needs at least two classes")
        if not np.all(np.isfinite(self.weights)) or not np.all(np.isfinite(self.biases)):
            raise ValidationError("model parameters must be finite")

    @property
    def feature_length(self) -> int:
        return self.weights.shape[1]

    def to_json(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "classes": list(self.classes),
            "weights": self.weights.tolist(),
            "biases": self.biases.tolist(),
            "feature_length": self.feature_length,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearModel":
        try:
            return cls(
                classes=list(obj["classes"]),
                weights=np.asarray(obj["weights"], dtype=np.float64),
                biases=np.asarray(obj["biases"], dtype=np.float64),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad model file: {exc}") from exc


def save_model(model: LinearModel, path) -> None:
    dump_json(model.to_json(), path)


def load_model(path) -> LinearModel:
    return LinearModel.from_json(load_json(path))


def _solve_binary(X: np.ndarray, y: np.ndarray, epochs: int, reg: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Stochastic subgradient descent on hinge loss + L2 (bias augmented)."""
    n, d = X.shape
    w = np.zeros(d)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (reg * t)
            margin = y[i] * float(w @ X[i])
            w *= 1.0 - eta * reg
            if margin < 1.0:
                w += eta * y[i] * X[i]
    return w


def train(features, labels, epochs: int = 200, reg: float = 1e-3, seed: int = 0) -> LinearModel:
    """Fit one-vs-rest linear classifiers; deterministic for a fixed seed.

    Features are rescaled to unit max-magnitude for the solver (hinge margins
    are meaningless at arbitrary feature scales) and the scale is folded back
    into the stored weights, so prediction sees the raw feature space.
    """
    X = np.asarray(features, dtype=np.float64)
    labs = list(labels)
    if X.ndim != 2 or X.shape[0] != len(labs):
        raise ValidationError("features and labels must align")
    classes = sorted(set(labs))
    if len(classes) < 2:
        raise ValidationError("training needs at least two classes")
    scale = float(np.abs(X).max())
    if scale == 0.0:
        scale = 1.0
    Xa = np.hstack([X / scale, np.ones((X.shape[0], 1))])
    rng = np.random.default_rng(seed)
    weights = np.zeros((len(classes), X.shape[1]))
    biases = np.zeros(len(classes))
    for ci, c in enumerate(classes):
        y = np.where(np.asarray(labs, dtype=object) == c, 1.0, -1.0).astype(np.float64)
        w = _solve_binary(Xa, y, epochs, reg, rng)
        weights[ci] = w[:-1] / scale
        biases[ci] = w[-1]
    return LinearModel(classes=classes, weights=weights, biases=biases)


def predict(model: LinearModel, feature) -> object:
    """Class with the highest linear score; ties break to the lowest class id."""
    f = np.asarray(feature, dtype=np.float64)
    if f.shape != (model.feature_length,):
        raise ValidationError(
            f"feature length {f.shape} does not match model ({model.feature_length})"
        )
    scores = model.weights @ f + model.biases
    return model.classes[int(np.argmax(scores))]
