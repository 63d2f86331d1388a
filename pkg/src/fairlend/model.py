"""Logistic scoring model trained by deterministic full-batch gradient descent."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from fairlend.datagen import ApplicantRecord, Population, sigmoid
from fairlend.errors import ConfigError, DivergenceError, TrainingError

ALL_FEATURES = (
    "gender",
    "race",
    "age",
    "income",
    "education_years",
    "credit_score",
    "employment_years",
    "zipcode",
)
PROTECTED_FEATURES = ("gender", "race")


@dataclass(frozen=True)
class FeatureSchema:
    feature_names: tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(self.feature_names)
        object.__setattr__(self, "feature_names", names)
        if not names:
            raise ValueError("feature schema must not be empty")
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate features in schema: {names}")
        unknown = [n for n in names if n not in ALL_FEATURES]
        if unknown:
            raise ValueError(f"unknown features: {unknown}")

    def __len__(self) -> int:
        return len(self.feature_names)

    def __iter__(self):
        return iter(self.feature_names)

    def without(self, *names: str) -> FeatureSchema:
        return FeatureSchema(tuple(f for f in self.feature_names if f not in names))

    @property
    def is_unaware(self) -> bool:
        return not any(p in self.feature_names for p in PROTECTED_FEATURES)


BASELINE_SCHEMA = FeatureSchema(ALL_FEATURES)
UNAWARE_SCHEMA = BASELINE_SCHEMA.without(*PROTECTED_FEATURES)


def design_matrix(pop: Population, schema: FeatureSchema) -> np.ndarray:
    """Raw (unstandardized) feature matrix with indicator-encoded protected attributes."""
    return np.column_stack([pop.column(name).astype(float) for name in schema]).reshape(len(pop), len(schema))


def record_vector(record: ApplicantRecord, schema: FeatureSchema) -> np.ndarray:
    values = []
    for name in schema:
        if name == "gender":
            values.append(1.0 if record.gender == "F" else 0.0)
        elif name == "race":
            values.append(1.0 if record.race == "B" else 0.0)
        else:
            values.append(float(getattr(record, name)))
    return np.array(values)


@dataclass(frozen=True)
class Standardizer:
    means: np.ndarray
    stds: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> Standardizer:
        means = X.mean(axis=0)
        stds = X.std(axis=0)
        # zero-variance columns pass through centred, contributing nothing
        stds = np.where(stds > 0, stds, 1.0)
        return cls(means, stds)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (X - self.means) / self.stds


@dataclass(frozen=True)
class TrainHyperparams:
    learning_rate: float = 0.1
    max_iterations: int = 5000
    l2_penalty: float = 1e-3
    convergence_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ConfigError("hp.learning_rate", "must be positive")
        if not isinstance(self.max_iterations, int) or self.max_iterations < 0:
            raise ConfigError("hp.max_iterations", "must be a nonnegative integer")
        if self.l2_penalty < 0:
            raise ConfigError("hp.l2_penalty", "must be nonnegative")
        if not self.convergence_tolerance > 0:
            raise ConfigError("hp.convergence_tolerance", "must be positive")


@dataclass(frozen=True, eq=False)
class TrainedModel:
    schema: FeatureSchema
    standardizer: Standardizer
    weights: np.ndarray
    intercept: float
    label_source: str
    hyperparams: TrainHyperparams = field(default_factory=TrainHyperparams)
    iterations: int = 0
    final_loss: float = float("nan")

    def __post_init__(self) -> None:
        weights = np.asarray(self.weights, dtype=float)
        if weights.shape != (len(self.schema),):
            raise ValueError("weight count must equal schema length")
        object.__setattr__(self, "weights", weights)

    def coefficients(self) -> dict[str, float]:
        return dict(zip(self.schema.feature_names, self.weights.tolist()))

    def linear(self, X: np.ndarray) -> np.ndarray:
        return self.standardizer.transform(X) @ self.weights + self.intercept

    def score_matrix(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.linear(X))

    def score_population(self, pop: Population) -> np.ndarray:
        return self.score_matrix(design_matrix(pop, self.schema))

    def to_dict(self) -> dict:
        return {
            "schema": list(self.schema.feature_names),
            "means": self.standardizer.means.tolist(),
            "stds": self.standardizer.stds.tolist(),
            "weights": self.weights.tolist(),
            "intercept": float(self.intercept),
            "label_source": self.label_source,
            "hyperparams": asdict(self.hyperparams),
        }

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, data: dict) -> TrainedModel:
        return cls(
            schema=FeatureSchema(tuple(data["schema"])),
            standardizer=Standardizer(np.array(data["means"], dtype=float), np.array(data["stds"], dtype=float)),
            weights=np.array(data["weights"], dtype=float),
            intercept=float(data["intercept"]),
            label_source=data["label_source"],
            hyperparams=TrainHyperparams(**data["hyperparams"]),
        )

    @classmethod
    def from_json(cls, text: str) -> TrainedModel:
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: str | Path) -> TrainedModel:
        return cls.from_json(Path(path).read_text())


def score(model: TrainedModel, record: ApplicantRecord) -> float:
    x = record_vector(record, model.schema)
    return float(sigmoid(model.standardizer.transform(x) @ model.weights + model.intercept))


def _loss(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, l2: float) -> float:
    z = Z @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + l2 / (2 * len(y)) * np.dot(w, w))


def _grad(w: np.ndarray, b: float, Z: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    n = len(y)
    resid = expit(Z @ w + b) - y
    grad = np.empty(len(w) + 1)
    grad[:-1] = Z.T @ resid / n + (l2 / n) * w
    grad[-1] = resid.mean()
    return grad


def loss_and_gradient(
    weights: Sequence[float],
    intercept: float,
    train: Population,
    schema: FeatureSchema,
    labels: str,
    l2: float,
    standardizer: Standardizer | None = None,
) -> tuple[float, np.ndarray]:
    """Regularized mean log loss and its gradient, intercept last.

    The penalty is ``l2 / (2n) * sum(w**2)``; the intercept is not penalized.
    Features are standardized with ``standardizer``, or with statistics fitted
    on ``train`` when none is given.
    """
    X = design_matrix(train, schema)
    std = standardizer or Standardizer.fit(X)
    y = train.labels(labels).astype(float)
    w = np.asarray(weights, dtype=float)
    Z = std.transform(X)
    return _loss(w, float(intercept), Z, y, l2), _grad(w, float(intercept), Z, y, l2)


_LOSS_CHECK_EVERY = 100


def _check_finite(loss: float, grad: np.ndarray, it: int, hp: TrainHyperparams) -> None:
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise DivergenceError(
            f"loss became non-finite by iteration {it}; learning_rate={hp.learning_rate} is too large"
        )


def fit_logistic(
    X: np.ndarray, y: np.ndarray, hp: TrainHyperparams
) -> tuple[Standardizer, np.ndarray, float, int, float]:
    """Gradient descent on raw features; returns (standardizer, w, b, iterations, loss)."""
    if len(y) == 0:
        raise TrainingError("training set is empty")
    if np.all(y == y[0]):
        raise TrainingError("training labels contain a single class")
    std = Standardizer.fit(X)
    Z = std.transform(X)
    y = y.astype(float)
    w = np.zeros(Z.shape[1])
    b = 0.0
    grad = _grad(w, b, Z, y, hp.l2_penalty)
    it = 0
    while it < hp.max_iterations and np.max(np.abs(grad)) >= hp.convergence_tolerance:
        w = w - hp.learning_rate * grad[:-1]
        b = b - hp.learning_rate * grad[-1]
        it += 1
        grad = _grad(w, b, Z, y, hp.l2_penalty)
        if it % _LOSS_CHECK_EVERY == 0:
            _check_finite(_loss(w, b, Z, y, hp.l2_penalty), grad, it, hp)
    loss = _loss(w, b, Z, y, hp.l2_penalty)
    _check_finite(loss, grad, it, hp)
    return std, w, b, it, loss


def train_logistic(
    train: Population,
    schema: FeatureSchema,
    labels: str,
    hp: TrainHyperparams | None = None,
) -> TrainedModel:
    hp = hp or TrainHyperparams()
    X = design_matrix(train, schema)
    y = train.labels(labels)
    std, w, b, it, loss = fit_logistic(X, y, hp)
    return TrainedModel(
        schema=schema,
        standardizer=std,
        weights=w,
        intercept=b,
        label_source=labels,
        hyperparams=hp,
        iterations=it,
        final_loss=loss,
    )


def accuracy(model: TrainedModel, pop: Population, threshold: float = 0.5, labels: str = "observed") -> float:
    if len(pop) == 0:
        raise ValueError("cannot compute accuracy on an empty population")
    predicted = model.score_population(pop) >= threshold
    return float(np.mean(predicted == (pop.labels(labels) == 1)))
