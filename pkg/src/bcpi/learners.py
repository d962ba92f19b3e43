"""Base estimators behind a single fit/predict interface.

Three learner kinds: the in-package feed-forward network (optionally with the
group-projection sub-layer), random forests (scikit-learn), and an ordinary
least-squares / logistic linear model. Inputs are standardized with the
train-fold mean and standard deviation inside ``fit``; the same affine map is
applied at prediction time. For the binary task every learner returns logits;
the sigmoid is applied only inside the loss.
"""

from dataclasses import dataclass

import joblib
import numpy as np
from sklearn.ensemble import RandomForestClassifier, RandomForestRegressor
from sklearn.linear_model import LogisticRegression

from .errors import DegenerateOutcome, ShapeMismatch
from .mlp import MlpLearner, fit_mlp
from .types import BINARY, REGRESSION, GroupSpec, ProjectionSet, derive_seed

MLP = "mlp"
FOREST = "forest"
LINEAR = "linear"

_PROBA_EPS = 1e-12
_MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class StackingConfig:
    """Turns on the projection sub-layer for a given grouping.

    ``dims`` holds the projected dimension of each group; None means one
    summary unit per group, which reduces the grouped problem to a
    single-variable one.
    """

    spec: GroupSpec
    dims: tuple = None

    def resolved_dims(self):
        if self.dims is None:
            return (1,) * self.spec.n_groups
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != self.spec.n_groups:
            raise ValueError("need one projected dimension per group")
        return dims


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: tuple = (64, 64)
    learning_rate: float = 1e-3
    max_epochs: int = 200
    batch_size: int = 64
    early_stop_patience: int = 20
    validation_fraction: float = 0.1
    stacking: StackingConfig = None


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = None
    min_samples_leaf: int = 1
    bootstrap: bool = True

    def features_per_split(self, p, task=REGRESSION):
        """ceil(p/3) for regression targets, ceil(sqrt(p)) for classification."""
        if task == BINARY:
            return int(np.ceil(np.sqrt(p)))
        return int(np.ceil(p / 3))


@dataclass(frozen=True)
class LinearConfig:
    pass


@dataclass(eq=False)
class FittedLearner:
    """A trained estimator; ``projection`` is the extracted sub-layer, if any."""

    kind: str
    task: str
    model: object
    projection: ProjectionSet = None
    n_features: int = 0


class _Standardizer:
    def __init__(self, x):
        self.mean = x.mean(axis=0)
        self.std = x.std(axis=0)
        self.std[self.std < 1e-12] = 1.0

    def __call__(self, x):
        return (x - self.mean) / self.std


class _ForestModel:
    def __init__(self, estimator, scaler, task):
        self.estimator = estimator
        self.scaler = scaler
        self.task = task

    def predict(self, x):
        xs = self.scaler(x)
        if self.task == REGRESSION:
            return self.estimator.predict(xs)
        proba = self.estimator.predict_proba(xs)
        positive = list(self.estimator.classes_).index(1.0)
        p = np.clip(proba[:, positive], _PROBA_EPS, 1.0 - _PROBA_EPS)
        return np.log(p / (1.0 - p))


class _LinearModel:
    def __init__(self, scaler, weights, intercept, task, logistic=None):
        self.scaler = scaler
        self.weights = weights
        self.intercept = intercept
        self.task = task
        self.logistic = logistic

    def predict(self, x):
        xs = self.scaler(x)
        if self.task == REGRESSION:
            return xs @ self.weights + self.intercept
        return self.logistic.decision_function(xs)

    def raw_coefficients(self):
        """(w, b) expressed on the unstandardized input scale."""
        w = self.weights / self.scaler.std
        b = self.intercept - float(np.dot(self.weights, self.scaler.mean / self.scaler.std))
        return w, b


def build_forest(cfg, p, task, seed):
    """The scikit-learn estimator matching a ForestConfig."""
    common = dict(
        n_estimators=cfg.n_trees,
        max_depth=cfg.max_depth,
        min_samples_leaf=cfg.min_samples_leaf,
        bootstrap=cfg.bootstrap,
        max_features=cfg.features_per_split(p, task),
        random_state=int(seed % (2**32)),
        n_jobs=1,
    )
    if task == BINARY:
        return RandomForestClassifier(**common)
    return RandomForestRegressor(**common)


def fit(config, x, y, task, seed):
    """Train a learner on the training fold; deterministic given the seed.

    Parameters
    ----------
    config : MlpConfig | ForestConfig | LinearConfig
        Selects the learner kind and its hyperparameters.
    x, y : ndarray
        Training fold; at least 20 rows, all finite.
    task : {"regression", "binary"}
    seed : int

    Returns
    -------
    FittedLearner
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeMismatch("x must be 2-d with one y entry per row")
    if x.shape[0] < 20:
        raise ValueError("need at least 20 training rows")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("training data contains non-finite entries")
    if task == BINARY and np.unique(y).size < 2:
        raise DegenerateOutcome("binary outcome is constant on the training fold")

    p = x.shape[1]
    if isinstance(config, MlpConfig):
        model = fit_mlp(config, x, y, task, seed)
        projection = None
        if config.stacking is not None:
            projection = ProjectionSet(
                matrices=tuple(u.copy() for u in model.network.projections)
            )
        return FittedLearner(
            kind=MLP, task=task, model=model, projection=projection, n_features=p
        )

    if isinstance(config, ForestConfig):
        scaler = _Standardizer(x)
        estimator = build_forest(config, p, task, derive_seed(seed, "forest"))
        estimator.fit(scaler(x), y)
        model = _ForestModel(estimator, scaler, task)
        return FittedLearner(kind=FOREST, task=task, model=model, n_features=p)

    if isinstance(config, LinearConfig):
        scaler = _Standardizer(x)
        xs = scaler(x)
        if task == REGRESSION:
            design = np.column_stack([np.ones(x.shape[0]), xs])
            coefs, *_ = np.linalg.lstsq(design, y, rcond=None)
            model = _LinearModel(scaler, coefs[1:], float(coefs[0]), task)
        else:
            logistic = LogisticRegression(penalty=None, max_iter=2000)
            logistic.fit(xs, y)
            model = _LinearModel(
                scaler, logistic.coef_.ravel(), float(logistic.intercept_[0]),
                task, logistic=logistic,
            )
        return FittedLearner(kind=LINEAR, task=task, model=model, n_features=p)

    raise TypeError(f"unknown learner config {type(config).__name__}")


def predict(learner, x):
    """Predictions on new rows: values for regression, logits for binary."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] != learner.n_features:
        raise ShapeMismatch(
            f"expected {learner.n_features} columns, got "
            f"{x.shape[1] if x.ndim == 2 else 'non-matrix input'}"
        )
    return learner.model.predict(x)


def predict_from_projection(learner, z):
    """Predictions from already-projected features (stacked networks only)."""
    if learner.kind != MLP or learner.projection is None:
        raise ShapeMismatch("learner has no projection sub-layer")
    return learner.model.predict_from_projection(z)


def transform_inputs(learner, x):
    """The learner's internal input standardization (stacked networks only)."""
    if not isinstance(learner.model, MlpLearner):
        raise ShapeMismatch("only network learners expose their input transform")
    return learner.model.transform_inputs(x)


def project_groups(x, projection, spec):
    """Apply per-group projections: blocks x[:, G_k] @ U_k in group order.

    Columns not covered by any group are appended unchanged after the
    projected blocks.
    """
    x = np.asarray(x, dtype=float)
    if len(projection.matrices) != spec.n_groups:
        raise ShapeMismatch("projection count differs from group count")
    parts = []
    for k, (group, u) in enumerate(zip(spec.groups, projection.matrices)):
        if u.shape[0] != len(group):
            raise ShapeMismatch(
                f"projection {k} has {u.shape[0]} rows for a group of {len(group)}"
            )
        parts.append(x[:, np.asarray(group)] @ u)
    uncovered = spec.uncovered(x.shape[1])
    if uncovered:
        parts.append(x[:, uncovered])
    return np.concatenate(parts, axis=1)


def projected_group_spec(spec, dims):
    """Group layout of the projected matrix: consecutive d_k-wide blocks."""
    offsets = np.cumsum([0] + list(dims))
    groups = [
        list(range(offsets[k], offsets[k + 1])) for k in range(spec.n_groups)
    ]
    return GroupSpec(groups=groups, names=spec.names)


def save_learner(learner, path):
    """Serialize a fitted learner (or any bundle) to a versioned binary file."""
    joblib.dump({"format_version": _MODEL_FORMAT_VERSION, "payload": learner}, path)


def load_learner(path):
    blob = joblib.load(path)
    version = blob.get("format_version")
    if version != _MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model file version {version!r}")
    return blob["payload"]
