"""Importance scores, Wald statistics and one-sided p-values.

For each group J the fitted learner is scored on held-out rows twice: once on
the intact design and once on a design whose J-th block is rebuilt (by
conditional or standard permutation), giving per-sample loss deltas
l_i^{J,b} over B rebuilds. The group statistic divides the grand mean of the
deltas by the standard deviation of the per-sample means; under the null it
is asymptotically standard normal, so p = 1 - Phi(z).

Two folds are used throughout: the learner trains on one fold and is scored
on the other, folds swap, and the per-sample delta rows from both folds are
concatenated before the statistic is computed.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .conditional import (
    ADDITIVE,
    LEAF_SAMPLING,
    fit_conditional,
    permute_standard,
    reconstruct,
)
from .errors import BcpiError, DegenerateVarianceWarning, NonFiniteLoss
from .mlp import sigmoid
from .learners import (
    MlpConfig,
    predict,
    predict_from_projection,
    project_groups,
    projected_group_spec,
    transform_inputs,
)
from .learners import fit as fit_learner
from .types import BINARY, REGRESSION, SplitPlan, derive_seed, validate_group_spec

CONDITIONAL_ADDITIVE = "conditional-additive"
CONDITIONAL_SAMPLING = "conditional-sampling"
STANDARD = "standard"

PERMUTATION_MODES = (CONDITIONAL_ADDITIVE, CONDITIONAL_SAMPLING, STANDARD)

_PROBA_EPS = 1e-12
_DEGENERATE_STD = 1e-12
_PREDICT_CHUNK_ELEMENTS = 8_000_000

MIN_SAMPLES = 40


def normal_cdf(x):
    """Standard normal CDF, accurate to well below 1e-7 over [-8, 8]."""
    return ndtr(x)


def loss_delta(y, yhat, ytilde, task):
    """Per-sample loss increase of the rebuilt prediction over the intact one.

    Regression compares squared errors: (y - ytilde)^2 - (y - yhat)^2.
    Binary expects logits and compares log-likelihoods:
    y*log(S(yhat)/S(ytilde)) + (1-y)*log((1-S(yhat))/(1-S(ytilde))), with
    probabilities clamped to [1e-12, 1 - 1e-12] before the logs.
    """
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    ytilde = np.asarray(ytilde, dtype=float)
    if task == REGRESSION:
        out = (y - ytilde) ** 2 - (y - yhat) ** 2
    elif task == BINARY:
        p_hat = np.clip(sigmoid(yhat), _PROBA_EPS, 1.0 - _PROBA_EPS)
        p_tilde = np.clip(sigmoid(ytilde), _PROBA_EPS, 1.0 - _PROBA_EPS)
        out = y * np.log(p_hat / p_tilde) + (1.0 - y) * np.log(
            (1.0 - p_hat) / (1.0 - p_tilde)
        )
    else:
        raise ValueError(f"unknown task {task!r}")
    if not np.all(np.isfinite(out)):
        raise NonFiniteLoss("loss delta produced non-finite values")
    return out


@dataclass(eq=False)
class LossDeltaMatrix:
    """Per-sample, per-rebuild loss deltas for one group."""

    values: np.ndarray
    group: int
    task: str = REGRESSION

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValueError("values must be an (n_test, B) matrix with B >= 1")
        if not np.isfinite(values).all():
            raise ValueError("loss deltas must be finite")
        self.values = values


@dataclass(frozen=True)
class GroupImportance:
    """Wald summary of one group's loss deltas."""

    mean: float
    std: float
    z: float
    p_value: float
    n_test_total: int
    degenerate: bool = False


def importance_statistics(deltas):
    """Grand mean, its standard error over samples, z and one-sided p.

    mean = sum of all entries / (n_test * B). The per-sample means d_i are the
    independent units; their sample standard deviation (divisor n_test - 1)
    scaled by 1/sqrt(n_test) is the standard error of the mean, reported as
    ``std``. z = mean / std is the Wald statistic that is asymptotically
    standard normal under the null, and p = 1 - Phi(z). When the deltas are
    (numerically) constant the statistic is undefined: z is forced to 0, p to
    0.5, and the ``degenerate`` flag is set alongside a
    DegenerateVarianceWarning.
    """
    values = deltas.values
    n_test = values.shape[0]
    if n_test < 2:
        raise ValueError("need at least two test samples")
    mean = float(values.mean())
    per_sample = values.mean(axis=1)
    spread = float(np.sqrt(np.sum((per_sample - mean) ** 2) / (n_test - 1)))
    std = spread / np.sqrt(n_test)
    if std < _DEGENERATE_STD:
        warnings.warn(
            f"group {deltas.group}: constant loss deltas, Wald statistic undefined",
            DegenerateVarianceWarning,
        )
        return GroupImportance(
            mean=mean, std=std, z=0.0, p_value=0.5,
            n_test_total=n_test, degenerate=True,
        )
    z = mean / std
    return GroupImportance(
        mean=mean, std=std, z=float(z), p_value=float(ndtr(-z)), n_test_total=n_test
    )


@dataclass(eq=False)
class ImportanceReport:
    """Per-group importance plus run diagnostics."""

    importances: list
    names: tuple
    errors: dict
    prediction_score: float
    fit_seconds: float
    importance_seconds: float
    n_permutations: int
    permutation: str
    seed: int
    task: str
    deltas: list = None

    @property
    def p_values(self):
        return np.array(
            [imp.p_value if imp is not None else np.nan for imp in self.importances]
        )

    @property
    def means(self):
        return np.array(
            [imp.mean if imp is not None else np.nan for imp in self.importances]
        )

    @property
    def time_seconds(self):
        return self.fit_seconds + self.importance_seconds

    def rows(self):
        """(group, name, mean, std, z, p_value) per group; NaNs where failed."""
        out = []
        for k, imp in enumerate(self.importances):
            if imp is None:
                out.append((k, self.names[k], np.nan, np.nan, np.nan, np.nan))
            else:
                out.append((k, self.names[k], imp.mean, imp.std, imp.z, imp.p_value))
        return out


@dataclass(eq=False)
class CrossFitBundle:
    """The two fold learners plus the split that produced them.

    Serializing this bundle is what lets ``importance`` reuse the exact
    cross-fitting state of a previous ``fit`` instead of retraining.
    """

    plan: SplitPlan
    learners: list
    task: str
    method: str = None


def fit_crossfit(dataset, learner_config, seed):
    """Train one learner per fold on the opposite fold's rows."""
    plan = SplitPlan.make(dataset.n_samples, seed)
    learners = []
    for fold in range(SplitPlan.N_FOLDS):
        idx = plan.train_index(fold)
        learners.append(
            fit_learner(
                learner_config, dataset.x[idx], dataset.y[idx], dataset.task,
                derive_seed(seed, "learner", fold),
            )
        )
    return CrossFitBundle(plan=plan, learners=learners, task=dataset.task)


def prediction_score(y, yhat, task):
    if task == BINARY:
        return float(np.mean((yhat > 0) == (y > 0.5)))
    total = float(np.sum((y - y.mean()) ** 2))
    if total == 0.0:
        return 0.0
    return 1.0 - float(np.sum((y - yhat) ** 2)) / total


def _rebuild_blocks(xe, espec, j, mode, n_permutations, conditional_forest, seed, fold):
    """The B rebuilt column blocks for group j, plus the columns they replace."""
    if mode in (CONDITIONAL_ADDITIVE, CONDITIONAL_SAMPLING):
        sampler_mode = ADDITIVE if mode == CONDITIONAL_ADDITIVE else LEAF_SAMPLING
        sampler = fit_conditional(
            xe, espec, j, sampler_mode, conditional_forest,
            derive_seed(seed, f"conditional-fold{fold}", j),
        )
        draw_seed = derive_seed(seed, f"reconstruct-fold{fold}", j)
        blocks = [reconstruct(sampler, b, draw_seed) for b in range(n_permutations)]
        return sampler.group_cols, blocks
    if mode == STANDARD:
        cols = np.asarray(espec.groups[j], dtype=int)
        blocks = [
            permute_standard(xe, espec, j, derive_seed(seed, f"permute-fold{fold}-group{j}", b))
            for b in range(n_permutations)
        ]
        return cols, blocks
    raise ValueError(f"unknown permutation mode {mode!r}")


def _group_deltas(xe, cols, blocks, predict_rows, y_test, yhat, task):
    """Score every rebuilt design, chunked so the prediction batches stay small."""
    n_test, width = xe.shape
    n_blocks = len(blocks)
    deltas = np.empty((n_test, n_blocks))
    chunk = max(1, _PREDICT_CHUNK_ELEMENTS // max(1, n_test * width))
    for start in range(0, n_blocks, chunk):
        stop = min(start + chunk, n_blocks)
        big = np.tile(xe, (stop - start, 1))
        for m, b in enumerate(range(start, stop)):
            big[m * n_test : (m + 1) * n_test, cols] = blocks[b]
        ytilde = predict_rows(big)
        for m, b in enumerate(range(start, stop)):
            deltas[:, b] = loss_delta(
                y_test, yhat, ytilde[m * n_test : (m + 1) * n_test], task
            )
    return deltas


def run_importance(
    dataset,
    spec,
    learner_config,
    permutation=CONDITIONAL_ADDITIVE,
    n_permutations=100,
    seed=0,
    conditional_forest=None,
    return_deltas=False,
    prefit=None,
):
    """Cross-fitted group importance for every group in the spec.

    For each of the two folds, the learner trains on the opposite fold and is
    scored on the held-out one; per-sample loss deltas from both folds are
    concatenated and summarized once per group. With a stacking-enabled
    network the permutation engine operates on the projected columns, where
    each group has shrunk to its d_k summary units.

    A failing group (e.g. an undefined conditional) is reported in
    ``report.errors`` without aborting the remaining groups.

    Parameters
    ----------
    dataset : Dataset
        At least 40 rows.
    spec : GroupSpec
    learner_config : MlpConfig | ForestConfig | LinearConfig
    permutation : str
        One of ``conditional-additive``, ``conditional-sampling`` or
        ``standard``.
    n_permutations : int
        B, the number of rebuilds per group.
    seed : int
    conditional_forest : ForestConfig, optional
        Hyperparameters of the conditional model.
    return_deltas : bool
        Also keep each group's (n, B) loss-delta matrix on the report.
    prefit : CrossFitBundle, optional
        Reuse previously trained fold learners (and their split) instead of
        fitting; ``fit_seconds`` is then zero.

    Returns
    -------
    ImportanceReport
    """
    validate_group_spec(spec, dataset.n_features)
    if dataset.n_samples < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} rows, got {dataset.n_samples}")
    if permutation not in PERMUTATION_MODES:
        raise ValueError(f"unknown permutation mode {permutation!r}")
    if isinstance(learner_config, MlpConfig) and learner_config.stacking is not None:
        if learner_config.stacking.spec.groups != spec.groups:
            raise ValueError("stacking groups differ from the importance groups")

    x, y, task = dataset.x, dataset.y, dataset.task
    if prefit is not None:
        if prefit.plan.folds.shape[0] != dataset.n_samples:
            raise ValueError(
                "prefit bundle was built for a different number of samples"
            )
        if prefit.task != task:
            raise ValueError("prefit bundle was built for a different task")
        plan = prefit.plan
    else:
        plan = SplitPlan.make(dataset.n_samples, seed)
    n_groups = spec.n_groups

    fold_deltas = [[] for _ in range(n_groups)]
    errors = {}
    scores = []
    fit_seconds = 0.0
    importance_seconds = 0.0

    for fold in range(SplitPlan.N_FOLDS):
        train_idx = plan.train_index(fold)
        test_idx = plan.test_index(fold)
        if prefit is not None:
            learner = prefit.learners[fold]
        else:
            t0 = time.perf_counter()
            learner = fit_learner(
                learner_config, x[train_idx], y[train_idx], task,
                derive_seed(seed, "learner", fold),
            )
            fit_seconds += time.perf_counter() - t0

        t1 = time.perf_counter()
        x_test, y_test = x[test_idx], y[test_idx]
        yhat = predict(learner, x_test)
        scores.append(prediction_score(y_test, yhat, task))

        if learner.projection is not None:
            xe = project_groups(
                transform_inputs(learner, x_test), learner.projection, spec
            )
            espec = projected_group_spec(spec, learner.projection.dims)

            def predict_rows(m, _learner=learner):
                return predict_from_projection(_learner, m)

        else:
            xe = x_test
            espec = spec

            def predict_rows(m, _learner=learner):
                return predict(_learner, m)

        for j in range(n_groups):
            if j in errors:
                continue
            try:
                cols, blocks = _rebuild_blocks(
                    xe, espec, j, permutation, n_permutations,
                    conditional_forest, seed, fold,
                )
                fold_deltas[j].append(
                    _group_deltas(xe, cols, blocks, predict_rows, y_test, yhat, task)
                )
            except BcpiError as exc:
                errors[j] = str(exc)
        importance_seconds += time.perf_counter() - t1

    importances = []
    all_deltas = []
    for j in range(n_groups):
        if j in errors or len(fold_deltas[j]) != SplitPlan.N_FOLDS:
            importances.append(None)
            all_deltas.append(None)
            continue
        matrix = LossDeltaMatrix(
            values=np.vstack(fold_deltas[j]), group=j, task=task
        )
        importances.append(importance_statistics(matrix))
        all_deltas.append(matrix.values if return_deltas else None)

    return ImportanceReport(
        importances=importances,
        names=spec.names,
        errors=errors,
        prediction_score=float(np.mean(scores)),
        fit_seconds=fit_seconds,
        importance_seconds=importance_seconds,
        n_permutations=n_permutations,
        permutation=permutation,
        seed=int(seed),
        task=task,
        deltas=all_deltas if return_deltas else None,
    )
