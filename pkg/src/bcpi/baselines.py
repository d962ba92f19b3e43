"""Competing group-importance methods used as benchmark baselines.

Five methods: per-group least squares (marginal effects), leave-one-group-in
and leave-one-group-out refitting with forests, and the joint-permutation
schemes GPFI (shuffle the group) and GOPFI (shuffle everything else). All of
them consume the same dataset/grouping pair and emit a :class:`BaselineScore`,
so the benchmark harness can swap methods freely.
"""

import time
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .conditional import joint_permutation
from .errors import SingularDesignWarning
from .inference import (
    STANDARD,
    LossDeltaMatrix,
    importance_statistics,
    loss_delta,
    prediction_score,
    run_importance,
)
from .learners import ForestConfig
from .learners import fit as fit_learner
from .learners import predict
from .types import BINARY, SplitPlan, derive_seed, validate_group_spec

MARGINAL = "marginal"
LOGI = "logi"
LOGO = "logo"
GPFI = "gpfi"
GOPFI = "gopfi"

_COND_LIMIT = 1e12


@dataclass(eq=False)
class BaselineScore:
    """Per-group scores (and p-values when the method provides them)."""

    method: str
    scores: np.ndarray
    p_values: np.ndarray = None
    prediction_score: float = float("nan")
    fit_seconds: float = 0.0
    importance_seconds: float = 0.0

    @property
    def time_seconds(self):
        return self.fit_seconds + self.importance_seconds


def _ols_min_pvalue(x_group, y):
    """Smallest two-sided coefficient p-value of y ~ intercept + group columns.

    Returns None when the group design is (numerically) singular.
    """
    n, q = x_group.shape
    design = np.column_stack([np.ones(n), x_group])
    gram = design.T @ design
    if np.linalg.cond(gram) > _COND_LIMIT:
        return None
    gram_inv = np.linalg.inv(gram)
    beta = gram_inv @ (design.T @ y)
    dof = n - q - 1
    residual = y - design @ beta
    s2 = float(residual @ residual) / dof
    se = np.sqrt(np.maximum(s2 * np.diag(gram_inv), 0.0))
    if np.any(se == 0.0):
        return None
    t = beta / se
    p = 2.0 * stats.t.sf(np.abs(t[1:]), dof)
    return float(p.min())


def run_marginal(dataset, spec):
    """Ordinary least squares of y on each group alone; min coefficient p-value.

    A collinear group gets p = 1 with a SingularDesignWarning instead of
    aborting the run.
    """
    validate_group_spec(spec, dataset.n_features)
    for k, group in enumerate(spec.groups):
        if dataset.n_samples <= len(group) + 1:
            raise ValueError(
                f"group {k} has {len(group)} columns but only "
                f"{dataset.n_samples} samples"
            )
    t0 = time.perf_counter()
    p_values = np.empty(spec.n_groups)
    for k, group in enumerate(spec.groups):
        p_min = _ols_min_pvalue(dataset.x[:, np.asarray(group)], dataset.y)
        if p_min is None:
            warnings.warn(
                f"group {k} ({spec.names[k]!r}) is collinear; reporting p = 1",
                SingularDesignWarning,
            )
            p_min = 1.0
        p_values[k] = p_min
    elapsed = time.perf_counter() - t0

    plan = SplitPlan.make(dataset.n_samples, 0)
    pooled = np.empty(dataset.n_samples)
    for fold in range(SplitPlan.N_FOLDS):
        tr, te = plan.train_index(fold), plan.test_index(fold)
        design = np.column_stack([np.ones(tr.size), dataset.x[tr]])
        coefs, *_ = np.linalg.lstsq(design, dataset.y[tr], rcond=None)
        pooled[te] = np.column_stack([np.ones(te.size), dataset.x[te]]) @ coefs
    score = prediction_score(dataset.y, pooled, dataset.task)

    return BaselineScore(
        method=MARGINAL,
        scores=p_values.copy(),
        p_values=p_values,
        prediction_score=score,
        fit_seconds=elapsed,
    )


def _null_predictions(y_train, size, task):
    if task == BINARY:
        rate = float(np.clip(y_train.mean(), 1e-12, 1 - 1e-12))
        return np.full(size, np.log(rate / (1.0 - rate)))
    return np.full(size, float(y_train.mean()))


def run_logi(dataset, spec, forest_cfg=None, seed=0):
    """Leave-one-group-in: forest per group, held-out score gain over the mean.

    Scores are cross-fitted prediction-score improvements over the null model
    that always predicts the training-fold mean; no p-values.
    """
    validate_group_spec(spec, dataset.n_features)
    cfg = forest_cfg if forest_cfg is not None else ForestConfig()
    plan = SplitPlan.make(dataset.n_samples, seed)
    fit_seconds = 0.0
    pooled = np.empty((dataset.n_samples, spec.n_groups))
    pooled_null = np.empty(dataset.n_samples)
    for fold in range(SplitPlan.N_FOLDS):
        tr, te = plan.train_index(fold), plan.test_index(fold)
        pooled_null[te] = _null_predictions(dataset.y[tr], te.size, dataset.task)
        for k, group in enumerate(spec.groups):
            cols = np.asarray(group)
            t0 = time.perf_counter()
            learner = fit_learner(
                cfg, dataset.x[np.ix_(tr, cols)], dataset.y[tr], dataset.task,
                derive_seed(seed, f"logi-fold{fold}", k),
            )
            fit_seconds += time.perf_counter() - t0
            pooled[te, k] = predict(learner, dataset.x[np.ix_(te, cols)])

    t1 = time.perf_counter()
    null_score = prediction_score(dataset.y, pooled_null, dataset.task)
    scores = np.array(
        [
            prediction_score(dataset.y, pooled[:, k], dataset.task) - null_score
            for k in range(spec.n_groups)
        ]
    )
    return BaselineScore(
        method=LOGI,
        scores=scores,
        prediction_score=float(
            max(s + null_score for s in scores)
        ),
        fit_seconds=fit_seconds,
        importance_seconds=time.perf_counter() - t1,
    )


def run_logo(dataset, spec, forest_cfg=None, seed=0):
    """Leave-one-group-out refitting with the Wald statistic on loss deltas.

    The full forest and each reduced forest (group's columns removed) share
    the same seed; per-sample deltas of reduced minus full loss on the
    held-out folds are concatenated and summarized like any other importance.
    """
    validate_group_spec(spec, dataset.n_features)
    if spec.n_groups < 2:
        raise ValueError("leave-one-group-out needs at least two groups")
    cfg = forest_cfg if forest_cfg is not None else ForestConfig()
    plan = SplitPlan.make(dataset.n_samples, seed)
    fit_seconds = 0.0
    importance_seconds = 0.0
    deltas = [[] for _ in range(spec.n_groups)]
    scores = []
    for fold in range(SplitPlan.N_FOLDS):
        tr, te = plan.train_index(fold), plan.test_index(fold)
        fold_seed = derive_seed(seed, "logo-learner", fold)
        t0 = time.perf_counter()
        full = fit_learner(cfg, dataset.x[tr], dataset.y[tr], dataset.task, fold_seed)
        fit_seconds += time.perf_counter() - t0
        yhat_full = predict(full, dataset.x[te])
        scores.append(prediction_score(dataset.y[te], yhat_full, dataset.task))
        for k in range(spec.n_groups):
            keep = np.setdiff1d(
                np.arange(dataset.n_features), np.asarray(spec.groups[k])
            )
            t0 = time.perf_counter()
            reduced = fit_learner(
                cfg, dataset.x[np.ix_(tr, keep)], dataset.y[tr], dataset.task,
                fold_seed,
            )
            fit_seconds += time.perf_counter() - t0
            t1 = time.perf_counter()
            yhat_reduced = predict(reduced, dataset.x[np.ix_(te, keep)])
            deltas[k].append(
                loss_delta(dataset.y[te], yhat_full, yhat_reduced, dataset.task)
            )
            importance_seconds += time.perf_counter() - t1

    t1 = time.perf_counter()
    means = np.empty(spec.n_groups)
    p_values = np.empty(spec.n_groups)
    for k in range(spec.n_groups):
        matrix = LossDeltaMatrix(
            values=np.concatenate(deltas[k])[:, None], group=k, task=dataset.task
        )
        summary = importance_statistics(matrix)
        means[k] = summary.mean
        p_values[k] = summary.p_value
    importance_seconds += time.perf_counter() - t1
    return BaselineScore(
        method=LOGO,
        scores=means,
        p_values=p_values,
        prediction_score=float(np.mean(scores)),
        fit_seconds=fit_seconds,
        importance_seconds=importance_seconds,
    )


def _from_report(method, report):
    return BaselineScore(
        method=method,
        scores=report.means,
        p_values=report.p_values,
        prediction_score=report.prediction_score,
        fit_seconds=report.fit_seconds,
        importance_seconds=report.importance_seconds,
    )


def run_gpfi(dataset, spec, forest_cfg=None, n_permutations=100, seed=0):
    """Joint permutation of the group of interest, forest base learner.

    This is exactly the importance engine in ``standard`` mode, so the two
    share all code paths.
    """
    cfg = forest_cfg if forest_cfg is not None else ForestConfig()
    report = run_importance(
        dataset, spec, cfg,
        permutation=STANDARD, n_permutations=n_permutations, seed=seed,
    )
    return _from_report(GPFI, report)


def run_gopfi(dataset, spec, forest_cfg=None, n_permutations=100, seed=0):
    """Joint permutation of every column except the group of interest.

    The score is the group's retained contribution: with one shared row
    permutation per shuffle, the loss when everything is shuffled minus the
    loss when the group of interest is kept intact. Positive deltas mean the
    group alone recovers part of the prediction, and they feed the same Wald
    machinery as the permutation methods.
    """
    validate_group_spec(spec, dataset.n_features)
    if spec.n_groups < 2:
        raise ValueError("group-only permutation needs at least two groups")
    cfg = forest_cfg if forest_cfg is not None else ForestConfig()
    plan = SplitPlan.make(dataset.n_samples, seed)
    fit_seconds = 0.0
    importance_seconds = 0.0
    deltas = [[] for _ in range(spec.n_groups)]
    scores = []
    for fold in range(SplitPlan.N_FOLDS):
        tr, te = plan.train_index(fold), plan.test_index(fold)
        t0 = time.perf_counter()
        learner = fit_learner(
            cfg, dataset.x[tr], dataset.y[tr], dataset.task,
            derive_seed(seed, "gopfi-learner", fold),
        )
        fit_seconds += time.perf_counter() - t0
        t1 = time.perf_counter()
        x_test, y_test = dataset.x[te], dataset.y[te]
        scores.append(
            prediction_score(y_test, predict(learner, x_test), dataset.task)
        )
        fold_deltas = [np.empty((te.size, n_permutations)) for _ in spec.groups]
        for b in range(n_permutations):
            x_all = joint_permutation(
                x_test, derive_seed(seed, f"gopfi-fold{fold}", b)
            )
            yhat_all = predict(learner, x_all)
            for k, group in enumerate(spec.groups):
                x_keep = x_all.copy()
                cols = np.asarray(group)
                x_keep[:, cols] = x_test[:, cols]
                yhat_keep = predict(learner, x_keep)
                fold_deltas[k][:, b] = loss_delta(
                    y_test, yhat_keep, yhat_all, dataset.task
                )
        for k in range(spec.n_groups):
            deltas[k].append(fold_deltas[k])
        importance_seconds += time.perf_counter() - t1

    means = np.empty(spec.n_groups)
    p_values = np.empty(spec.n_groups)
    for k in range(spec.n_groups):
        matrix = LossDeltaMatrix(
            values=np.vstack(deltas[k]), group=k, task=dataset.task
        )
        summary = importance_statistics(matrix)
        means[k] = summary.mean
        p_values[k] = summary.p_value
    return BaselineScore(
        method=GOPFI,
        scores=means,
        p_values=p_values,
        prediction_score=float(np.mean(scores)),
        fit_seconds=fit_seconds,
        importance_seconds=importance_seconds,
    )
