"""Multi-run benchmark harness: sweeps, metrics, and raw run archives.

``run_experiment`` simulates fresh data for every (rho_inter, run) cell from
seeds derived off one master seed, runs each configured method on the same
data, and aggregates ranking AUC, type-I error, power, wall time and learner
prediction score into one row per (method, rho_inter). The per-run archive
keeps everything needed to recompute every aggregate exactly.

Within a cell all methods see identical data, so paired comparisons (e.g.
conditional vs standard permutation) are seed-for-seed fair. Timing covers
model fitting and importance computation only, never simulation or I/O.
"""

import json
import os
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from .baselines import (
    GOPFI,
    GPFI,
    LOGI,
    LOGO,
    MARGINAL,
    run_gopfi,
    run_gpfi,
    run_logi,
    run_logo,
    run_marginal,
)
from .errors import DegenerateTruth, NoNullGroups, NoSignalGroups
from .inference import CONDITIONAL_ADDITIVE, CONDITIONAL_SAMPLING, STANDARD, run_importance
from .learners import ForestConfig, MlpConfig, StackingConfig
from .simulation import BlockCovarianceConfig, OutcomeConfig, simulate_dataset
from .types import derive_seed

BCPI_DNN = "bcpi-dnn"
BCPI_RF = "bcpi-rf"
BPI_DNN = "bpi-dnn"

METHODS = (BCPI_DNN, BCPI_RF, BPI_DNN, MARGINAL, LOGI, LOGO, GPFI, GOPFI)

HIGHER = "higher"
LOWER = "lower"


def auc_ranking(values, truth, direction=HIGHER):
    """Mann-Whitney AUC of a ranking against boolean ground truth.

    The fraction of (important, null) pairs ranked correctly, ties counted
    as half. ``direction="lower"`` treats smaller values as more important
    (p-values); ``"higher"`` suits raw scores.
    """
    values = np.asarray(values, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    if not (truth.any() and (~truth).any()):
        raise DegenerateTruth("need at least one important and one null group")
    pos = values[truth][:, None]
    neg = values[~truth][None, :]
    if direction == LOWER:
        correct = pos < neg
    elif direction == HIGHER:
        correct = pos > neg
    else:
        raise ValueError(f"unknown direction {direction!r}")
    ties = pos == neg
    return float((correct.sum() + 0.5 * ties.sum()) / correct.size)


def _rate(cells, alpha):
    cells = np.asarray(cells, dtype=float)
    finite = np.isfinite(cells)
    if not finite.any():
        return float("nan")
    return float(np.mean(cells[finite] < alpha))


def type_one_error(pvalues, truth, alpha=0.05):
    """Fraction of (run, null-group) cells rejected at level alpha."""
    pvalues = np.atleast_2d(np.asarray(pvalues, dtype=float))
    truth = np.asarray(truth, dtype=bool)
    if truth.all():
        raise NoNullGroups("type-I error needs at least one null group")
    return _rate(pvalues[:, ~truth], alpha)


def power(pvalues, truth, alpha=0.05):
    """Fraction of (run, important-group) cells rejected at level alpha."""
    pvalues = np.atleast_2d(np.asarray(pvalues, dtype=float))
    truth = np.asarray(truth, dtype=bool)
    if not truth.any():
        raise NoSignalGroups("power needs at least one important group")
    return _rate(pvalues[:, truth], alpha)


@dataclass(frozen=True)
class MethodSpec:
    """One benchmark entry: a method name plus its stacking flag and label."""

    method: str
    stacking: bool = False
    label: str = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.label is None:
            suffix = "+stacking" if self.stacking else ""
            object.__setattr__(self, "label", self.method + suffix)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one benchmark needs besides the master seed."""

    covariance: BlockCovarianceConfig
    outcome: OutcomeConfig
    n_samples: int
    methods: tuple
    runs: int = 100
    rho_inter_sweep: tuple = (0.0, 0.2, 0.5, 0.8)
    alpha: float = 0.05
    n_permutations: int = 100
    permutation: str = CONDITIONAL_ADDITIVE
    stacking: bool = False
    sigma: float = None
    learner: MlpConfig = None
    base_forest: ForestConfig = None
    conditional_forest: ForestConfig = None

    def __post_init__(self):
        if self.runs < 1:
            raise ValueError("runs must be at least 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        specs = []
        for entry in self.methods:
            if isinstance(entry, MethodSpec):
                specs.append(entry)
            elif isinstance(entry, str):
                specs.append(MethodSpec(method=entry, stacking=self.stacking))
            else:
                specs.append(
                    MethodSpec(
                        method=entry["method"],
                        stacking=entry.get("stacking", self.stacking),
                        label=entry.get("label"),
                    )
                )
        object.__setattr__(self, "methods", tuple(specs))
        object.__setattr__(self, "rho_inter_sweep", tuple(float(r) for r in self.rho_inter_sweep))

    @classmethod
    def from_dict(cls, blob):
        sim = blob.get("simulation", {})
        bench = blob.get("benchmark", {})
        kwargs = dict(
            covariance=BlockCovarianceConfig(**sim["covariance"]),
            outcome=OutcomeConfig(**sim["outcome"]),
            n_samples=int(sim["n_samples"]),
            methods=tuple(bench["methods"]),
            sigma=sim.get("sigma"),
        )
        for key in ("runs", "rho_inter_sweep", "alpha"):
            if key in bench:
                kwargs[key] = bench[key]
        if "permutations" in blob:
            kwargs["n_permutations"] = int(blob["permutations"])
        if "permutation" in blob:
            kwargs["permutation"] = blob["permutation"]
        if "stacking" in blob:
            kwargs["stacking"] = bool(blob["stacking"])
        if "learner" in blob:
            kwargs["learner"] = MlpConfig(
                **{k: tuple(v) if k == "hidden_layers" else v for k, v in blob["learner"].items()}
            )
        if "conditional_forest" in blob:
            kwargs["conditional_forest"] = ForestConfig(**blob["conditional_forest"])
        if "base_forest" in blob:
            kwargs["base_forest"] = ForestConfig(**blob["base_forest"])
        return cls(**kwargs)


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated benchmark metrics for one (method, rho_inter) pair."""

    method: str
    rho_inter: float
    auc: float
    type1: float
    power: float
    time_seconds: float
    prediction_score: float


def resolve_workers(n_jobs=None):
    """Worker-pool size: explicit argument, else BCPI_WORKERS, else min(4, cpus)."""
    if n_jobs is not None:
        return max(1, int(n_jobs))
    env = os.environ.get("BCPI_WORKERS")
    if env:
        return max(1, int(env))
    return max(1, min(4, os.cpu_count() or 1))


def _mlp_config(cfg, spec, stacking):
    base = cfg.learner if cfg.learner is not None else MlpConfig()
    if stacking:
        return replace(base, stacking=StackingConfig(spec=spec))
    return replace(base, stacking=None)


def run_method(mspec, dataset, spec, cfg, seed):
    """Run one method and return its raw result pieces."""
    name = mspec.method
    base_forest = cfg.base_forest if cfg.base_forest is not None else ForestConfig()
    if name in (BCPI_DNN, BPI_DNN, BCPI_RF):
        if name == BPI_DNN:
            mode = STANDARD
        elif cfg.permutation in (CONDITIONAL_ADDITIVE, CONDITIONAL_SAMPLING):
            mode = cfg.permutation
        else:
            mode = CONDITIONAL_ADDITIVE
        if name == BCPI_RF:
            learner_cfg = base_forest
        else:
            learner_cfg = _mlp_config(cfg, spec, mspec.stacking)
        report = run_importance(
            dataset, spec, learner_cfg,
            permutation=mode,
            n_permutations=cfg.n_permutations,
            seed=seed,
            conditional_forest=cfg.conditional_forest,
        )
        return {
            "p_values": report.p_values,
            "scores": report.means,
            "prediction_score": report.prediction_score,
            "fit_seconds": report.fit_seconds,
            "importance_seconds": report.importance_seconds,
        }
    if name == MARGINAL:
        result = run_marginal(dataset, spec)
    elif name == LOGI:
        result = run_logi(dataset, spec, forest_cfg=base_forest, seed=seed)
    elif name == LOGO:
        result = run_logo(dataset, spec, forest_cfg=base_forest, seed=seed)
    elif name == GPFI:
        result = run_gpfi(
            dataset, spec, forest_cfg=base_forest,
            n_permutations=cfg.n_permutations, seed=seed,
        )
    elif name == GOPFI:
        result = run_gopfi(
            dataset, spec, forest_cfg=base_forest,
            n_permutations=cfg.n_permutations, seed=seed,
        )
    else:
        raise ValueError(f"unknown method {name!r}")
    return {
        "p_values": result.p_values,
        "scores": result.scores,
        "prediction_score": result.prediction_score,
        "fit_seconds": result.fit_seconds,
        "importance_seconds": result.importance_seconds,
    }


def _run_cell(cfg, master_seed, rho_index, rho, run):
    """All methods on one freshly simulated dataset."""
    data_seed = derive_seed(master_seed, f"data-rho{rho_index}", run)
    covariance = replace(cfg.covariance, rho_inter=rho)
    dataset, spec, truth = simulate_dataset(
        covariance, cfg.outcome, cfg.n_samples, data_seed, sigma=cfg.sigma
    )
    records = []
    for mspec in cfg.methods:
        method_seed = derive_seed(
            master_seed, f"method-{mspec.label}-rho{rho_index}", run
        )
        record = {
            "method": mspec.label,
            "rho_inter": float(rho),
            "run": int(run),
            "data_seed": int(data_seed),
            "method_seed": int(method_seed),
            "important_groups": truth.important_groups.tolist(),
            "p_values": None,
            "scores": None,
            "prediction_score": None,
            "fit_seconds": None,
            "importance_seconds": None,
            "time_seconds": None,
            "error": None,
        }
        try:
            result = run_method(mspec, dataset, spec, cfg, method_seed)
            p_values = result["p_values"]
            record.update(
                p_values=None if p_values is None else [float(v) for v in p_values],
                scores=[float(v) for v in result["scores"]],
                prediction_score=float(result["prediction_score"]),
                fit_seconds=float(result["fit_seconds"]),
                importance_seconds=float(result["importance_seconds"]),
                time_seconds=float(result["fit_seconds"] + result["importance_seconds"]),
            )
        except Exception as exc:  # per-run failures are recorded, never dropped
            record["error"] = f"{type(exc).__name__}: {exc}"
        records.append(record)
    return records


def aggregate_records(records, alpha=0.05):
    """Reduce raw per-run records to one MetricsRow per (method, rho_inter)."""
    rows = []
    keys = sorted({(r["method"], r["rho_inter"]) for r in records})
    for method, rho in keys:
        cell = [
            r
            for r in records
            if r["method"] == method and r["rho_inter"] == rho and r["error"] is None
        ]
        if not cell:
            rows.append(
                MetricsRow(method, rho, *(float("nan"),) * 5)
            )
            continue
        aucs = []
        for r in cell:
            ranking = r["p_values"] if r["p_values"] is not None else r["scores"]
            direction = LOWER if r["p_values"] is not None else HIGHER
            try:
                aucs.append(auc_ranking(ranking, r["important_groups"], direction))
            except DegenerateTruth:
                pass
        with_p = [r for r in cell if r["p_values"] is not None]
        type1 = power_rate = float("nan")
        if with_p:
            pmat = np.array([r["p_values"] for r in with_p], dtype=float)
            truth = np.asarray(with_p[0]["important_groups"], dtype=bool)
            if not truth.all():
                type1 = type_one_error(pmat, truth, alpha)
            if truth.any():
                power_rate = power(pmat, truth, alpha)
        rows.append(
            MetricsRow(
                method=method,
                rho_inter=rho,
                auc=float(np.mean(aucs)) if aucs else float("nan"),
                type1=type1,
                power=power_rate,
                time_seconds=float(np.mean([r["time_seconds"] for r in cell])),
                prediction_score=float(
                    np.mean([r["prediction_score"] for r in cell])
                ),
            )
        )
    return rows


def run_experiment(cfg, master_seed, n_jobs=None):
    """Execute the full sweep; returns (metrics rows, raw per-run records).

    Every cell derives its own seeds, so results are independent of worker
    scheduling; records come back sorted by (method, rho_inter, run).
    """
    cells = [
        (index, rho, run)
        for index, rho in enumerate(cfg.rho_inter_sweep)
        for run in range(cfg.runs)
    ]
    workers = resolve_workers(n_jobs)
    nested = Parallel(n_jobs=workers)(
        delayed(_run_cell)(cfg, master_seed, index, rho, run)
        for index, rho, run in cells
    )
    records = [record for batch in nested for record in batch]
    records.sort(key=lambda r: (r["method"], r["rho_inter"], r["run"]))
    return aggregate_records(records, cfg.alpha), records


def write_metrics_csv(rows, path):
    frame = pd.DataFrame([row.__dict__ for row in rows])
    frame.to_csv(path, index=False)


def read_metrics_csv(path):
    frame = pd.read_csv(path)
    return [MetricsRow(**record) for record in frame.to_dict(orient="records")]


def write_raw_jsonl(records, path):
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_raw_jsonl(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
