"""Command-line entry point: simulate, fit, importance, benchmark, report.

Exit codes: 0 on success, 1 on usage errors (the message names the offending
flag), 2 on runtime failures (a structured JSON error object is written to
stderr). All configuration is JSON; tabular outputs are CSV; figures are SVG.
"""

import argparse
import importlib.resources
import json
import os
import sys
from dataclasses import replace

import numpy as np
import pandas as pd

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
from .benchmark import (
    BCPI_DNN,
    BCPI_RF,
    BPI_DNN,
    METHODS,
    ExperimentConfig,
    run_experiment,
    write_metrics_csv,
    write_raw_jsonl,
)
from .errors import BcpiError, UsageError
from .inference import (
    CONDITIONAL_ADDITIVE,
    CONDITIONAL_SAMPLING,
    STANDARD,
    fit_crossfit,
    run_importance,
)
from .learners import (
    ForestConfig,
    LinearConfig,
    MlpConfig,
    StackingConfig,
    load_learner,
    save_learner,
)
from .simulation import (
    BlockCovarianceConfig,
    OutcomeConfig,
    simulate_dataset,
)
from .types import (
    load_dataset_csv,
    load_groups_json,
    save_dataset_csv,
    save_groups_json,
)

PERMUTATION_CHOICES = (CONDITIONAL_ADDITIVE, CONDITIONAL_SAMPLING, STANDARD)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="bcpi", description=__doc__)
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    simulate = commands.add_parser("simulate", help="write a synthetic dataset")
    simulate.add_argument("--config", required=True, help="JSON config or preset name")
    simulate.add_argument("--seed", required=True, type=int)
    simulate.add_argument("--out", required=True, help="output directory")

    fit = commands.add_parser("fit", help="train the cross-fitted learners")
    fit.add_argument("--data", required=True, help="dataset CSV")
    fit.add_argument("--groups", help="groups JSON (needed for stacking)")
    fit.add_argument("--config", help="JSON config or preset name")
    fit.add_argument("--method", default=BCPI_DNN, choices=METHODS)
    fit.add_argument("--stacking", choices=("on", "off"))
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--out", required=True, help="model file to write")

    importance = commands.add_parser("importance", help="group importance with p-values")
    importance.add_argument("--data", required=True, help="dataset CSV")
    importance.add_argument("--groups", required=True, help="groups JSON")
    importance.add_argument("--config", help="JSON config or preset name")
    importance.add_argument("--method", default=BCPI_DNN, choices=METHODS)
    importance.add_argument("--permutations", type=int)
    importance.add_argument("--stacking", choices=("on", "off"))
    importance.add_argument("--model", help="cross-fit bundle written by `fit`")
    importance.add_argument("--seed", type=int, default=0)
    importance.add_argument("--out", default=".", help="output directory")

    benchmark = commands.add_parser("benchmark", help="multi-run experiment sweep")
    benchmark.add_argument("--config", required=True, help="JSON config or preset name")
    benchmark.add_argument("--seed", required=True, type=int)
    benchmark.add_argument("--out", required=True, help="output directory")

    report = commands.add_parser("report", help="render figures from benchmark output")
    report.add_argument("--data", required=True, help="benchmark output directory")
    report.add_argument("--out", help="figure directory (default: same as --data)")

    return parser


def _resolve_config_path(value):
    if os.path.exists(value):
        return value
    name = value if value.endswith(".json") else value + ".json"
    resource = importlib.resources.files("bcpi").joinpath("presets", name)
    if resource.is_file():
        return resource
    raise UsageError(f"--config: no such file or preset: {value}")


def load_config(value):
    """Read a JSON config given a path or a packaged preset name."""
    if value is None:
        return {}
    resolved = _resolve_config_path(value)
    try:
        if hasattr(resolved, "read_text"):
            return json.loads(resolved.read_text())
        with open(resolved) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config: invalid JSON in {value}: {exc}") from exc


def list_presets():
    folder = importlib.resources.files("bcpi").joinpath("presets")
    return sorted(p.name[: -len(".json")] for p in folder.iterdir() if p.name.endswith(".json"))


def _require_file(path, flag):
    if not os.path.exists(path):
        raise UsageError(f"{flag}: no such file: {path}")
    return path


def _prepare_out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"--out: cannot create directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise UsageError(f"--out: directory not writable: {path}")
    return path


def _learner_config(config, method, stacking, spec):
    overrides = dict(config.get("learner", {}))
    if method == BCPI_RF:
        forest = config.get("base_forest", {})
        return ForestConfig(**forest)
    if "hidden_layers" in overrides:
        overrides["hidden_layers"] = tuple(overrides["hidden_layers"])
    mlp = MlpConfig(**overrides)
    if stacking:
        if spec is None:
            raise UsageError("--stacking: stacking needs --groups")
        mlp = replace(mlp, stacking=StackingConfig(spec=spec))
    return mlp


def _stacking_flag(args, config):
    if args.stacking is not None:
        return args.stacking == "on"
    return bool(config.get("stacking", False))


def _cmd_simulate(args):
    config = load_config(args.config)
    sim = config.get("simulation")
    if sim is None:
        raise UsageError("--config: missing a 'simulation' section")
    out = _prepare_out_dir(args.out)
    cov = BlockCovarianceConfig(**sim["covariance"])
    outcome = OutcomeConfig(**sim["outcome"])
    dataset, spec, truth = simulate_dataset(
        cov, outcome, int(sim["n_samples"]), args.seed, sigma=sim.get("sigma")
    )
    save_dataset_csv(dataset, os.path.join(out, "dataset.csv"),
                     outcome_column=config.get("outcome_column", "y"))
    save_groups_json(spec, os.path.join(out, "groups.json"))
    with open(os.path.join(out, "truth.json"), "w") as fh:
        json.dump(
            {
                "beta": truth.beta.tolist(),
                "sigma": truth.sigma,
                "important_groups": truth.important_groups.tolist(),
                "quad_pairs": [list(p) for p in truth.quad_pairs],
                "quad_coefs": list(truth.quad_coefs),
                "seed": args.seed,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"wrote dataset.csv, groups.json, truth.json to {out}")
    return 0


def _load_inputs(args, config):
    _require_file(args.data, "--data")
    dataset = load_dataset_csv(
        args.data,
        outcome_column=config.get("outcome_column", "y"),
        task=config.get("task"),
    )
    spec = None
    if getattr(args, "groups", None):
        _require_file(args.groups, "--groups")
        spec = load_groups_json(args.groups)
    return dataset, spec


def _cmd_fit(args):
    config = load_config(args.config)
    dataset, spec = _load_inputs(args, config)
    stacking = _stacking_flag(args, config)
    learner_cfg = _learner_config(config, args.method, stacking, spec)
    bundle = fit_crossfit(dataset, learner_cfg, args.seed)
    bundle.method = args.method
    parent = os.path.dirname(os.path.abspath(args.out))
    if not os.path.isdir(parent):
        _prepare_out_dir(parent)
    save_learner(bundle, args.out)
    print(f"wrote cross-fit bundle to {args.out}")
    return 0


def _run_single_method(args, config, dataset, spec):
    n_permutations = args.permutations or int(config.get("permutations", 100))
    mode = config.get("permutation", CONDITIONAL_ADDITIVE)
    if mode not in PERMUTATION_CHOICES:
        raise UsageError(f"--config: unknown permutation mode {mode!r}")
    cond_cfg = (
        ForestConfig(**config["conditional_forest"])
        if "conditional_forest" in config
        else None
    )
    base_forest = ForestConfig(**config.get("base_forest", {}))
    stacking = _stacking_flag(args, config)

    if args.method in (BCPI_DNN, BPI_DNN, BCPI_RF):
        learner_cfg = _learner_config(config, args.method, stacking, spec)
        permutation = STANDARD if args.method == BPI_DNN else mode
        prefit = None
        if args.model:
            _require_file(args.model, "--model")
            prefit = load_learner(args.model)
        report = run_importance(
            dataset, spec, learner_cfg,
            permutation=permutation,
            n_permutations=n_permutations,
            seed=args.seed,
            conditional_forest=cond_cfg,
            prefit=prefit,
        )
        rows = report.rows()
        meta = {
            "permutation": report.permutation,
            "prediction_score": report.prediction_score,
            "fit_seconds": report.fit_seconds,
            "importance_seconds": report.importance_seconds,
            "errors": report.errors,
        }
        return rows, meta

    if args.method == MARGINAL:
        result = run_marginal(dataset, spec)
    elif args.method == LOGI:
        result = run_logi(dataset, spec, forest_cfg=base_forest, seed=args.seed)
    elif args.method == LOGO:
        result = run_logo(dataset, spec, forest_cfg=base_forest, seed=args.seed)
    elif args.method == GPFI:
        result = run_gpfi(dataset, spec, forest_cfg=base_forest,
                          n_permutations=n_permutations, seed=args.seed)
    else:
        result = run_gopfi(dataset, spec, forest_cfg=base_forest,
                           n_permutations=n_permutations, seed=args.seed)
    rows = []
    for k in range(spec.n_groups):
        p = float(result.p_values[k]) if result.p_values is not None else np.nan
        rows.append((k, spec.names[k], float(result.scores[k]), np.nan, np.nan, p))
    meta = {
        "prediction_score": result.prediction_score,
        "fit_seconds": result.fit_seconds,
        "importance_seconds": result.importance_seconds,
    }
    return rows, meta


def _cmd_importance(args):
    config = load_config(args.config)
    dataset, spec = _load_inputs(args, config)
    out = _prepare_out_dir(args.out)
    rows, meta = _run_single_method(args, config, dataset, spec)
    frame = pd.DataFrame(
        rows, columns=["group", "name", "mean", "std", "z", "p_value"]
    )
    csv_path = os.path.join(out, "importance.csv")
    frame.to_csv(csv_path, index=False)
    sidecar = {
        "method": args.method,
        "seed": args.seed,
        "data": os.path.abspath(args.data),
        "groups": os.path.abspath(args.groups),
        "config": config,
        **meta,
    }
    with open(os.path.join(out, "importance.json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, default=str)
        fh.write("\n")
    print(frame.to_string(index=False))
    return 0


def _cmd_benchmark(args):
    config = load_config(args.config)
    if "simulation" not in config or "benchmark" not in config:
        raise UsageError("--config: needs 'simulation' and 'benchmark' sections")
    out = _prepare_out_dir(args.out)
    cfg = ExperimentConfig.from_dict(config)
    rows, records = run_experiment(cfg, args.seed)
    write_metrics_csv(rows, os.path.join(out, "metrics.csv"))
    write_raw_jsonl(records, os.path.join(out, "raw.jsonl"))
    with open(os.path.join(out, "config.json"), "w") as fh:
        json.dump({"config": config, "seed": args.seed}, fh, indent=2)
        fh.write("\n")
    print(f"wrote metrics.csv and raw.jsonl to {out}")
    return 0


def _cmd_report(args):
    from .report import render_report

    metrics = os.path.join(args.data, "metrics.csv")
    _require_file(metrics, "--data")
    raw = os.path.join(args.data, "raw.jsonl")
    out = _prepare_out_dir(args.out or args.data)
    written = render_report(metrics, raw_path=raw if os.path.exists(raw) else None,
                            out_dir=out)
    print("wrote " + ", ".join(written))
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "fit": _cmd_fit,
    "importance": _cmd_importance,
    "benchmark": _cmd_benchmark,
    "report": _cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        payload = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(payload), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
