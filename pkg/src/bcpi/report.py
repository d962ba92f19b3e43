"""SVG panels and a markdown summary for benchmark outputs.

One panel per metric (ranking AUC, type-I error, power, log10 wall time),
methods as lines over the correlation sweep. The type-I panel carries a
dashed reference at the nominal level and the AUC panel a solid reference at
chance; both lines are tagged with SVG ids so their presence is checkable.
"""

import datetime
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from .errors import MalformedMetrics

_REQUIRED_COLUMNS = {
    "method", "rho_inter", "auc", "type1", "power", "time_seconds",
    "prediction_score",
}

_PANELS = (
    ("auc", "AUC", "auc.svg"),
    ("type1", "Type-I error", "type1.svg"),
    ("power", "Power", "power.svg"),
    ("time_seconds", "log10 time (s)", "time.svg"),
)


def _load_metrics(metrics_path):
    try:
        frame = pd.read_csv(metrics_path)
    except Exception as exc:
        raise MalformedMetrics(f"could not parse {metrics_path}: {exc}") from exc
    if frame.empty:
        raise MalformedMetrics(f"{metrics_path} holds no benchmark rows")
    missing = _REQUIRED_COLUMNS - set(frame.columns)
    if missing:
        raise MalformedMetrics(
            f"{metrics_path} is missing columns: {sorted(missing)}"
        )
    return frame


def _panel(frame, column, ylabel, path, alpha):
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    for method, sub in frame.groupby("method"):
        sub = sub.sort_values("rho_inter")
        values = sub[column].to_numpy(dtype=float)
        if column == "time_seconds":
            values = np.log10(np.maximum(values, 1e-6))
        if np.isfinite(values).any():
            ax.plot(sub["rho_inter"], values, marker="o", label=method)
    if column == "type1":
        ax.axhline(alpha, linestyle="--", color="black", gid="reference-alpha")
    if column == "auc":
        ax.axhline(0.5, linestyle="-", color="black", gid="reference-chance")
        ax.set_ylim(0.0, 1.05)
    ax.set_xlabel("inter-group correlation")
    ax.set_ylabel(ylabel)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def render_report(metrics_path, raw_path=None, out_dir=".", alpha=0.05):
    """Render the four metric panels plus summary.md; returns written paths.

    ``raw_path`` is optional; when given, per-method failure counts from the
    raw archive are included in the summary.
    """
    frame = _load_metrics(metrics_path)
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for column, ylabel, filename in _PANELS:
        path = os.path.join(out_dir, filename)
        _panel(frame, column, ylabel, path, alpha)
        written.append(path)

    failures = None
    if raw_path is not None and os.path.exists(raw_path):
        from .benchmark import read_raw_jsonl

        records = read_raw_jsonl(raw_path)
        failures = {}
        for record in records:
            if record.get("error") is not None:
                failures[record["method"]] = failures.get(record["method"], 0) + 1

    summary = os.path.join(out_dir, "summary.md")
    with open(summary, "w") as fh:
        fh.write("# Benchmark summary\n\n")
        fh.write(f"Generated: {datetime.datetime.now().isoformat()}\n\n")
        columns = list(frame.columns)
        fh.write("| " + " | ".join(columns) + " |\n")
        fh.write("|" + "|".join("---" for _ in columns) + "|\n")
        for _, row in frame.iterrows():
            cells = [
                f"{v:.4g}" if isinstance(v, float) else str(v) for v in row.tolist()
            ]
            fh.write("| " + " | ".join(cells) + " |\n")
        if failures:
            fh.write("\n## Failed runs (excluded from aggregates)\n\n")
            for method, count in sorted(failures.items()):
                fh.write(f"- {method}: {count}\n")
        elif failures is not None:
            fh.write("\nNo failed runs.\n")
    written.append(summary)
    return written
