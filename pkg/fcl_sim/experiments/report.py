"""
Aggregation of metrics CSVs across seeds and rendering of the Markdown report.
"""
from pathlib import Path
from typing import List, Tuple

import jinja2
import numpy as np
import pandas as pd

from fcl_sim.exceptions import SchemaError, ValidationError
from fcl_sim.experiments.reference import ABLATION_REFERENCE, reference_cell
from fcl_sim.federation import NegativesPolicy
from fcl_sim.logger import get_logger

logger = get_logger(__name__)

TEMPLATE_DIR = Path(__file__).parent / "templates"

METRIC_COLUMNS = [
    "method",
    "policy",
    "label_fraction",
    "seed",
    "mode",
    "mean_recall",
    "mean_precision",
]
GROUP_COLUMNS = ["mode", "method", "policy", "label_fraction"]
NO_POLICY = "-"


class ReportRenderer:
    """
    Renders Jinja2 templates from a directory.

    Example
    ----------
    renderer = ReportRenderer()
    text = renderer.render("report.md.j2", tables=[], ablation=None, ...)
    """

    def __init__(self, path=TEMPLATE_DIR):
        self._path = str(path)
        self._env = self._set_path()

    def _set_path(self):
        return jinja2.Environment(
            loader=jinja2.FileSystemLoader(self._path),
            undefined=jinja2.StrictUndefined,
            keep_trailing_newline=True,
        )

    def render(self, template_file: str, **kwargs) -> str:
        return self._env.get_template(template_file).render(kwargs)


def read_metrics(metrics_dir) -> Tuple[pd.DataFrame, List[Path]]:
    """
    Reads every ``metrics.csv`` below a directory.

    Raises
    ----------
    ValidationError
        When the directory holds no metrics files.
    SchemaError
        When a file lacks a required column; the error names the file.
    """
    metrics_dir = Path(metrics_dir)
    if not metrics_dir.is_dir():
        raise FileNotFoundError(f"metrics directory {metrics_dir} does not exist")

    files = sorted(metrics_dir.rglob("metrics.csv"))
    if not files:
        raise ValidationError(f"no metrics.csv files under {metrics_dir}")

    frames = []
    for path in files:
        frame = pd.read_csv(path, keep_default_na=False)
        missing = [c for c in METRIC_COLUMNS if c not in frame.columns]
        if missing:
            raise SchemaError(f"missing columns {missing}", path=str(path))
        frames.append(frame)

    return pd.concat(frames, ignore_index=True), files


def summarize(frame: pd.DataFrame) -> pd.DataFrame:
    """
    Mean and population std (ddof=0) of the headline metrics over seeds.
    """
    grouped = frame.groupby(GROUP_COLUMNS, sort=True)
    summary = grouped.agg(
        recall_mean=("mean_recall", "mean"),
        recall_std=("mean_recall", lambda s: float(np.std(s, ddof=0))),
        precision_mean=("mean_precision", "mean"),
        precision_std=("mean_precision", lambda s: float(np.std(s, ddof=0))),
        n_seeds=("seed", "nunique"),
    )
    return summary.reset_index()


def _label(method: str, policy: str) -> str:
    return method if policy in (NO_POLICY, "") else f"{method} ({policy})"


def _cell(row) -> str:
    return (
        f"{100 * row.recall_mean:.2f} ± {100 * row.recall_std:.2f} / "
        f"{100 * row.precision_mean:.2f} ± {100 * row.precision_std:.2f}"
    )


def _tables(summary: pd.DataFrame) -> List[dict]:
    tables = []
    for mode, block in summary.groupby("mode", sort=True):
        fractions = sorted(block["label_fraction"].unique().tolist())
        rows, reference = [], []
        for (method, policy), runs in block.groupby(["method", "policy"], sort=True):
            by_fraction = {r.label_fraction: r for r in runs.itertuples()}
            rows.append(
                {
                    "label": _label(method, policy),
                    "cells": [
                        _cell(by_fraction[f]) if f in by_fraction else "n/a" for f in fractions
                    ],
                }
            )

        for method in ("random_init", "local_cl", "fcl"):
            cells = [reference_cell(mode, method, f) for f in fractions]
            if any(c is not None for c in cells):
                reference.append(
                    {
                        "label": method,
                        "cells": ["n/a" if c is None else f"{c[0]:.2f} / {c[1]:.2f}" for c in cells],
                    }
                )

        tables.append(
            {
                "title": f"{mode.capitalize()} fine-tuning",
                "fractions": fractions,
                "rows": rows,
                "reference": reference,
            }
        )
    return tables


def ablation_rows(table: pd.DataFrame) -> List[dict]:
    rows = []
    for r in table.itertuples():
        rows.append(
            {
                "policy": r.policy,
                "recall": f"{100 * r.recall_mean:.2f} ± {100 * r.recall_std:.2f}",
                "precision": f"{100 * r.precision_mean:.2f} ± {100 * r.precision_std:.2f}",
                "delta": "" if pd.isna(r.delta_recall) else f"{100 * r.delta_recall:+.2f}",
                "reference": f"{ABLATION_REFERENCE[r.policy]:.2f}",
            }
        )
    return rows


def ablation_table(
    frame: pd.DataFrame, mode: str = "federated", fraction: float = 0.1
) -> pd.DataFrame:
    """
    One row per negatives policy with seed-averaged metrics and the change in
    each metric relative to the previous policy (later minus earlier).
    """
    selected = (
        (frame["method"] == "fcl")
        & (frame["mode"] == mode)
        & np.isclose(frame["label_fraction"], fraction)
    )
    summary = summarize(frame[selected])
    order = [p.value for p in NegativesPolicy]
    table = summary.set_index("policy").reindex(order).reset_index()
    if table["recall_mean"].isna().any():
        raise ValidationError(f"ablation needs fcl metrics for every policy in {order}")

    table["delta_recall"] = table["recall_mean"].diff()
    table["delta_precision"] = table["precision_mean"].diff()
    table["reference_recall"] = [ABLATION_REFERENCE[p] for p in order]
    return table[
        [
            "policy",
            "label_fraction",
            "recall_mean",
            "recall_std",
            "precision_mean",
            "precision_std",
            "delta_recall",
            "delta_precision",
            "reference_recall",
            "n_seeds",
        ]
    ]


def ablation_deltas(table: pd.DataFrame) -> pd.DataFrame:
    """Every pairwise later-minus-earlier difference between policies."""
    records = table.set_index("policy")
    policies = list(records.index)
    rows = []
    for i, earlier in enumerate(policies):
        for later in policies[i + 1 :]:
            rows.append(
                {
                    "earlier": earlier,
                    "later": later,
                    "delta_recall": records.loc[later, "recall_mean"]
                    - records.loc[earlier, "recall_mean"],
                    "delta_precision": records.loc[later, "precision_mean"]
                    - records.loc[earlier, "precision_mean"],
                }
            )
    return pd.DataFrame(rows)


def render_report(metrics_dir) -> Tuple[str, pd.DataFrame]:
    """
    Returns the Markdown report and the summary frame it was built from.
    """
    frame, files = read_metrics(metrics_dir)
    summary = summarize(frame)

    ablation = None
    ablation_files = sorted(Path(metrics_dir).rglob("ablation.csv"))
    if ablation_files:
        ablation = ablation_rows(pd.read_csv(ablation_files[-1]))

    text = ReportRenderer().render(
        "report.md.j2",
        source=str(metrics_dir),
        n_files=len(files),
        n_rows=len(frame),
        tables=_tables(summary),
        ablation=ablation,
    )
    return text, summary
