"""Render figures from harness CSVs.

Three kinds, selected by a small JSON figure spec:
  bars    - grouped bars of active-AP count and mean SE per method, with
            std error bars (evaluation CSVs)
  pareto  - SE vs active-AP trade-off markers with error bars
            (evaluation CSVs or a sweep CSV)
  latency - per-method latency distributions on a log axis (bench CSV)

The plotting layer never recomputes physics: bars and markers carry the
CSV summary values verbatim, and every annotation prints the exact CSV
string so figures can be cross-checked against their inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.fonttype"] = "none"  # keep annotations as literal text
import matplotlib.pyplot as plt
import numpy as np


class FigureError(Exception):
    pass


EVAL_REQUIRED = ("window", "active_aps", "total_power_w", "mean_se", "mean_cost")
SWEEP_REQUIRED = ("eta", "seed", "mean_se", "std_se", "mean_active_aps", "std_active_aps")
BENCH_REQUIRED = ("method", "rep", "latency_s")


def read_csv_rows(path) -> list[dict]:
    try:
        with open(path, newline="") as f:
            rows = list(csv.DictReader(f))
    except OSError as exc:
        raise FigureError(f"cannot read {path}: {exc}")
    if not rows:
        raise FigureError(f"{path}: no data rows")
    return rows


def require_columns(path, rows: list[dict], required) -> None:
    have = set(rows[0].keys())
    for col in required:
        if col not in have:
            raise FigureError(f"{path}: missing required column {col!r}")


def eval_summary(path) -> dict:
    """Mean/std summary rows of an evaluation CSV, values kept as the
    original strings plus parsed floats."""
    rows = read_csv_rows(path)
    require_columns(path, rows, EVAL_REQUIRED)
    mean_row = next((r for r in rows if r["window"] == "mean"), None)
    std_row = next((r for r in rows if r["window"] == "std"), None)
    if mean_row is None or std_row is None:
        raise FigureError(f"{path}: missing mean/std summary rows")
    return {"mean": mean_row, "std": std_row}


def load_series(spec) -> list[dict]:
    series = spec.get("series")
    if not series:
        raise FigureError("figure spec: empty or missing 'series'")
    out = []
    for entry in series:
        if "label" not in entry or "csv" not in entry:
            raise FigureError("figure spec: each series needs 'label' and 'csv'")
        summary = eval_summary(entry["csv"])
        out.append({"label": entry["label"], **summary})
    return out


def _annotate(ax, x, y, text):
    ax.annotate(text, (x, y), textcoords="offset points", xytext=(0, 4),
                ha="center", fontsize=7)


def render_bars(spec, fig) -> None:
    series = load_series(spec)
    ax_ap, ax_se = fig.subplots(1, 2)
    labels = [s["label"] for s in series]
    x = np.arange(len(series))
    ap_mean = [float(s["mean"]["active_aps"]) for s in series]
    ap_std = [float(s["std"]["active_aps"]) for s in series]
    se_mean = [float(s["mean"]["mean_se"]) for s in series]
    se_std = [float(s["std"]["mean_se"]) for s in series]

    ax_ap.bar(x, ap_mean, yerr=ap_std, capsize=3, color="tab:blue")
    ax_ap.set_xticks(x, labels, rotation=20, ha="right")
    ax_ap.set_ylabel("active APs (mean)")
    for xi, s in zip(x, series):
        _annotate(ax_ap, xi, float(s["mean"]["active_aps"]), s["mean"]["active_aps"])

    ax_se.bar(x, se_mean, yerr=se_std, capsize=3, color="tab:orange")
    ax_se.set_xticks(x, labels, rotation=20, ha="right")
    ax_se.set_ylabel("spectral efficiency (bits/s/Hz)")
    for xi, s in zip(x, series):
        _annotate(ax_se, xi, float(s["mean"]["mean_se"]), s["mean"]["mean_se"])
    if spec.get("se_target") is not None:
        ax_se.axhline(float(spec["se_target"]), ls="--", color="k", lw=1,
                      label="SE target")
        ax_se.legend(fontsize=8)


def render_pareto(spec, fig) -> None:
    ax = fig.subplots()
    if "sweep_csv" in spec:
        rows = read_csv_rows(spec["sweep_csv"])
        require_columns(spec["sweep_csv"], rows, SWEEP_REQUIRED)
        for r in rows:
            x, y = float(r["mean_active_aps"]), float(r["mean_se"])
            ax.errorbar(x, y, xerr=float(r["std_active_aps"]), yerr=float(r["std_se"]),
                        marker="o", capsize=3)
            _annotate(ax, x, y, f"eta={r['eta']}: {r['mean_se']}")
    else:
        for s in load_series(spec):
            x = float(s["mean"]["active_aps"])
            y = float(s["mean"]["mean_se"])
            ax.errorbar(x, y, xerr=float(s["std"]["active_aps"]),
                        yerr=float(s["std"]["mean_se"]), marker="o", capsize=3,
                        label=s["label"])
            _annotate(ax, x, y, s["mean"]["mean_se"])
        ax.legend(fontsize=8)
    if spec.get("se_target") is not None:
        ax.axhline(float(spec["se_target"]), ls="--", color="k", lw=1)
    ax.set_xlabel("active APs (mean)")
    ax.set_ylabel("spectral efficiency (bits/s/Hz)")


def render_latency(spec, fig) -> None:
    path = spec.get("csv")
    if not path:
        raise FigureError("figure spec: latency figures need 'csv'")
    rows = read_csv_rows(path)
    require_columns(path, rows, BENCH_REQUIRED)
    methods: dict[str, list[float]] = {}
    for r in rows:
        methods.setdefault(r["method"], []).append(float(r["latency_s"]))
    ax = fig.subplots()
    data = [np.log10(np.array(v)) for v in methods.values()]
    parts = ax.violinplot(data, showmedians=True)
    del parts
    ax.set_xticks(np.arange(1, len(methods) + 1), list(methods.keys()),
                  rotation=20, ha="right")
    ax.set_ylabel("per-decision latency, log10(s)")
    for i, (name, vals) in enumerate(methods.items(), start=1):
        med = float(np.median(vals))
        _annotate(ax, i, np.log10(med), f"{med:.6g}")


RENDERERS = {"bars": render_bars, "pareto": render_pareto, "latency": render_latency}


def render(spec: dict) -> list[str]:
    """Validate the spec, draw the figure, emit PNG and SVG.

    No file is written unless every input validates.
    """
    kind = spec.get("kind")
    if kind not in RENDERERS:
        raise FigureError(f"figure spec: unknown kind {kind!r}")
    output = spec.get("output")
    if not output:
        raise FigureError("figure spec: missing 'output'")
    fig = plt.figure(figsize=tuple(spec.get("figsize", (7, 3.2))))
    try:
        RENDERERS[kind](spec, fig)
        if spec.get("title"):
            fig.suptitle(spec["title"])
        fig.tight_layout()
        out = Path(output)
        out.parent.mkdir(parents=True, exist_ok=True)
        paths = []
        for ext in ("png", "svg"):
            p = out.with_suffix("." + ext)
            fig.savefig(p, dpi=150)
            paths.append(str(p))
        return paths
    finally:
        plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Render cfaps result figures")
    parser.add_argument("--spec", required=True, help="JSON figure spec path")
    args = parser.parse_args(argv)
    try:
        with open(args.spec) as f:
            spec = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot load spec: {exc}", file=sys.stderr)
        return 1
    try:
        for p in render(spec):
            print(p)
    except FigureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
