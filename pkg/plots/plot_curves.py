#!/usr/bin/env python3
"""Median error curves from experiment CSVs.

Reads the grid-runner CSV schema (columns k, r, err_norm_sq, ...) and draws
the median normalized squared error against r at fixed k values, or against
k at fixed r values. Each point is the cell median; whiskers show the
interquartile range. Batch PNG output only.

Usage:
    plot_curves.py --csv results.csv --axis r --fixed 10,14,18 --out fig1a.png
"""

from __future__ import annotations

import argparse
import csv
import statistics
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

REQUIRED_COLUMNS = {"k", "r", "err_norm_sq"}

VS_R = "vs_r"
VS_K = "vs_k"

_AXIS_ALIASES = {"r": VS_R, "k": VS_K, VS_R: VS_R, VS_K: VS_K}

_LABELS = {
    VS_R: ("rank r", "k"),
    VS_K: ("row sparsity k", "r"),
}

Y_LABEL = "median normalized squared error  ||Xhat - X*||_F^2 / sigma^2"


class SchemaError(ValueError):
    """CSV is missing columns the plot needs."""


class EmptySelectionError(ValueError):
    """No rows match the requested fixed values."""


def load_rows(csv_path: str | Path) -> list[dict]:
    """Parse the grid CSV into dicts with integer k, r and float err_norm_sq."""
    with open(csv_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = set(reader.fieldnames or [])
        missing = REQUIRED_COLUMNS - header
        if missing:
            raise SchemaError(f"{csv_path}: missing columns {sorted(missing)}")
        return [
            {"k": int(row["k"]), "r": int(row["r"]), "err_norm_sq": float(row["err_norm_sq"])}
            for row in reader
        ]


def curve_data(
    rows: list[dict], axis: str, fixed_values: list[int]
) -> dict[int, list[tuple[int, float, float, float]]]:
    """Group rows into curves: fixed value -> [(x, median, q1, q3), ...].

    ``axis`` selects the sweep variable ("r"/"vs_r" sweeps r at fixed k,
    "k"/"vs_k" sweeps k at fixed r). Medians use the plain sample median;
    q1/q3 are inclusive quartiles.
    """
    try:
        mode = _AXIS_ALIASES[axis]
    except KeyError:
        raise ValueError(f"axis must be one of {sorted(_AXIS_ALIASES)}, got {axis!r}")
    sweep_name, fixed_name = ("r", "k") if mode == VS_R else ("k", "r")

    curves: dict[int, list[tuple[int, float, float, float]]] = {}
    for fixed in fixed_values:
        cells: dict[int, list[float]] = defaultdict(list)
        for row in rows:
            if row[fixed_name] == fixed:
                cells[row[sweep_name]].append(row["err_norm_sq"])
        if not cells:
            continue
        points = []
        for x in sorted(cells):
            vals = cells[x]
            med = statistics.median(vals)
            if len(vals) >= 2:
                q1, _, q3 = statistics.quantiles(vals, n=4, method="inclusive")
            else:
                q1 = q3 = med
            points.append((x, med, q1, q3))
        curves[fixed] = points
    if not curves:
        raise EmptySelectionError(
            f"no rows with {fixed_name} in {fixed_values}; nothing to plot"
        )
    return curves


def plot_error_curves(
    csv_path: str | Path,
    axis: str,
    fixed_values: list[int],
    out_path: str | Path,
) -> dict[int, list[tuple[int, float, float, float]]]:
    """Render one curve per fixed value and return the plotted data."""
    rows = load_rows(csv_path)
    curves = curve_data(rows, axis, fixed_values)
    mode = _AXIS_ALIASES[axis]
    x_label, fixed_name = _LABELS[mode]

    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for fixed in sorted(curves):
        points = curves[fixed]
        xs = [p[0] for p in points]
        med = [p[1] for p in points]
        lower = [p[1] - p[2] for p in points]
        upper = [p[3] - p[1] for p in points]
        ax.errorbar(
            xs, med, yerr=[lower, upper], marker="o", capsize=3,
            label=f"{fixed_name} = {fixed}",
        )
    ax.set_xlabel(x_label)
    ax.set_ylabel(Y_LABEL)
    ax.set_title("Reconstruction error growth (whiskers: interquartile range)")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path, format="png", dpi=150)
    plt.close(fig)
    return curves


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--csv", required=True, help="experiment results CSV")
    parser.add_argument("--axis", required=True, choices=["r", "k"],
                        help="sweep variable on the x axis")
    parser.add_argument("--fixed", required=True,
                        help="comma-separated values of the other variable, e.g. 10,14,18")
    parser.add_argument("--out", required=True, help="output PNG path")
    args = parser.parse_args(argv)

    fixed_values = [int(v) for v in args.fixed.split(",") if v.strip()]
    try:
        curves = plot_error_curves(args.csv, args.axis, fixed_values, args.out)
    except (SchemaError, EmptySelectionError, OSError) as exc:
        print(f"plot_curves: error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {args.out} with {len(curves)} curves")
    return 0


if __name__ == "__main__":
    sys.exit(main())
