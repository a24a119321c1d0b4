"""Static SVG reports rendered from run-directory CSVs.

Pure file-to-file: nothing is recomputed, and the SVG bytes are
deterministic for identical inputs (fixed hash salt, no timestamp
metadata).
"""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_SVG_SETTINGS = {"svg.hashsalt": "habclust", "svg.fonttype": "path"}


def _read_trace(path: str) -> dict[str, list]:
    columns: dict[str, list] = {}
    with open(path) as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            for key, value in row.items():
                columns.setdefault(key, []).append(value)
    for key in ("step", "eta"):
        if key in columns:
            columns[key] = [int(v) for v in columns[key]]
    for key in ("gamma", "L_s", "L_p", "L", "best"):
        if key in columns:
            columns[key] = [float(v) for v in columns[key]]
    return columns


def _read_km(path: str) -> tuple[dict[str, list[tuple[float, float]]], str]:
    groups: dict[str, list[tuple[float, float]]] = {}
    note = ""
    with open(path) as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            note = line.lstrip("# ").strip()
        elif line:
            body.append(line)
    reader = csv.DictReader(body)
    for row in reader:
        groups.setdefault(row["group"], []).append((float(row["time"]), float(row["survival"])))
    return groups, note


def _km_steps(points: list[tuple[float, float]]) -> tuple[list[float], list[float]]:
    xs, ys = [0.0], [1.0]
    for t, s in sorted(points):
        xs.extend([t, t])
        ys.extend([ys[-1], s])
    return xs, ys


def render_bo_trace(trace_csv: str, out_svg: str) -> None:
    data = _read_trace(trace_csv)
    steps = data["step"]
    with plt.rc_context(_SVG_SETTINGS):
        fig, ax_left = plt.subplots(figsize=(7.0, 4.2))
        ax_right = ax_left.twinx()
        ax_left.plot(steps, data["L_s"], color="tab:blue", marker=".", label="stability loss")
        ax_right.plot(steps, data["L_p"], color="tab:green", marker=".", label="p-value loss")
        ax_right.plot(steps, data["L"], color="tab:orange", marker=".", label="joint loss")
        ax_right.plot(steps, data["best"], color="black", linestyle="--", label="best so far")
        n_initial = sum(1 for kind in data["kind"] if kind == "initial")
        if 0 < n_initial < len(steps):
            ax_left.axvline(n_initial - 0.5, color="gray", linewidth=0.8, linestyle=":")
        ax_left.set_xlabel("evaluation")
        ax_left.set_ylabel("stability loss", color="tab:blue")
        ax_right.set_ylabel("p-value / joint loss")
        handles, labels = [], []
        for ax in (ax_left, ax_right):
            h, l = ax.get_legend_handles_labels()
            handles += h
            labels += l
        ax_left.legend(handles, labels, loc="upper right", fontsize=8)
        fig.tight_layout()
        fig.savefig(out_svg, format="svg", metadata={"Date": None})
        plt.close(fig)


def render_km(km_csvs: dict[str, str], out_svg: str) -> None:
    with plt.rc_context(_SVG_SETTINGS):
        fig, ax = plt.subplots(figsize=(7.0, 4.2))
        styles = {"train": "-", "test": "--"}
        colors = {"high": "tab:red", "low": "tab:blue"}
        notes = []
        for split, path in km_csvs.items():
            groups, note = _read_km(path)
            if note:
                notes.append(f"{split}: {note}")
            for group, points in sorted(groups.items()):
                xs, ys = _km_steps(points)
                ax.plot(
                    xs,
                    ys,
                    linestyle=styles.get(split, "-"),
                    color=colors.get(group, "gray"),
                    label=f"{split} {group}",
                )
        ax.set_xlabel("time")
        ax.set_ylabel("survival probability")
        ax.set_ylim(-0.02, 1.02)
        ax.legend(loc="upper right", fontsize=8)
        if notes:
            ax.set_title("; ".join(notes), fontsize=8)
        fig.tight_layout()
        fig.savefig(out_svg, format="svg", metadata={"Date": None})
        plt.close(fig)


def render_run(run_dir: str) -> list[str]:
    """Render the optimization trace and the survival curves; returns the
    written SVG paths."""
    written = []
    bo_svg = os.path.join(run_dir, "report_bo.svg")
    render_bo_trace(os.path.join(run_dir, "trace.csv"), bo_svg)
    written.append(bo_svg)
    km_csvs = {}
    for split, fname in (("train", "km_train.csv"), ("test", "km_test.csv")):
        path = os.path.join(run_dir, fname)
        if os.path.exists(path):
            km_csvs[split] = path
    km_svg = os.path.join(run_dir, "report_km.svg")
    if km_csvs:
        render_km(km_csvs, km_svg)
        written.append(km_svg)
    return written
