#!/usr/bin/env python3
"""Phase plots for tracking datasets and filter results.

Reads the JSONL files documented in ../docs/formats.md (the file format is
the sole contract with the producer: nothing is imported from it) and
renders one panel per input: the ground-truth panel first, then one panel
per result file. Tracks are polylines with a point per step and an enlarged
birth marker labelled with the birth time; dataset observations are grey
dots, and observations associated with a track are circled in result
panels. Each result panel is annotated with its log normalizing constant.

Usage:
    plot.py --truth dataset.jsonl --results r1.jsonl r2.jsonl ... --out fig.png
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

DATASET_SCHEMA = "lazysmc.dataset.v1"
RESULT_SCHEMA = "lazysmc.result.v1"

TRACK_COLORS = plt.get_cmap("tab10").colors


class FormatError(ValueError):
    pass


def _read_lines(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_truth(path):
    """Dataset file -> (observations per step dict, truth tracks)."""
    lines = _read_lines(path)
    header = lines[0] if lines else {}
    if header.get("kind") != "header" or header.get("schema") != DATASET_SCHEMA:
        raise FormatError(f"{path}: not a {DATASET_SCHEMA} file")
    observations = {}
    tracks = []
    for line in lines[1:]:
        kind = line.get("kind")
        if kind == "obs":
            observations[line["t"]] = line.get("observations", [])
        elif kind == "truth":
            tracks = line.get("tracks", [])
        else:
            raise FormatError(f"{path}: unexpected line kind {kind!r}")
    if not observations:
        raise FormatError(f"{path}: dataset holds no observation lines")
    return observations, tracks


def load_result(path):
    """Result file -> (posterior tracks, log evidence)."""
    lines = _read_lines(path)
    header = lines[0] if lines else {}
    if header.get("kind") != "header" or header.get("schema") != RESULT_SCHEMA:
        raise FormatError(f"{path}: not a {RESULT_SCHEMA} file")
    tracks, log_z = None, None
    for line in lines[1:]:
        if line.get("kind") == "posterior":
            tracks = line["sample"].get("tracks")
        elif line.get("kind") == "evidence":
            log_z = line.get("log_z")
    if tracks is None:
        raise FormatError(f"{path}: result holds no posterior track sample")
    return tracks, log_z


def _draw_panel(ax, observations, tracks, title, circle_associated):
    for step_obs in observations.values():
        for point in step_obs:
            ax.plot(point[0], point[1], marker=".", color="0.6",
                    markersize=3, linestyle="none", zorder=1)
    for idx, track in enumerate(tracks):
        color = TRACK_COLORS[idx % len(TRACK_COLORS)]
        xs = [p[0] for p in track["positions"]]
        ys = [p[1] for p in track["positions"]]
        ax.plot(xs, ys, "-", color=color, linewidth=1.0, zorder=2)
        ax.plot(xs, ys, marker=".", color=color, markersize=4,
                linestyle="none", zorder=3)
        ax.plot(xs[0], ys[0], marker="o", color=color, markersize=8, zorder=4)
        ax.annotate(str(track["birth"]), (xs[0], ys[0]),
                    textcoords="offset points", xytext=(4, 4), fontsize=7)
        if circle_associated:
            for step, obs_idx in enumerate(track["obs_index"]):
                if obs_idx is None:
                    continue
                t = track["birth"] + step
                step_obs = observations.get(t, [])
                if 0 <= obs_idx < len(step_obs):
                    point = step_obs[obs_idx]
                    ax.plot(point[0], point[1], marker="o", markersize=7,
                            markerfacecolor="none", markeredgecolor="0.3",
                            markeredgewidth=0.8, linestyle="none", zorder=5)
    ax.set_title(title, fontsize=9)
    ax.set_aspect("equal", adjustable="datalim")
    ax.tick_params(labelsize=7)


def render(truth_path, result_paths, columns=3):
    """Build the multi-panel figure; pure function of the input files."""
    observations, truth_tracks = load_truth(truth_path)
    panels = [("ground truth", truth_tracks, False)]
    for path in result_paths:
        tracks, log_z = load_result(path)
        label = "posterior sample" if log_z is None else \
            f"posterior sample, log weight {log_z:.1f}"
        panels.append((label, tracks, True))
    n = len(panels)
    ncols = min(columns, n)
    nrows = math.ceil(n / ncols)
    fig, axes = plt.subplots(nrows, ncols, figsize=(4.0 * ncols, 4.0 * nrows),
                             squeeze=False)
    for ax, (title, tracks, circles) in zip(axes.flat, panels):
        _draw_panel(ax, observations, tracks, title, circles)
    for ax in list(axes.flat)[n:]:
        ax.set_axis_off()
    fig.tight_layout()
    return fig


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        description="Render phase plots from tracking datasets and results.")
    parser.add_argument("--truth", required=True,
                        help="dataset file with a ground-truth trailer")
    parser.add_argument("--results", nargs="*", default=[],
                        help="result files, one panel each")
    parser.add_argument("--out", required=True, help="output image (png/svg)")
    parser.add_argument("--columns", type=int, default=3)
    args = parser.parse_args(argv)
    try:
        fig = render(args.truth, args.results, args.columns)
    except (FormatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    fig.savefig(args.out, dpi=110)
    plt.close(fig)
    return 0


if __name__ == "__main__":
    sys.exit(main())
