"""Render figures from an experiment output directory.

Reads the delimited exports written by the harness (``episodes.csv``,
``cdf_<scheme>.csv``, ``summary.json``) and renders PNG figures next to
them: learning curves per scheme, empirical sum-rate CDFs, and a bar
comparison of tail-window means with 95% confidence whiskers.
"""

from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _read_episodes(path: str) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _smooth(y: np.ndarray, window: int) -> np.ndarray:
    if len(y) < window or window <= 1:
        return y
    kernel = np.ones(window) / window
    return np.convolve(y, kernel, mode="valid")


def render_learning_curves(out_dir: str, metric: str = "reward",
                           window: int = 20) -> str:
    rows = _read_episodes(os.path.join(out_dir, "episodes.csv"))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    schemes = sorted({r["scheme"] for r in rows})
    for scheme in schemes:
        per_seed: dict[str, list[tuple[int, float]]] = {}
        for r in rows:
            if r["scheme"] != scheme:
                continue
            per_seed.setdefault(r["seed"], []).append(
                (int(r["episode"]), float(r[metric])))
        curves = []
        for pts in per_seed.values():
            pts.sort()
            curves.append([v for _, v in pts])
        n = min(len(c) for c in curves)
        mean = np.mean([c[:n] for c in curves], axis=0)
        y = _smooth(mean, window)
        ax.plot(np.arange(len(y)), y, label=scheme)
    ax.set_xlabel("episode")
    ax.set_ylabel(metric)
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    path = os.path.join(out_dir, f"learning_{metric}.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_cdfs(out_dir: str) -> str:
    fig, ax = plt.subplots(figsize=(7, 4.5))
    found = False
    for name in sorted(os.listdir(out_dir)):
        if not (name.startswith("cdf_") and name.endswith(".csv")):
            continue
        found = True
        xs, ys = [], []
        with open(os.path.join(out_dir, name), newline="") as fh:
            for row in csv.DictReader(fh):
                xs.append(float(row["sum_rate"]))
                ys.append(float(row["cdf"]))
        ax.step(xs, ys, where="post", label=name[4:-4].upper())
    if not found:
        raise FileNotFoundError(f"no cdf_*.csv files under {out_dir}")
    ax.set_xlabel("sum rate (bit/s)")
    ax.set_ylabel("empirical CDF")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    path = os.path.join(out_dir, "cdf_sum_rate.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_scheme_bars(out_dir: str, metric: str = "sum_rate") -> str:
    with open(os.path.join(out_dir, "summary.json")) as fh:
        summary = json.load(fh)
    schemes = sorted(summary["schemes"])
    means = [summary["schemes"][s][f"{metric}_mean"] for s in schemes]
    cis = [summary["schemes"][s][f"{metric}_ci95"] for s in schemes]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.bar(range(len(schemes)), means, yerr=cis, capsize=4)
    ax.set_xticks(range(len(schemes)))
    ax.set_xticklabels(schemes, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel(f"{metric} (tail-window mean)")
    ax.grid(True, axis="y", alpha=0.3)
    path = os.path.join(out_dir, f"bars_{metric}.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_all(out_dir: str) -> list[str]:
    paths = [render_learning_curves(out_dir, "reward"),
             render_learning_curves(out_dir, "sum_rate")]
    try:
        paths.append(render_cdfs(out_dir))
    except FileNotFoundError:
        pass
    try:
        paths.append(render_scheme_bars(out_dir, "sum_rate"))
        paths.append(render_scheme_bars(out_dir, "reward"))
    except FileNotFoundError:
        pass
    return paths
