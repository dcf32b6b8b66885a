"""Matplotlib figures for the experiment reports (Agg backend, files only)."""

from __future__ import annotations

import os
from collections import defaultdict
from typing import Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_FLOOR = 1e-17


def _grouped(xs, ys, keys):
    groups = defaultdict(lambda: defaultdict(list))
    for x, y, key in zip(xs, ys, keys):
        groups[key][x].append(y)
    return groups


def _save(fig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def median_curve_plot(
    path: str,
    xs: Sequence[float],
    ys: Sequence[float],
    keys: Sequence[str],
    xlabel: str,
    ylabel: str,
    title: str = "",
    logy: bool = True,
) -> str:
    """Per-key median curve with the individual runs as faint markers."""
    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    for key, by_x in sorted(_grouped(xs, ys, keys).items()):
        xv = sorted(by_x)
        med = [np.median(by_x[x]) for x in xv]
        line, = ax.plot(xv, np.maximum(med, _FLOOR), marker="o", label=str(key))
        for x in xv:
            vals = np.maximum(by_x[x], _FLOOR)
            ax.plot([x] * len(vals), vals, ".", color=line.get_color(), alpha=0.25)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize="small")
    return _save(fig, path)


def image_grid(
    path: str,
    images: Mapping[str, np.ndarray],
    errors: Optional[Mapping[str, np.ndarray]] = None,
    vmax: Optional[float] = None,
    title: str = "",
) -> str:
    """Rows of reconstructions (magnitude), optionally with error images."""
    names = list(images)
    cols = 2 if errors else 1
    fig, axes = plt.subplots(len(names), cols, figsize=(2.6 * cols, 2.4 * len(names)), squeeze=False)
    top = vmax if vmax is not None else max(float(np.abs(im).max()) for im in images.values())
    for i, name in enumerate(names):
        ax = axes[i, 0]
        ax.imshow(np.abs(images[name]), cmap="gray", vmin=0, vmax=top)
        ax.set_ylabel(name)
        ax.set_xticks([])
        ax.set_yticks([])
        if errors:
            ax = axes[i, 1]
            ax.imshow(np.abs(errors[name]), cmap="gray", vmin=0, vmax=top)
            ax.set_xticks([])
            ax.set_yticks([])
    axes[0, 0].set_title("reconstruction")
    if errors:
        axes[0, 1].set_title("|error|")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def spectrum_plot(path: str, eigenvalues: np.ndarray, r_used: int) -> str:
    """Scree plot of the Gram eigenvalues with the kept rank marked."""
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    lam = np.maximum(np.asarray(eigenvalues, dtype=float), _FLOOR)
    ax.semilogy(np.arange(1, lam.size + 1), lam, marker=".")
    ax.axvline(r_used + 0.5, color="k", ls="--", lw=0.8)
    ax.set_xlabel("index")
    ax.set_ylabel("eigenvalue of Z^H Z")
    ax.grid(True, which="both", alpha=0.3)
    return _save(fig, path)


def residual_plot(path: str, primal: Sequence[float], dual: Sequence[float]) -> str:
    fig, ax = plt.subplots(figsize=(5.0, 3.5))
    it = np.arange(1, len(primal) + 1)
    ax.semilogy(it, np.maximum(primal, _FLOOR), label="primal")
    if len(dual):
        ax.semilogy(it, np.maximum(dual, _FLOOR), label="dual")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    return _save(fig, path)


def check_table_plot(path: str, names: Sequence[str], passed: Sequence[bool]) -> str:
    """Horizontal pass/fail bars for the verification suite."""
    fig, ax = plt.subplots(figsize=(6.0, 0.35 * len(names) + 1.0))
    y = np.arange(len(names))
    ax.barh(y, [1] * len(names), color=["tab:green" if p else "tab:red" for p in passed])
    ax.set_yticks(y)
    ax.set_yticklabels(names, fontsize="small")
    ax.set_xticks([])
    ax.invert_yaxis()
    return _save(fig, path)
