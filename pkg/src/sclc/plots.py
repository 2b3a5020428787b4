"""Matplotlib figures written next to the CSV/text reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes reproducible
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def _curve_axes(ax, curve, title):
    epochs = [c[0] for c in curve]
    ax.plot(epochs, [c[1] for c in curve], label="train")
    ax.plot(epochs, [c[2] for c in curve], label="test", linestyle="--")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(loc="best")
    ax.grid(True, alpha=0.3)


def loss_curve(curve, path, title="loss"):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    _curve_axes(ax, curve, title)
    _save(fig, path)


def loss_grid(curves: dict, path):
    """One panel per loss, train and test curves in each."""
    n = len(curves)
    cols = min(n, 2)
    rows = int(np.ceil(n / cols))
    fig, axes = plt.subplots(rows, cols, figsize=(5 * cols, 3.5 * rows), squeeze=False)
    for ax, (kind, curve) in zip(axes.flat, curves.items()):
        _curve_axes(ax, curve, kind)
    for ax in list(axes.flat)[n:]:
        ax.axis("off")
    _save(fig, path)


def confusion(cm, class_names, path):
    cm = np.asarray(cm)
    k = len(class_names)
    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * k, 0.8 + 0.6 * k))
    ax.imshow(cm, cmap="Blues")
    ax.set_xticks(range(k), class_names, rotation=45, ha="right")
    ax.set_yticks(range(k), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    top = cm.max() if cm.size else 0
    for i in range(k):
        for j in range(k):
            ax.text(j, i, str(int(cm[i, j])), ha="center", va="center",
                    color="white" if top and cm[i, j] > top / 2 else "black", fontsize=8)
    _save(fig, path)


def cam_panel(image, maps: dict, path, title=""):
    """Original image on the left, one overlay per method to its right."""
    from .cam import overlay

    fig, axes = plt.subplots(1, 1 + len(maps), figsize=(2.2 * (1 + len(maps)), 2.6))
    axes = np.atleast_1d(axes)
    axes[0].imshow(np.moveaxis(image, 0, -1))
    axes[0].set_title(title or "input", fontsize=8)
    for ax, (method, heat) in zip(axes[1:], maps.items()):
        ax.imshow(np.moveaxis(overlay(image, heat), 0, -1))
        ax.set_title(method + (" (empty)" if heat.empty else ""), fontsize=8)
    for ax in axes:
        ax.axis("off")
    _save(fig, path)


def cost_comparison(pairs, path):
    """Minority recall and macro F1 per seed, unweighted vs balanced weights."""
    seeds = [str(p.seed) for p in pairs]
    x = np.arange(len(pairs))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, (label, fn) in zip(axes, (("minority recall", "minority_recall"), ("macro F1", "macro_f1"))):
        ax.bar(x - 0.2, [getattr(p, fn)("unweighted") for p in pairs], 0.4, label="unweighted")
        ax.bar(x + 0.2, [getattr(p, fn)("weighted") for p in pairs], 0.4, label="balanced")
        ax.set_xticks(x, seeds)
        ax.set_xlabel("seed")
        ax.set_ylim(0, 1.05)
        ax.set_title(label)
        ax.legend(loc="lower right")
    _save(fig, path)
