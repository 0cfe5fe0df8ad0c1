"""Matplotlib renderings written next to the delimited reports: training
curves, confusion matrices, class histograms and per-class match rates."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset import CLASS_NAMES


def save_training_curves(report, path: str) -> None:
    epochs = [r.epoch for r in report.rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [r.train_loss for r in report.rows], marker="o", label="training loss")
    ax.plot(epochs, [r.val_loss for r in report.rows], marker="s", label="validation loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_xticks(epochs)
    if report.arch == "encoder":
        ax2 = ax.twinx()
        ax2.plot(epochs, [r.accuracy for r in report.rows], marker="^", color="tab:green",
                 label="val accuracy")
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0, 1.05)
        lines, labels = ax.get_legend_handles_labels()
        l2, lb2 = ax2.get_legend_handles_labels()
        ax.legend(lines + l2, labels + lb2, loc="center right")
    else:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_matrix(confusion: np.ndarray, path: str) -> None:
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xticks(range(len(CLASS_NAMES)), CLASS_NAMES, rotation=30, ha="right")
    ax.set_yticks(range(len(CLASS_NAMES)), CLASS_NAMES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("gold")
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax.text(j, i, str(confusion[i, j]), ha="center", va="center",
                    color="white" if confusion[i, j] > confusion.max() / 2 else "black")
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_class_histogram(counts_per_class: dict, path: str) -> None:
    names = list(counts_per_class)
    values = [counts_per_class[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, values, color="tab:blue")
    ax.set_ylabel("examples")
    ax.set_title("class distribution")
    for i, v in enumerate(values):
        ax.text(i, v, str(v), ha="center", va="bottom")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_match_rates(per_class_rates: dict, path: str) -> None:
    names = list(per_class_rates)
    values = [per_class_rates[n] for n in names]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(names, values, color="tab:orange")
    ax.set_ylabel("exact-match rate")
    ax.set_ylim(0, 1.05)
    for i, v in enumerate(values):
        ax.text(i, v, f"{v:.2f}", ha="center", va="bottom")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
