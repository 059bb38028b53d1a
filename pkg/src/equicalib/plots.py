"""Figure rendering for the report paths.

Every renderer takes already-computed rows and writes a PNG next to the
delimited output.  Matplotlib runs on the Agg backend so the CLI works
headless.
"""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .data import vector_field_target  # noqa: E402

_MODEL_COLORS = {"invariant": "tab:blue", "unconstrained": "tab:red",
                 "radial_equivariant": "tab:blue"}


def _color(model: str) -> str:
    return _MODEL_COLORS.get(model, "tab:gray")


def plot_sweep(rows, path: str | Path) -> Path:
    """Accuracy and ECE against the correct-invariance ratio, both models."""
    path = Path(path)
    fig, (ax_acc, ax_ece) = plt.subplots(1, 2, figsize=(9, 3.5))
    models = sorted({r.model for r in rows})
    for model in models:
        ratios = sorted({r.ratio for r in rows if r.model == model})
        acc = [np.mean([r.acc for r in rows if r.model == model and r.ratio == x])
               for x in ratios]
        ece = [np.mean([r.ece for r in rows if r.model == model and r.ratio == x])
               for x in ratios]
        ax_acc.plot(ratios, acc, "o-", color=_color(model), label=model)
        ax_ece.plot(ratios, ece, "o-", color=_color(model), label=model)
    ax_acc.set_xlabel("correct ratio")
    ax_acc.set_ylabel("test accuracy")
    ax_ece.set_xlabel("correct ratio")
    ax_ece.set_ylabel("test ECE")
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_angle_losses(angle_rows, kind: str, path: str | Path) -> Path:
    """Per-sector MSE and beta-NLL curves, seed-averaged, both models."""
    path = Path(path)
    fig, (ax_mse, ax_nll) = plt.subplots(1, 2, figsize=(9, 3.5))
    models = sorted({r["model"] for r in angle_rows})
    def seed_mean(rows, key):
        finite = [r[key] for r in rows if not math.isnan(r[key])]
        return float(np.mean(finite)) if finite else math.nan

    for model in models:
        sectors = sorted({r["sector"] for r in angle_rows if r["model"] == model})
        centers, mse, nll = [], [], []
        for s in sectors:
            sel = [r for r in angle_rows if r["model"] == model and r["sector"] == s]
            centers.append(0.5 * (sel[0]["angle_lo"] + sel[0]["angle_hi"]))
            mse.append(seed_mean(sel, "mse"))
            nll.append(seed_mean(sel, "beta_nll"))
        ax_mse.plot(centers, mse, "o-", color=_color(model), label=model)
        ax_nll.plot(centers, nll, "o-", color=_color(model), label=model)
    for ax, name in ((ax_mse, "MSE"), (ax_nll, "beta-NLL")):
        ax.set_xlabel("angle (rad)")
        ax.set_ylabel(name)
    ax_mse.set_title(f"{kind} field")
    ax_mse.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_vector_fields(kind: str, models: dict, path: str | Path,
                       radius: float = math.pi, grid: int = 9) -> Path:
    """Target field next to each model's mean field, colored by variance norm."""
    path = Path(path)
    xs = np.linspace(-radius, radius, grid)
    xx, yy = np.meshgrid(xs, xs)
    pts = np.stack([xx.ravel(), yy.ravel(), np.zeros(xx.size)], axis=1)
    inside = np.linalg.norm(pts[:, :2], axis=1) <= radius
    pts = pts[inside]
    target = vector_field_target(kind, pts)

    fig, axes = plt.subplots(1, 1 + len(models), figsize=(4 * (1 + len(models)), 4))
    axes = np.atleast_1d(axes)
    axes[0].quiver(pts[:, 0], pts[:, 1], target[:, 0], target[:, 1], color="k")
    axes[0].set_title(f"{kind}: target")
    for ax, (name, model) in zip(axes[1:], models.items()):
        mean, var = model.predict(pts)
        norm = np.linalg.norm(var, axis=1)
        q = ax.quiver(pts[:, 0], pts[:, 1], mean[:, 0], mean[:, 1], norm,
                      cmap="viridis")
        fig.colorbar(q, ax=ax, label="|variance|")
        ax.set_title(name)
    for ax in axes:
        ax.set_aspect("equal")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_reliability(bin_table, path: str | Path) -> Path:
    """Reliability diagram: per-bin accuracy against mean confidence."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    centers = 0.5 * (bin_table.edges[:-1] + bin_table.edges[1:])
    filled = bin_table.mass > 0
    width = bin_table.edges[1] - bin_table.edges[0]
    ax.bar(centers[filled], bin_table.accuracy[filled], width=width * 0.9,
           color="tab:blue", alpha=0.7, label="accuracy")
    ax.plot([0, 1], [0, 1], "k--", lw=1, label="ideal")
    ax.plot(centers[filled], bin_table.confidence[filled], "r.", label="confidence")
    ax.set_xlabel("confidence bin")
    ax.set_ylabel("weighted accuracy")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
