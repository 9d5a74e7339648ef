"""File-target matplotlib rendering for reports.

Every function writes one PNG next to the delimited outputs the CLI
already emits; nothing here opens a window.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import Dataset
from .diagnostics import MarginReport
from .ensemble import ParticleEnsemble, classify_many


def save_margin_figure(report: MarginReport, path) -> None:
    """Empirical margin CDF with the distribution bound overlaid where valid."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.step(report.rho_grid, report.cdf, where="post", label="empirical CDF")
    ok = np.isfinite(report.bound)
    if ok.any():
        ax.plot(report.rho_grid[ok], np.minimum(report.bound[ok], 1.0), "--",
                label="distribution bound")
    ax.axvline(report.psi_alpha, color="gray", lw=0.8,
               label=f"soft margin ({report.psi_alpha:.3f})")
    ax.set_xlabel(r"margin threshold $\rho$")
    ax.set_ylabel(r"fraction with margin $\leq \rho$")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_decision_regions(ens: ParticleEnsemble, ds: Dataset, path, grid_n: int = 200) -> None:
    """Predicted label over a 2-D bounding box, data scattered on top."""
    if ds.n_features != 2:
        raise ValueError("decision-region figures need 2-D features")
    (x0, y0), (x1, y1) = ds.features.min(axis=0), ds.features.max(axis=0)
    pad_x, pad_y = 0.1 * (x1 - x0 + 1e-9), 0.1 * (y1 - y0 + 1e-9)
    gx = np.linspace(x0 - pad_x, x1 + pad_x, grid_n)
    gy = np.linspace(y0 - pad_y, y1 + pad_y, grid_n)
    xx, yy = np.meshgrid(gx, gy)
    labels = classify_many(ens, np.column_stack([xx.ravel(), yy.ravel()])).reshape(xx.shape)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.pcolormesh(xx, yy, labels, cmap="coolwarm", alpha=0.35, shading="auto")
    for cls, marker in zip(range(ds.num_classes), "oxs^v<>"):
        pts = ds.features[ds.labels == cls]
        ax.scatter(pts[:, 0], pts[:, 1], s=12, marker=marker, label=f"class {cls}")
    ax.set_aspect("equal", adjustable="box")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_particle_scatter(ens: ParticleEnsemble, path) -> None:
    """First two weight coordinates of every particle (linear models in the plane)."""
    w = ens.particles[:, :2]
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(w[:, 0], w[:, 1], s=25)
    ax.axhline(0, color="gray", lw=0.5)
    ax.axvline(0, color="gray", lw=0.5)
    ax.set_xlabel("weight 1")
    ax.set_ylabel("weight 2")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_trace_figure(records: list, path) -> None:
    """Loss, accuracy, optimality estimate, and soft margin against steps."""
    steps = [r["step"] for r in records]
    fig, axes = plt.subplots(2, 2, figsize=(9, 6), sharex=True)
    panels = [("loss", axes[0, 0], "log"), ("accuracy", axes[0, 1], "linear"),
              ("optimality_norm", axes[1, 0], "log"), ("smooth_margin", axes[1, 1], "linear")]
    for key, ax, scale in panels:
        vals = [r.get(key) for r in records]
        pairs = [(s, v) for s, v in zip(steps, vals) if v is not None]
        if pairs:
            xs, ys = zip(*pairs)
            if scale == "log" and min(ys) <= 0:
                scale = "linear"
            ax.plot(xs, ys, marker=".", ms=3)
            ax.set_yscale(scale)
        ax.set_title(key.replace("_", " "))
    for ax in axes[1]:
        ax.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
