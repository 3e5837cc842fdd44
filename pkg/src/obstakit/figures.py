"""Matplotlib rendering of nodal fields and sweep summaries to image files."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.ticker import FormatStrFormatter
from matplotlib.tri import Triangulation

from .mesh import extend_with_boundary


def _triangulation(mesh):
    return Triangulation(mesh.nodes[:, 0], mesh.nodes[:, 1], mesh.triangles)


def save_field_figure(mesh, values, path, title="", symmetric=False):
    """Render an interior nodal field as a filled triangle plot.

    With symmetric=True the color scale is centered at zero, which keeps
    sign structure readable for multipliers and saturated controls.
    """
    full = extend_with_boundary(mesh, np.asarray(values, dtype=float))
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    kwargs = {"cmap": "RdBu_r"} if symmetric else {"cmap": "viridis"}
    if symmetric:
        vmax = max(float(np.max(np.abs(full))), 1e-30)
        kwargs.update(vmin=-vmax, vmax=vmax)
    im = ax.tripcolor(_triangulation(mesh), full, shading="gouraud", **kwargs)
    ax.set_aspect("equal")
    ax.set_xlabel("$x_1$")
    ax.set_ylabel("$x_2$")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_sweep_figure(cells, iteration_counts, residual_histories, path):
    """Two-panel summary of a mesh sweep.

    Left: Newton iterations per mesh (the mesh-independence picture).
    Right: residual history of each run on a log scale.
    """
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 3.8))
    ax1.plot(cells, iteration_counts, "o-")
    ax1.set_xscale("log", base=2)
    ax1.set_xticks(list(cells))
    ax1.get_xaxis().set_major_formatter(FormatStrFormatter("%d"))
    ax1.set_xlabel("cells per side")
    ax1.set_ylabel("Newton iterations")
    ax1.set_ylim(0, max(iteration_counts) + 1)
    ax1.set_title("iterations vs. mesh")

    for n, residuals in zip(cells, residual_histories):
        positive = np.maximum(np.asarray(residuals, dtype=float), 1e-300)
        ax2.semilogy(range(len(residuals)), positive, "o-", label=f"n={n}")
    ax2.set_xlabel("iteration")
    ax2.set_ylabel("state residual")
    ax2.set_title("residual decay")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_deviation_figure(labels, deviations, threshold, path):
    """Log-scale bar chart of per-property deviations against a threshold."""
    floored = np.maximum(np.asarray(deviations, dtype=float), 1e-18)
    fig, ax = plt.subplots(figsize=(7.0, 3.8))
    pos = np.arange(len(labels))
    ax.bar(pos, floored, color="steelblue")
    ax.axhline(threshold, color="firebrick", linestyle="--", label="threshold")
    ax.set_yscale("log")
    ax.set_xticks(pos)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("max deviation")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
