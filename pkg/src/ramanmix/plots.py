"""Figure rendering for unmixing results, benchmark tables, and timing runs.

All figures are written as SVG. Abundance heatmaps use a fixed colormap
(viridis) with per-map normalization so each component's spatial structure
is visible regardless of its absolute scale.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

HEATMAP_CMAP = "viridis"


def plot_endmembers(signatures: np.ndarray, axis_values: np.ndarray, out_dir
                    ) -> list[Path]:
    """One line plot per endmember column; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for j in range(signatures.shape[1]):
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.plot(axis_values, signatures[:, j], linewidth=1.0)
        ax.set_xlabel("wavenumber (cm$^{-1}$)")
        ax.set_ylabel("intensity (a.u.)")
        ax.set_title(f"endmember {j}")
        fig.tight_layout()
        path = out_dir / f"endmember_{j:02d}.svg"
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_abundance_maps(values: np.ndarray, shape, out_dir) -> list[Path]:
    """One heatmap per component, reshaped to the scene; returns paths.

    Volumetric shapes (H, W, Z) are rendered one file per z-layer.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != values.shape[0]:
        raise ValueError(
            f"scene shape {shape} does not cover {values.shape[0]} pixels")
    paths = []
    for j in range(values.shape[1]):
        col = values[:, j]
        if len(shape) == 2:
            layers = [(None, col.reshape(shape))]
        else:
            h, w, z = shape
            cube = col.reshape(z, h, w)  # z outermost, row-major
            layers = [(k, cube[k]) for k in range(z)]
        for z_index, img in layers:
            fig, ax = plt.subplots(figsize=(4, 4))
            im = ax.imshow(img, cmap=HEATMAP_CMAP)
            ax.set_xticks([])
            ax.set_yticks([])
            title = f"abundance {j}"
            stem = f"abundance_{j:02d}"
            if z_index is not None:
                title += f" (z={z_index})"
                stem += f"_z{z_index:02d}"
            ax.set_title(title)
            fig.colorbar(im, ax=ax, fraction=0.046)
            fig.tight_layout()
            path = out_dir / f"{stem}.svg"
            fig.savefig(path)
            plt.close(fig)
            paths.append(path)
    return paths


def plot_unmix_overview(signatures: np.ndarray, axis_values: np.ndarray,
                        values: np.ndarray, shape, out_path) -> Path:
    """Signatures (left) next to their abundance maps (right), one row each."""
    shape = tuple(int(s) for s in shape)
    n = signatures.shape[1]
    maps = values.T.reshape(n, *shape) if len(shape) == 2 else None
    fig, axes = plt.subplots(n, 2, figsize=(9, 2.2 * n), squeeze=False)
    for j in range(n):
        axes[j, 0].plot(axis_values, signatures[:, j], linewidth=0.8)
        axes[j, 0].set_ylabel(f"component {j}")
        if maps is not None:
            axes[j, 1].imshow(maps[j], cmap=HEATMAP_CMAP)
        axes[j, 1].set_xticks([])
        axes[j, 1].set_yticks([])
    axes[-1, 0].set_xlabel("wavenumber (cm$^{-1}$)")
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_scaling(rows: list[dict], out_path) -> Path:
    """Log-log wall time versus dataset size, one curve per method."""
    methods = sorted({r["method"] for r in rows})
    fig, ax = plt.subplots(figsize=(5, 4))
    for method in methods:
        pts = {}
        for r in rows:
            if r["method"] == method:
                pts.setdefault(int(r["N"]), []).append(float(r["seconds"]))
        sizes = sorted(pts)
        means = [float(np.mean(pts[s])) for s in sizes]
        ax.plot(sizes, means, marker="o", label=method)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("number of spectra")
    ax.set_ylabel("wall time (s)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path


def plot_benchmark_summary(aggregates: list[dict], out_path) -> Path:
    """Grouped bars of mean +/- std per (variant, method), one panel per metric."""
    variants = sorted({r["variant"] for r in aggregates})
    methods = sorted({r["method"] for r in aggregates})
    metrics = sorted({r["metric"] for r in aggregates})
    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4),
                             squeeze=False)
    width = 0.8 / max(len(methods), 1)
    xs = np.arange(len(variants))
    for ax, metric in zip(axes[0], metrics):
        for k, method in enumerate(methods):
            means, stds = [], []
            for v in variants:
                rows = [r for r in aggregates
                        if r["variant"] == v and r["method"] == method
                        and r["metric"] == metric]
                means.append(rows[0]["mean"] if rows else np.nan)
                stds.append(rows[0]["std"] if rows else 0.0)
            ax.bar(xs + k * width, means, width=width, yerr=stds,
                   capsize=2, label=method)
        ax.set_xticks(xs + 0.4 - width / 2)
        ax.set_xticklabels(variants, rotation=30, ha="right", fontsize=8)
        ax.set_ylabel(metric)
        ax.legend(fontsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
