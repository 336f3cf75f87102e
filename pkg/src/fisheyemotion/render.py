"""Rendering of likelihood grids: binary PGM maps and matplotlib figures."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .pipeline import LikelihoodGrid, saturate_for_render


def grid_to_image(normalized: np.ndarray, cell_size: int) -> np.ndarray:
    """Upscale a [0,1] grid to an 8-bit image, one cell per block."""
    img = np.round(np.clip(normalized, 0.0, 1.0) * 255.0).astype(np.uint8)
    return np.kron(img, np.ones((cell_size, cell_size), dtype=np.uint8))


def write_pgm(path, image: np.ndarray) -> None:
    """Write an 8-bit grayscale image as binary PGM (P5)."""
    if image.dtype != np.uint8 or image.ndim != 2:
        raise ValueError("PGM writer expects a 2-D uint8 array")
    h, w = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"P5":
            raise ValueError(f"{path}: not a binary PGM file")
        dims = fh.readline().split()
        maxval = int(fh.readline())
        if maxval != 255:
            raise ValueError(f"{path}: only 8-bit PGM supported")
        w, h = int(dims[0]), int(dims[1])
        data = np.frombuffer(fh.read(w * h), dtype=np.uint8)
    return data.reshape(h, w)


def render_grid_pgm(path, grid: LikelihoodGrid, cap: float = 0.02) -> None:
    write_pgm(path, grid_to_image(saturate_for_render(grid, cap), grid.cell_size))


def render_grid_figure(path, grid: LikelihoodGrid, cap: float = 0.02, title: str = "") -> None:
    """Save a colormapped likelihood heatmap with the saturation cap applied."""
    fig, ax = plt.subplots(figsize=(7, 5.5))
    im = ax.imshow(
        np.minimum(grid.xi, cap),
        cmap="inferno",
        vmin=0.0,
        vmax=cap,
        interpolation="nearest",
    )
    ax.set_xlabel("grid column")
    ax.set_ylabel("grid row")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="motion likelihood")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_metrics_figure(path, metrics: dict) -> None:
    """Save detection/coverage rates per category as a grouped bar chart."""
    cats = list(metrics["categories"])
    detection = [metrics["categories"][c]["detection_rate"] for c in cats]
    coverage = [metrics["categories"][c]["coverage_rate"] for c in cats]

    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(cats))
    width = 0.38
    ax.bar(x - width / 2, detection, width, label="detection rate")
    ax.bar(x + width / 2, coverage, width, label="coverage rate")
    ax.set_xticks(x)
    ax.set_xticklabels(cats, rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("rate")
    fp = metrics["false_positives"]
    ax.set_title(
        f"detection by category (FP frames {fp['frame_rate']:.1%}, "
        f"spurious cells {fp['spurious_cell_fraction']:.1%})"
    )
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
