"""Per-frame likelihood grid: flow averaging, gating, evaluation, segmentation.

The image is tiled into square cells (default 5x5 px). Each cell yields one
averaged correspondence which is range-gated and run through the constraint
evaluation; the fused likelihood is stored per cell. Gated cells carry a
zero likelihood plus a reason code and never contribute to segmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .camera import CameraIntrinsics, RoadFrame, unproject_many
from .constraints import (
    CameraPose,
    ConstraintConfig,
    Correspondence,
    evaluate_rays,
)
from .triangulate import triangulate_many, triangulate_rays

GATE_OK = 0
GATE_INSUFFICIENT_FLOW = 1
GATE_OUT_OF_DOMAIN = 2
GATE_DEGENERATE_EPIPOLAR = 3
GATE_UNRESOLVABLE_RANGE = 4
GATE_OUT_OF_RANGE = 5

GATE_NAMES = {
    GATE_OK: "",
    GATE_INSUFFICIENT_FLOW: "insufficient_flow",
    GATE_OUT_OF_DOMAIN: "out_of_domain",
    GATE_DEGENERATE_EPIPOLAR: "degenerate_epipolar",
    GATE_UNRESOLVABLE_RANGE: "unresolvable_range",
    GATE_OUT_OF_RANGE: "out_of_range",
}
GATE_CODES = {name: code for code, name in GATE_NAMES.items()}


class PipelineError(Exception):
    pass


class MismatchedFramesError(PipelineError):
    """Prediction and label frame counts differ."""


@dataclass(frozen=True)
class PipelineConfig:
    """Grid, gating and segmentation parameters."""

    cell_size: int = 5
    max_range: float | None = 8.0
    threshold: float = 0.005
    min_region: int = 2
    render_cap: float = 0.02
    min_cell_samples: int = 1
    min_valid_fraction: float = 0.5

    def __post_init__(self):
        if self.cell_size < 1:
            raise ValueError("cell_size must be at least 1")
        if self.max_range is not None and self.max_range <= 0:
            raise ValueError("max_range must be positive (or None to disable)")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        if self.min_region < 1:
            raise ValueError("min_region must be at least 1")
        if self.render_cap <= 0:
            raise ValueError("render_cap must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        kw = {}
        for key in ("cell_size", "min_region", "min_cell_samples"):
            if key in d:
                kw[key] = int(d[key])
        for key in ("threshold", "render_cap", "min_valid_fraction"):
            if key in d:
                kw[key] = float(d[key])
        if "max_range" in d:
            kw["max_range"] = None if d["max_range"] in (None, 0) else float(d["max_range"])
        return cls(**kw)


@dataclass
class FlowField:
    """Dense per-pixel displacement field with a validity mask."""

    du: np.ndarray
    dv: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        if not (self.du.shape == self.dv.shape == self.valid.shape):
            raise ValueError("flow component shapes must match")

    @property
    def height(self) -> int:
        return self.du.shape[0]

    @property
    def width(self) -> int:
        return self.du.shape[1]


@dataclass
class CellFlow:
    """Averaged correspondences of the non-gated cells of one frame."""

    rows: int
    cols: int
    cell_size: int
    index: np.ndarray
    uv_prev: np.ndarray
    uv_curr: np.ndarray
    gated: np.ndarray


@dataclass
class LikelihoodGrid:
    """Per-cell constraint deviations, fused likelihood and gate codes."""

    cell_size: int
    rows: int
    cols: int
    xi_e: np.ndarray
    xi_d: np.ndarray
    xi_h: np.ndarray
    xi_p: np.ndarray
    xi: np.ndarray
    applied_h: np.ndarray
    applied_p: np.ndarray
    gated: np.ndarray
    static_case: bool = False

    @classmethod
    def empty(cls, rows: int, cols: int, cell_size: int) -> "LikelihoodGrid":
        z = lambda: np.zeros((rows, cols))
        b = lambda: np.zeros((rows, cols), dtype=bool)
        return cls(
            cell_size=cell_size, rows=rows, cols=cols,
            xi_e=z(), xi_d=z(), xi_h=z(), xi_p=z(), xi=z(),
            applied_h=b(), applied_p=b(),
            gated=np.full((rows, cols), GATE_INSUFFICIENT_FLOW, dtype=np.int8),
        )

    @property
    def active(self) -> np.ndarray:
        return self.gated == GATE_OK


@dataclass(frozen=True)
class Region:
    """One 4-connected component of the thresholded likelihood mask."""

    label: int
    cell_count: int
    bbox: tuple[int, int, int, int]
    mean_xi: float


@dataclass
class SegmentationResult:
    """Binary detection mask (after small-region suppression) with regions."""

    threshold: float
    mask: np.ndarray
    regions: list[Region] = field(default_factory=list)


def _grid_shape(width: int, height: int, cell: int) -> tuple[int, int]:
    return math.ceil(height / cell), math.ceil(width / cell)


def _cell_centers(index, cols, cell, width, height):
    rows_idx = index // cols
    cols_idx = index % cols
    u0 = cols_idx * cell
    v0 = rows_idx * cell
    cu = u0 + (np.minimum(cell, width - u0) - 1) / 2.0
    cv = v0 + (np.minimum(cell, height - v0) - 1) / 2.0
    return np.stack([cu, cv], axis=-1)


def grid_average(flow: FlowField, cfg: PipelineConfig) -> CellFlow:
    """Average a dense flow field over the cell grid.

    A cell produces a correspondence only when at least min_valid_fraction
    of its pixels carry valid flow; others are gated as insufficient.
    """
    h, w = flow.du.shape
    rows, cols = _grid_shape(w, h, cfg.cell_size)

    ys, xs = np.mgrid[0:h, 0:w]
    flat = (ys // cfg.cell_size) * cols + (xs // cfg.cell_size)
    flat = flat.ravel()
    valid = flow.valid.ravel().astype(float)
    n_cells = rows * cols

    total = np.bincount(flat, minlength=n_cells)
    n_valid = np.bincount(flat, weights=valid, minlength=n_cells)
    sum_du = np.bincount(flat, weights=flow.du.ravel() * valid, minlength=n_cells)
    sum_dv = np.bincount(flat, weights=flow.dv.ravel() * valid, minlength=n_cells)

    ok = n_valid >= cfg.min_valid_fraction * total
    ok &= n_valid > 0
    index = np.nonzero(ok)[0]
    mean = np.stack(
        [sum_du[index] / n_valid[index], sum_dv[index] / n_valid[index]], axis=-1
    )
    centers = _cell_centers(index, cols, cfg.cell_size, w, h)

    gated = np.full(n_cells, GATE_INSUFFICIENT_FLOW, dtype=np.int8)
    gated[index] = GATE_OK
    return CellFlow(
        rows=rows, cols=cols, cell_size=cfg.cell_size,
        index=index, uv_prev=centers, uv_curr=centers + mean, gated=gated,
    )


def grid_average_points(
    uv_prev, uv_curr, K: CameraIntrinsics, cfg: PipelineConfig
) -> CellFlow:
    """Average sparse correspondences over the cell grid.

    Sparse input (tracked features, simulator output) has no dense validity
    notion; a cell is kept when it holds at least min_cell_samples samples.
    """
    uv_prev = np.asarray(uv_prev, dtype=float).reshape(-1, 2)
    uv_curr = np.asarray(uv_curr, dtype=float).reshape(-1, 2)
    rows, cols = _grid_shape(K.width, K.height, cfg.cell_size)
    n_cells = rows * cols

    inside = (
        (uv_prev[:, 0] >= 0) & (uv_prev[:, 0] < K.width)
        & (uv_prev[:, 1] >= 0) & (uv_prev[:, 1] < K.height)
    )
    uv_prev, uv_curr = uv_prev[inside], uv_curr[inside]
    disp = uv_curr - uv_prev

    flat = (
        (uv_prev[:, 1] // cfg.cell_size).astype(int) * cols
        + (uv_prev[:, 0] // cfg.cell_size).astype(int)
    )
    count = np.bincount(flat, minlength=n_cells)
    sum_du = np.bincount(flat, weights=disp[:, 0], minlength=n_cells)
    sum_dv = np.bincount(flat, weights=disp[:, 1], minlength=n_cells)

    ok = count >= max(1, cfg.min_cell_samples)
    index = np.nonzero(ok)[0]
    mean = np.stack([sum_du[index] / count[index], sum_dv[index] / count[index]], axis=-1)
    centers = _cell_centers(index, cols, cfg.cell_size, K.width, K.height)

    gated = np.full(n_cells, GATE_INSUFFICIENT_FLOW, dtype=np.int8)
    gated[index] = GATE_OK
    return CellFlow(
        rows=rows, cols=cols, cell_size=cfg.cell_size,
        index=index, uv_prev=centers, uv_curr=centers + mean, gated=gated,
    )


def range_gate(
    corr: Correspondence, prev: CameraPose, curr: CameraPose, max_range: float | None
) -> bool:
    """Keep a correspondence iff its reconstruction lies within range.

    Behind-camera reconstructions are always kept: they are exactly the
    positive-depth detections. Non-convergent rays have no resolvable range
    and are kept only when gating is disabled.
    """
    tri = triangulate_rays(corr.p_prev, corr.p_curr, prev.c, curr.c)
    if not tri.convergent:
        return max_range is None
    if tri.s_curr < 0:
        return True
    if max_range is None:
        return True
    return float(np.linalg.norm(tri.point - curr.c)) <= max_range


def _evaluate_cells(
    cell_flow: CellFlow,
    prev: CameraPose,
    curr: CameraPose,
    K: CameraIntrinsics,
    rf: RoadFrame,
    ccfg: ConstraintConfig,
    pcfg: PipelineConfig,
) -> LikelihoodGrid:
    grid = LikelihoodGrid.empty(cell_flow.rows, cell_flow.cols, cell_flow.cell_size)
    gated = cell_flow.gated.copy()
    index = cell_flow.index
    if len(index) == 0:
        grid.gated = gated.reshape(grid.rows, grid.cols)
        return grid

    rays_prev, ok_prev = unproject_many(cell_flow.uv_prev, K)
    rays_curr, ok_curr = unproject_many(cell_flow.uv_curr, K)
    domain_ok = ok_prev & ok_curr
    gated[index[~domain_ok]] = GATE_OUT_OF_DOMAIN

    index = index[domain_ok]
    p = rays_prev[domain_ok] @ prev.r.T
    pc = rays_curr[domain_ok] @ curr.r.T

    baseline = float(np.linalg.norm(prev.c - curr.c))
    static_case = baseline < ccfg.epsilon_t

    if not static_case and len(index):
        # range gating precedes constraint evaluation; behind-camera kept
        points, _, s_curr, convergent = triangulate_many(p, pc, prev.c, curr.c)
        if pcfg.max_range is None:
            keep = np.ones(len(index), dtype=bool)
        else:
            dist = np.linalg.norm(points - curr.c, axis=-1)
            keep = convergent & ((s_curr < 0) | (dist <= pcfg.max_range))
            gated[index[~convergent]] = GATE_UNRESOLVABLE_RANGE
            gated[index[convergent & ~keep]] = GATE_OUT_OF_RANGE
        index, p, pc = index[keep], p[keep], pc[keep]

    if len(index):
        batch = evaluate_rays(p, pc, prev.c, curr.c, rf, ccfg)
        gated[index[batch.skipped]] = GATE_DEGENERATE_EPIPOLAR
        live = ~batch.skipped
        idx = index[live]
        for name in ("xi_e", "xi_d", "xi_h", "xi_p", "xi", "applied_h", "applied_p"):
            getattr(grid, name).ravel()[idx] = getattr(batch, name)[live]
        grid.static_case = batch.static_case

    grid.gated = gated.reshape(grid.rows, grid.cols)
    for name in ("xi_e", "xi_d", "xi_h", "xi_p", "xi"):
        arr = getattr(grid, name)
        arr[grid.gated != GATE_OK] = 0.0
    return grid


def evaluate_frame(
    flow: FlowField,
    prev: CameraPose,
    curr: CameraPose,
    K: CameraIntrinsics,
    rf: RoadFrame,
    ccfg: ConstraintConfig | None = None,
    pcfg: PipelineConfig | None = None,
) -> LikelihoodGrid:
    """Dense-flow entry point: average, gate and evaluate one frame pair."""
    ccfg = ccfg or ConstraintConfig()
    pcfg = pcfg or PipelineConfig()
    if (flow.height, flow.width) != (K.height, K.width):
        raise PipelineError(
            f"flow {flow.width}x{flow.height} does not match intrinsics {K.width}x{K.height}"
        )
    return _evaluate_cells(grid_average(flow, pcfg), prev, curr, K, rf, ccfg, pcfg)


def evaluate_frame_points(
    uv_prev,
    uv_curr,
    prev: CameraPose,
    curr: CameraPose,
    K: CameraIntrinsics,
    rf: RoadFrame,
    ccfg: ConstraintConfig | None = None,
    pcfg: PipelineConfig | None = None,
) -> LikelihoodGrid:
    """Sparse-correspondence entry point (tracked features, file input)."""
    ccfg = ccfg or ConstraintConfig()
    pcfg = pcfg or PipelineConfig()
    cell_flow = grid_average_points(uv_prev, uv_curr, K, pcfg)
    return _evaluate_cells(cell_flow, prev, curr, K, rf, ccfg, pcfg)


FOUR_CONNECTED = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])


def segment(
    grid: LikelihoodGrid, threshold: float | None = None, min_region: int = 2
) -> SegmentationResult:
    """Threshold the fused likelihood and extract 4-connected regions.

    Regions smaller than min_region cells are suppressed as noise, from
    both the region list and the returned mask.
    """
    if threshold is None:
        threshold = 0.005
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie in (0, 1)")
    mask = (grid.xi >= threshold) & grid.active
    labels, n = ndimage.label(mask, structure=FOUR_CONNECTED)
    regions = []
    out_mask = np.zeros_like(mask)
    for lab in range(1, n + 1):
        cells = labels == lab
        count = int(cells.sum())
        if count < min_region:
            continue
        rr, cc = np.nonzero(cells)
        regions.append(
            Region(
                label=len(regions) + 1,
                cell_count=count,
                bbox=(int(rr.min()), int(cc.min()), int(rr.max()), int(cc.max())),
                mean_xi=float(grid.xi[cells].mean()),
            )
        )
        out_mask |= cells
    return SegmentationResult(threshold=threshold, mask=out_mask, regions=regions)


def saturate_for_render(grid: LikelihoodGrid, cap: float = 0.02) -> np.ndarray:
    """Clip the fused likelihood at cap and normalize to [0, 1]."""
    if cap <= 0:
        raise ValueError("cap must be positive")
    return np.minimum(grid.xi, cap) / cap


def evaluate_detection(
    segmentations: list[SegmentationResult],
    label_masks: list[dict[str, np.ndarray]],
) -> dict:
    """Per-category detection and coverage rates plus false-positive rates.

    label_masks holds, per frame, a boolean cell mask per moving-object
    category. Detection counts a frame when any predicted cell overlaps the
    category mask; coverage is the mean covered fraction of the mask.
    False positives are predicted cells outside every label mask.
    """
    if len(segmentations) != len(label_masks):
        raise MismatchedFramesError(
            f"{len(segmentations)} prediction frames vs {len(label_masks)} label frames"
        )

    per_cat: dict[str, dict] = {}
    fp_frames = 0
    spurious_fractions = []
    for seg, masks in zip(segmentations, label_masks):
        pred = seg.mask
        union = np.zeros_like(pred)
        for cat, mask in masks.items():
            union |= mask
            stats = per_cat.setdefault(cat, {"frames": 0, "detected": 0, "coverage": 0.0})
            labelled = int(mask.sum())
            if labelled == 0:
                continue
            stats["frames"] += 1
            overlap = int((pred & mask).sum())
            if overlap > 0:
                stats["detected"] += 1
            stats["coverage"] += overlap / labelled
        spurious = pred & ~union
        if spurious.any():
            fp_frames += 1
        n_pred = int(pred.sum())
        if n_pred > 0:
            spurious_fractions.append(int(spurious.sum()) / n_pred)

    categories = {}
    for cat, stats in sorted(per_cat.items()):
        n = stats["frames"]
        categories[cat] = {
            "frames": n,
            "detection_rate": stats["detected"] / n if n else 0.0,
            "coverage_rate": stats["coverage"] / n if n else 0.0,
        }
    return {
        "frames": len(segmentations),
        "categories": categories,
        "false_positives": {
            "frame_rate": fp_frames / len(segmentations) if segmentations else 0.0,
            "spurious_cell_fraction": (
                float(np.mean(spurious_fractions)) if spurious_fractions else 0.0
            ),
        },
    }
