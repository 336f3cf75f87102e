"""File formats: correspondence/pose/label CSV, likelihood CSV, JSON outputs.

CSV was chosen over binary for diffability at desk scale. All files written
here are re-read by the same code paths (schema self-consistency).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, RoadFrame
from .constraints import CameraPose, ConstraintConfig
from .pipeline import (
    GATE_CODES,
    GATE_NAMES,
    LikelihoodGrid,
    PipelineConfig,
    Region,
    SegmentationResult,
)
from .simulator import FrameObservation, ObjectSpec, SceneSpec, straight_poses


class ConfigError(Exception):
    """Missing or invalid configuration input."""


class ParseError(Exception):
    """Malformed input file; carries path and line number."""

    def __init__(self, path, line: int, message: str):
        super().__init__(f"{path}:{line}: {message}")
        self.path = str(path)
        self.line = line


def _open_rows(path, expected_header):
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    reader = csv.reader(fh)
    header = next(reader, None)
    if header != expected_header:
        fh.close()
        raise ParseError(path, 1, f"expected header {','.join(expected_header)}")
    return fh, reader


# --- correspondences --------------------------------------------------------

CORR_HEADER = ["frame", "u_prev", "v_prev", "u_curr", "v_curr"]


def write_correspondences(path, observations: list[FrameObservation]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CORR_HEADER)
        for obs in observations:
            s = obs.samples
            for i in range(len(s)):
                w.writerow(
                    [obs.index]
                    + [f"{x:.6f}" for x in (*s.uv_prev[i], *s.uv_curr[i])]
                )


def read_correspondences(path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Read frame -> (uv_prev (N,2), uv_curr (N,2)) from CSV."""
    fh, reader = _open_rows(path, CORR_HEADER)
    frames: dict[int, list] = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ParseError(path, lineno, f"expected 5 fields, got {len(row)}")
            try:
                frame = int(row[0])
                vals = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
            frames.setdefault(frame, []).append(vals)
    return {
        f: (np.array(rows)[:, :2], np.array(rows)[:, 2:]) for f, rows in frames.items()
    }


# --- poses ------------------------------------------------------------------

POSE_HEADER = ["frame", "cx", "cy", "cz"] + [f"r{i}{j}" for i in range(3) for j in range(3)]


def write_poses(path, poses: list[CameraPose]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(POSE_HEADER)
        for k, pose in enumerate(poses):
            w.writerow([k] + [f"{x:.17g}" for x in (*pose.c, *pose.r.ravel())])


def read_poses(path) -> list[CameraPose]:
    fh, reader = _open_rows(path, POSE_HEADER)
    entries = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 13:
                raise ParseError(path, lineno, f"expected 13 fields, got {len(row)}")
            try:
                frame = int(row[0])
                vals = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
            entries[frame] = CameraPose(c=np.array(vals[:3]), r=np.array(vals[3:]).reshape(3, 3))
    if not entries:
        raise ParseError(path, 2, "no poses found")
    if sorted(entries) != list(range(len(entries))):
        raise ParseError(path, 2, "pose frames must be contiguous from 0")
    return [entries[k] for k in range(len(entries))]


# --- labels -----------------------------------------------------------------

LABEL_HEADER = ["frame", "u", "v", "category", "is_moving", "range_m"]


def write_labels(path, observations: list[FrameObservation]) -> None:
    """Object ground truth, one row per non-ground sample (prev-frame pixel)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LABEL_HEADER)
        for obs in observations:
            s = obs.samples
            for i in range(len(s)):
                if s.category[i] == "ground":
                    continue
                w.writerow(
                    [
                        obs.index,
                        f"{s.uv_prev[i, 0]:.6f}",
                        f"{s.uv_prev[i, 1]:.6f}",
                        s.category[i],
                        int(s.is_moving[i]),
                        f"{s.range_m[i]:.6f}",
                    ]
                )


def read_labels(path) -> dict[int, list[tuple[float, float, str, bool]]]:
    fh, reader = _open_rows(path, LABEL_HEADER)
    frames: dict[int, list] = {}
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise ParseError(path, lineno, f"expected 6 fields, got {len(row)}")
            try:
                frame = int(row[0])
                u, v = float(row[1]), float(row[2])
                moving = bool(int(row[4]))
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
            frames.setdefault(frame, []).append((u, v, row[3], moving))
    return frames


def label_masks(
    labels: dict[int, list], n_frames: int, rows: int, cols: int, cell_size: int
) -> list[dict[str, np.ndarray]]:
    """Rasterize moving-object labels to per-frame, per-category cell masks."""
    out = []
    for f in range(n_frames):
        masks: dict[str, np.ndarray] = {}
        for u, v, category, moving in labels.get(f, []):
            if not moving:
                continue
            r, c = int(v // cell_size), int(u // cell_size)
            if 0 <= r < rows and 0 <= c < cols:
                masks.setdefault(category, np.zeros((rows, cols), dtype=bool))[r, c] = True
        out.append(masks)
    return out


# --- likelihood grids -------------------------------------------------------

GRID_HEADER = ["row", "col", "xi_e", "xi_d", "xi_h", "xi_p", "xi", "gated"]


def write_likelihood_csv(path, grid: LikelihoodGrid) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(GRID_HEADER)
        for r in range(grid.rows):
            for c in range(grid.cols):
                w.writerow(
                    [r, c]
                    + [
                        f"{getattr(grid, n)[r, c]:.9g}"
                        for n in ("xi_e", "xi_d", "xi_h", "xi_p", "xi")
                    ]
                    + [GATE_NAMES[int(grid.gated[r, c])]]
                )


def read_likelihood_csv(path, cell_size: int = 5) -> LikelihoodGrid:
    fh, reader = _open_rows(path, GRID_HEADER)
    rows_data = []
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 8:
                raise ParseError(path, lineno, f"expected 8 fields, got {len(row)}")
            if row[7] not in GATE_CODES:
                raise ParseError(path, lineno, f"unknown gate reason {row[7]!r}")
            try:
                rows_data.append(
                    (int(row[0]), int(row[1]), *map(float, row[2:7]), GATE_CODES[row[7]])
                )
            except ValueError as exc:
                raise ParseError(path, lineno, str(exc)) from exc
    if not rows_data:
        raise ParseError(path, 2, "empty likelihood grid")
    n_rows = max(r for r, *_ in rows_data) + 1
    n_cols = max(c for _, c, *_ in rows_data) + 1
    grid = LikelihoodGrid.empty(n_rows, n_cols, cell_size)
    for r, c, xe, xd, xh, xp, xi, gate in rows_data:
        grid.xi_e[r, c], grid.xi_d[r, c] = xe, xd
        grid.xi_h[r, c], grid.xi_p[r, c] = xh, xp
        grid.xi[r, c] = xi
        grid.gated[r, c] = gate
    return grid


# --- segmentation -----------------------------------------------------------

def segmentation_to_dict(frames: list[SegmentationResult], pcfg: PipelineConfig) -> dict:
    return {
        "cell_size": pcfg.cell_size,
        "threshold": pcfg.threshold,
        "min_region": pcfg.min_region,
        "frames": [
            {
                "frame": i,
                "rows": int(seg.mask.shape[0]),
                "cols": int(seg.mask.shape[1]),
                "cells": [[int(r), int(c)] for r, c in zip(*np.nonzero(seg.mask))],
                "regions": [
                    {
                        "label": reg.label,
                        "cell_count": reg.cell_count,
                        "bbox": list(reg.bbox),
                        "mean_xi": reg.mean_xi,
                    }
                    for reg in seg.regions
                ],
            }
            for i, seg in enumerate(frames)
        ],
    }


def write_segmentation(path, frames: list[SegmentationResult], pcfg: PipelineConfig) -> None:
    with open(path, "w") as fh:
        json.dump(segmentation_to_dict(frames, pcfg), fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_segmentation(path) -> tuple[list[SegmentationResult], dict]:
    with open(path) as fh:
        d = json.load(fh)
    frames = []
    for entry in d["frames"]:
        mask = np.zeros((entry["rows"], entry["cols"]), dtype=bool)
        for r, c in entry["cells"]:
            mask[r, c] = True
        regions = [
            Region(
                label=reg["label"],
                cell_count=reg["cell_count"],
                bbox=tuple(reg["bbox"]),
                mean_xi=reg["mean_xi"],
            )
            for reg in entry["regions"]
        ]
        frames.append(SegmentationResult(threshold=d["threshold"], mask=mask, regions=regions))
    return frames, d


# --- metrics ----------------------------------------------------------------

def write_metrics_json(path, metrics: dict) -> None:
    with open(path, "w") as fh:
        json.dump(metrics, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_metrics_csv(path, metrics: dict) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["category", "frames", "detection_rate", "coverage_rate"])
        for cat, stats in metrics["categories"].items():
            w.writerow(
                [cat, stats["frames"], f"{stats['detection_rate']:.6f}", f"{stats['coverage_rate']:.6f}"]
            )
        fp = metrics["false_positives"]
        w.writerow(["false_positive_frames", metrics["frames"], f"{fp['frame_rate']:.6f}", ""])
        w.writerow(["spurious_cell_fraction", "", f"{fp['spurious_cell_fraction']:.6f}", ""])


def format_metrics_table(metrics: dict) -> str:
    lines = [f"{'category':<16} {'frames':>6} {'detection':>10} {'coverage':>10}"]
    for cat, stats in metrics["categories"].items():
        lines.append(
            f"{cat:<16} {stats['frames']:>6d} "
            f"{stats['detection_rate']:>9.1%} {stats['coverage_rate']:>9.1%}"
        )
    fp = metrics["false_positives"]
    lines.append(
        f"{'false positives':<16} {metrics['frames']:>6d} "
        f"{fp['frame_rate']:>9.1%} {fp['spurious_cell_fraction']:>9.1%}"
    )
    return "\n".join(lines)


# --- scene specs ------------------------------------------------------------

def scene_from_dict(d: dict) -> SceneSpec:
    try:
        cam = d["camera"]
        intr = CameraIntrinsics.from_dict(cam)
        rf = RoadFrame.from_dict(cam)
        frames = int(d["frames"])
        ego = d["ego"]
    except KeyError as exc:
        raise ConfigError(f"scene spec missing field {exc}") from exc
    if "poses" in ego:
        poses = [
            CameraPose(c=np.array(p["c"], dtype=float), r=np.array(p["r"], dtype=float).reshape(3, 3))
            for p in ego["poses"]
        ]
    else:
        poses = straight_poses(
            ego["start"], ego["velocity"], frames, heading=ego.get("heading")
        )
    ground = d.get("ground", {})
    objects = [
        ObjectSpec(
            category=o["category"],
            center=o["center"],
            size=o["size"],
            velocity=o["velocity"],
            sample_step=float(o.get("sample_step", 0.25)),
        )
        for o in d.get("objects", [])
    ]
    return SceneSpec(
        intrinsics=intr,
        road_frame=rf,
        poses=poses,
        objects=objects,
        frames=frames,
        seed=int(d.get("seed", 0)),
        noise_sigma=float(d.get("noise_sigma", 0.0)),
        ground_pixel_stride=int(ground.get("pixel_stride", 5)),
        ground_max_distance=float(ground.get("max_distance", 14.0)),
        name=str(d.get("name", "scene")),
    )


def load_scene(path) -> SceneSpec:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read scene spec {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from exc
    return scene_from_dict(d)


# --- run configuration ------------------------------------------------------

@dataclass
class RunConfig:
    """Everything the detect/eval paths need, file paths included."""

    intrinsics_path: str | None = None
    road_frame_path: str | None = None
    constraints: ConstraintConfig = ConstraintConfig()
    pipeline: PipelineConfig = PipelineConfig()
    correspondences_path: str | None = None
    poses_path: str | None = None
    labels_path: str | None = None
    output_dir: str | None = None

    def load_camera(self) -> tuple[CameraIntrinsics, RoadFrame]:
        if not self.intrinsics_path:
            raise ConfigError("no intrinsics file configured (--camera or config intrinsics)")
        intr_path = Path(self.intrinsics_path)
        rf_path = Path(self.road_frame_path or self.intrinsics_path)
        for p in {intr_path, rf_path}:
            if not p.exists():
                raise ConfigError(f"camera config file not found: {p}")
        with open(intr_path) as fh:
            intr = CameraIntrinsics.from_dict(json.load(fh))
        with open(rf_path) as fh:
            rf = RoadFrame.from_dict(json.load(fh))
        return intr, rf


def load_run_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read run config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from exc
    base = Path(path).parent

    def _resolve(key):
        val = d.get(key)
        return str(base / val) if val else None

    try:
        cfg = RunConfig(
            intrinsics_path=_resolve("intrinsics"),
            road_frame_path=_resolve("road_frame"),
            constraints=ConstraintConfig.from_dict(d.get("constraints", {})),
            pipeline=PipelineConfig.from_dict(d.get("pipeline", {})),
            correspondences_path=_resolve("correspondences"),
            poses_path=_resolve("poses"),
            labels_path=_resolve("labels"),
            output_dir=_resolve("output_dir"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid run config {path}: {exc}") from exc
    return cfg


def apply_overrides(cfg: RunConfig, **kw) -> RunConfig:
    """Apply CLI flag overrides onto a run config; None values are ignored."""
    constraints = cfg.constraints
    pipeline = cfg.pipeline
    if kw.get("weights") is not None:
        constraints = replace(constraints, weights=tuple(kw["weights"]))
    for key in ("lambda_h", "lambda_p", "epsilon_t", "k_p"):
        if kw.get(key) is not None:
            constraints = replace(constraints, **{key: kw[key]})
    if kw.get("adaptive_lambda_p") is not None:
        constraints = replace(constraints, adaptive_lambda_p=kw["adaptive_lambda_p"])
    if kw.get("threshold") is not None:
        pipeline = replace(pipeline, threshold=kw["threshold"])
    if kw.get("cell_size") is not None:
        pipeline = replace(pipeline, cell_size=kw["cell_size"])
    if kw.get("max_range") is not None:
        value = None if kw["max_range"] <= 0 else kw["max_range"]
        pipeline = replace(pipeline, max_range=value)
    if kw.get("min_region") is not None:
        pipeline = replace(pipeline, min_region=kw["min_region"])
    if kw.get("render_cap") is not None:
        pipeline = replace(pipeline, render_cap=kw["render_cap"])
    out = replace(cfg, constraints=constraints, pipeline=pipeline)
    for key in (
        "intrinsics_path",
        "road_frame_path",
        "correspondences_path",
        "poses_path",
        "labels_path",
        "output_dir",
    ):
        if kw.get(key) is not None:
            out = replace(out, **{key: kw[key]})
    return out
