"""Command-line interface: simulate, detect, eval, render.

Exit codes: 0 success, 2 configuration error, 3 input parse/data error,
4 empty frame set, 1 unexpected failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import io_formats as iof
from .pipeline import (
    MismatchedFramesError,
    PipelineError,
    evaluate_frame_points,
    segment,
)
from .presets import PRESETS
from .simulator import SceneError, EmptySceneError, generate
from .camera import save_camera_config

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_EMPTY = 4


def _parse_weights(text: str):
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError("weights must be four comma-separated numbers e,d,h,p")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fisheyemotion",
        description="Moving object detection on the fisheye projection sphere.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a labelled synthetic scene")
    group = p_sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=sorted(PRESETS), help="bundled scene")
    group.add_argument("--scene", help="scene spec JSON file")
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--frames", type=int, default=None, help="preset only")
    p_sim.add_argument("--noise-sigma", type=float, default=None)

    p_det = sub.add_parser("detect", help="run the detection pipeline on files")
    p_det.add_argument("--config", help="run config JSON")
    p_det.add_argument("--camera", help="camera JSON (intrinsics + road frame)")
    p_det.add_argument("--correspondences")
    p_det.add_argument("--poses")
    p_det.add_argument("--out-dir")
    p_det.add_argument("--threshold", type=float, default=None)
    p_det.add_argument("--cell-size", type=int, default=None)
    p_det.add_argument("--max-range", type=float, default=None, help="<=0 disables gating")
    p_det.add_argument("--min-region", type=int, default=None)
    p_det.add_argument("--render-cap", type=float, default=None)
    p_det.add_argument("--weights", type=_parse_weights, default=None, metavar="E,D,H,P")
    p_det.add_argument("--lambda-h", type=float, default=None)
    p_det.add_argument("--lambda-p", type=float, default=None)
    p_det.add_argument("--adaptive-lambda-p", action="store_true", default=None)

    p_eval = sub.add_parser("eval", help="score detections against labels")
    p_eval.add_argument("--segmentation", required=True, help="segmentation JSON from detect")
    p_eval.add_argument("--labels", required=True, help="labels CSV from simulate")
    p_eval.add_argument("--out-dir", help="write metrics.json/csv/png here")

    p_ren = sub.add_parser("render", help="re-render likelihood CSVs to PGM and PNG")
    p_ren.add_argument("--likelihood-dir", required=True, help="directory with likelihood_*.csv")
    p_ren.add_argument("--out-dir", required=True)
    p_ren.add_argument("--cell-size", type=int, default=5)
    p_ren.add_argument("--cap", type=float, default=0.02)
    return parser


def cmd_simulate(args) -> int:
    if args.preset:
        kw = {}
        if args.seed is not None:
            kw["seed"] = args.seed
        if args.frames is not None:
            kw["frames"] = args.frames
        if args.noise_sigma is not None:
            kw["noise_sigma"] = args.noise_sigma
        spec = PRESETS[args.preset](**kw)
    else:
        spec = iof.load_scene(args.scene)
        if args.frames is not None:
            print("error: --frames applies to presets only", file=sys.stderr)
            return EXIT_CONFIG
        from dataclasses import replace

        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
        if args.noise_sigma is not None:
            spec = replace(spec, noise_sigma=args.noise_sigma)

    observations = generate(spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    iof.write_correspondences(out / "correspondences.csv", observations)
    iof.write_poses(out / "poses.csv", spec.poses)
    iof.write_labels(out / "labels.csv", observations)
    save_camera_config(out / "camera.json", spec.intrinsics, spec.road_frame)
    n = sum(len(o.samples) for o in observations)
    print(f"wrote {len(observations)} frames, {n} correspondences to {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = iof.load_run_config(args.config) if args.config else iof.RunConfig()
    cfg = iof.apply_overrides(
        cfg,
        intrinsics_path=args.camera,
        correspondences_path=args.correspondences,
        poses_path=args.poses,
        output_dir=args.out_dir,
        threshold=args.threshold,
        cell_size=args.cell_size,
        max_range=args.max_range,
        min_region=args.min_region,
        render_cap=args.render_cap,
        weights=args.weights,
        lambda_h=args.lambda_h,
        lambda_p=args.lambda_p,
        adaptive_lambda_p=args.adaptive_lambda_p,
    )
    intr, rf = cfg.load_camera()
    if not cfg.correspondences_path or not cfg.poses_path:
        raise iof.ConfigError("detect needs --correspondences and --poses (or a run config)")
    if not cfg.output_dir:
        raise iof.ConfigError("detect needs --out-dir (or output_dir in the run config)")
    for path in (cfg.correspondences_path, cfg.poses_path):
        if not Path(path).exists():
            raise iof.ConfigError(f"input file not found: {path}")

    frames = iof.read_correspondences(cfg.correspondences_path)
    poses = iof.read_poses(cfg.poses_path)
    if not frames:
        print("error: correspondence file holds no frames", file=sys.stderr)
        return EXIT_EMPTY
    last = max(frames)
    if last + 1 >= len(poses):
        raise iof.ConfigError(
            f"pose file {cfg.poses_path} has {len(poses)} poses, frame {last} needs {last + 2}"
        )

    from .render import render_grid_pgm

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    segmentations = []
    for f in sorted(frames):
        uv_prev, uv_curr = frames[f]
        grid = evaluate_frame_points(
            uv_prev, uv_curr, poses[f], poses[f + 1], intr, rf, cfg.constraints, cfg.pipeline
        )
        iof.write_likelihood_csv(out / f"likelihood_{f:04d}.csv", grid)
        render_grid_pgm(out / f"map_{f:04d}.pgm", grid, cfg.pipeline.render_cap)
        segmentations.append(segment(grid, cfg.pipeline.threshold, cfg.pipeline.min_region))
    iof.write_segmentation(out / "segmentation.json", segmentations, cfg.pipeline)
    print(f"processed {len(frames)} frames into {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    for path in (args.segmentation, args.labels):
        if not Path(path).exists():
            raise iof.ConfigError(f"input file not found: {path}")
    segmentations, meta = iof.read_segmentation(args.segmentation)
    labels = iof.read_labels(args.labels)
    if not segmentations:
        print("error: segmentation file holds no frames", file=sys.stderr)
        return EXIT_EMPTY
    if labels and max(labels) + 1 > len(segmentations):
        raise MismatchedFramesError(
            f"labels cover {max(labels) + 1} frames, segmentation has {len(segmentations)}"
        )
    rows = segmentations[0].mask.shape[0]
    cols = segmentations[0].mask.shape[1]
    masks = iof.label_masks(labels, len(segmentations), rows, cols, meta["cell_size"])

    from .pipeline import evaluate_detection

    metrics = evaluate_detection(segmentations, masks)
    print(iof.format_metrics_table(metrics))
    if args.out_dir:
        from .render import render_metrics_figure

        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        iof.write_metrics_json(out / "metrics.json", metrics)
        iof.write_metrics_csv(out / "metrics.csv", metrics)
        render_metrics_figure(out / "metrics.png", metrics)
    return EXIT_OK


def cmd_render(args) -> int:
    from .render import render_grid_figure, render_grid_pgm

    src = Path(args.likelihood_dir)
    if not src.exists():
        raise iof.ConfigError(f"likelihood directory not found: {src}")
    files = sorted(src.glob("likelihood_*.csv"))
    if not files:
        print(f"error: no likelihood_*.csv under {src}", file=sys.stderr)
        return EXIT_EMPTY
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for path in files:
        grid = iof.read_likelihood_csv(path, cell_size=args.cell_size)
        stem = path.stem.replace("likelihood", "map")
        render_grid_pgm(out / f"{stem}.pgm", grid, args.cap)
        render_grid_figure(out / f"{stem}.png", grid, args.cap, title=path.stem)
    print(f"rendered {len(files)} frames into {out}")
    return EXIT_OK


_HANDLERS = {
    "simulate": cmd_simulate,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "render": cmd_render,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except iof.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SceneError as exc:
        if isinstance(exc, EmptySceneError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_EMPTY
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except iof.ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except MismatchedFramesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
