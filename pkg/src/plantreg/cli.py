"""``plantreg`` command line.

Exit status is 0 on success, 1 when the input or a pipeline stage fails (a
JSON object describing the error goes to stderr) and 2 for usage or config
mistakes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cameras import convert_distortion, emit_transforms, load_rig
from .config import ENV_VAR, Config, ConfigError, load_config
from .features import compute_fpfh, estimate_normals
from .formats import dump_json, finite_or_none, load_json, read_cloud, read_ply, write_ply
from .geometry import PointCloud, apply_transform
from .render import render_turntable
from .result import RegistrationError
from .spatial import KdIndex
from .splats import EmptyAfterFilter, SplatSet, filter_splats
from .synth import GrowthScenario, dump_series, generate
from .temporal import (
    SequenceAlignment,
    SequenceError,
    StageError,
    TimeSeries,
    check_constraints,
    load_frame,
    register_pair,
    register_sequence,
)

log = logging.getLogger("plantreg")


class DomainError(Exception):
    """Raised by a subcommand for a failure that is not a usage mistake."""

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details


def _transform_list(t) -> list[float]:
    return [float(v) for v in t.as_matrix().reshape(-1)]


def cmd_filter(args: argparse.Namespace, cfg: Config) -> None:
    obj = read_ply(args.input)
    if not isinstance(obj, SplatSet):
        raise DomainError(f"{args.input} is not a splat export (no scale_0/rot_0 properties)", path=str(args.input))
    try:
        cloud, report = filter_splats(obj, cfg.pipeline.filter)
    except EmptyAfterFilter as exc:
        if args.report:
            dump_json(exc.report.to_dict(), args.report)
        raise DomainError(str(exc), report=exc.report.to_dict()) from None
    write_ply(cloud, args.output, args.ply_format)
    if args.report:
        dump_json(report.to_dict(), args.report)
    log.info("kept %d of %d splats", report.kept_count, report.input_count)


def cmd_features(args: argparse.Namespace, cfg: Config) -> None:
    pc = _load_cloud(args.input, cfg)
    idx = KdIndex(pc)
    with_n, degenerate = estimate_normals(pc, idx, cfg.pipeline.features)
    desc, isolated = compute_fpfh(with_n, idx, cfg.pipeline.features)
    write_ply(with_n, args.output, args.ply_format)
    if args.descriptors:
        np.save(args.descriptors, desc)
    log.info("%d points, %d degenerate normals, %d isolated", len(pc), int(degenerate.sum()), int(isolated.sum()))


def _load_cloud(path: str, cfg: Config) -> PointCloud:
    obj = read_ply(path)
    if isinstance(obj, SplatSet):
        obj, _ = filter_splats(obj, cfg.pipeline.filter)
    return obj


def cmd_register_pair(args: argparse.Namespace, cfg: Config) -> None:
    src = _load_cloud(args.source, cfg)
    ref = _load_cloud(args.reference, cfg)
    res = register_pair(src, ref, cfg.pipeline, seed=cfg.seed)
    doc = {
        "transform": _transform_list(res.transform),
        "loss": finite_or_none(res.loss),
        "fitness": res.fitness,
        "correspondence_distance": res.correspondence_distance,
        "deformation": res.deformation.to_dict(),
        "stages": [
            {"stage": name, "fitness": r.fitness, "inlier_rmse": r.inlier_rmse,
             "iterations": r.iterations_used, "converged_by": r.converged_by.value}
            for name, r in [("coarse", res.coarse), *(("icp", f) for f in res.fine)]
            if r is not None
        ],
    }
    dump_json(doc, args.out)


def cmd_register_sequence(args: argparse.Namespace, cfg: Config) -> None:
    manifest = Path(args.manifest)
    series = TimeSeries.from_manifest(load_json(manifest), base=manifest.parent)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            alignment = register_sequence(series, cfg.pipeline, seed=cfg.seed, threads=cfg.threads)
        except SequenceError as exc:
            if args.out:
                dump_json(exc.partial.to_dict(), args.out)
            raise DomainError(str(exc), frame=exc.index, stage=getattr(exc.cause, "stage", "")) from None
    for w in caught:
        log.warning("%s", w.message)
    dump_json(alignment.to_dict(), args.out)
    if args.aligned_dir:
        out = Path(args.aligned_dir)
        out.mkdir(parents=True, exist_ok=True)
        for entry, item in zip(series.entries, alignment.entries):
            cloud = apply_transform(item.transform, load_frame(entry, cfg.pipeline))
            write_ply(cloud, out / f"{item.label or item.timestamp.isoformat()}.ply", args.ply_format)


def cmd_convert_cameras(args: argparse.Namespace, cfg: Config) -> None:
    cams = load_rig(args.rig)
    images = [c.image if c.image is not None else f"images/{c.name}.png" for c in cams]
    emit_transforms([convert_distortion(c) for c in cams], images, args.out)


def cmd_synth(args: argparse.Namespace, cfg: Config) -> None:
    sc = GrowthScenario.from_dict(load_json(args.scenario))
    if args.seed is not None:
        sc = replace(sc, rng_seed=args.seed)
    dump_series(generate(sc), args.out_dir)


def cmd_render(args: argparse.Namespace, cfg: Config) -> None:
    spec = cfg.render
    if args.spec:
        doc = load_json(args.spec)
        try:
            spec = replace(spec, **{k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()})
        except TypeError as exc:
            raise ConfigError(f"{args.spec}: {exc}") from None
    pc = read_cloud(args.cloud)
    render_turntable(pc, spec, args.out_dir, fmt=args.image_format, threads=cfg.threads)


def cmd_check_constraints(args: argparse.Namespace, cfg: Config) -> None:
    alignment = SequenceAlignment.from_dict(load_json(args.alignment))
    summary = check_constraints(alignment, cfg.pipeline)
    doc = summary.to_dict()
    if args.out:
        dump_json(doc, args.out)
    else:
        print(json.dumps(doc, indent=2))
    if args.strict and not summary.all_ok:
        raise DomainError("constraint violations", alpha=summary.alpha_violations, beta=summary.beta_violations)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help=f"JSON config document (default: ${ENV_VAR} if set)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value by dotted key, e.g. ransac.max_iterations=5000; repeatable")
    common.add_argument("--seed", type=int, help="top-level random seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker threads; never changes results")
    common.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")

    ply = argparse.ArgumentParser(add_help=False)
    ply.add_argument("--ply-format", choices=["binary_little_endian", "ascii"], default="binary_little_endian",
                     help="encoding of written PLY files")

    parser = argparse.ArgumentParser(prog="plantreg", description="Temporal registration of plant point clouds.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("filter", parents=[common, ply], help="drop degenerate splats and keep their means")
    p.add_argument("input", help="splat PLY")
    p.add_argument("output", help="filtered point cloud PLY")
    p.add_argument("--report", help="write the per-category filter counts here (JSON)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("features", parents=[common, ply], help="estimate normals and FPFH descriptors")
    p.add_argument("input", help="point cloud or splat PLY")
    p.add_argument("output", help="cloud with normals (PLY)")
    p.add_argument("--descriptors", help="write the n x 33 descriptor matrix here (.npy)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("register-pair", parents=[common], help="rigidly align a source cloud onto a reference")
    p.add_argument("source")
    p.add_argument("reference")
    p.add_argument("--out", default="transform.json", help="output JSON (default: transform.json)")
    p.set_defaults(func=cmd_register_pair)

    p = sub.add_parser("register-sequence", parents=[common, ply], help="align a dated series into the first frame")
    p.add_argument("manifest", help='JSON list of {"date", "cloud", "label"} entries')
    p.add_argument("--out", default="alignment.json", help="output JSON (default: alignment.json)")
    p.add_argument("--aligned-dir", help="also write every frame, transformed, into this directory")
    p.set_defaults(func=cmd_register_sequence)

    p = sub.add_parser("convert-cameras", parents=[common], help="division-model rig to per-image transforms JSON")
    p.add_argument("rig", help="rig manifest JSON")
    p.add_argument("--out", default="transforms.json", help="output JSON (default: transforms.json)")
    p.set_defaults(func=cmd_convert_cameras)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic growth series")
    p.add_argument("scenario", help="scenario JSON")
    p.add_argument("--out-dir", required=True, help="directory for frame PLYs, manifest.json, ground_truth.json")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("render", parents=[common], help="write turntable frames of a cloud")
    p.add_argument("cloud", help="point cloud PLY")
    p.add_argument("--spec", help="turntable JSON; keys override the config's render section")
    p.add_argument("--out-dir", required=True, help="directory for frame_NNNN images")
    p.add_argument("--image-format", choices=["png", "ppm"], default="png", help="image encoding (default: png)")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("check-constraints", parents=[common], help="re-evaluate the alpha and beta bounds")
    p.add_argument("alignment", help="alignment JSON from register-sequence")
    p.add_argument("--out", help="write the summary here instead of stdout")
    p.add_argument("--strict", action="store_true", help="exit 1 when any bound is violated")
    p.set_defaults(func=cmd_check_constraints)
    return parser


def _error(kind: str, message: str, code: int, **details) -> int:
    print(json.dumps({"error": kind, "message": message, **details}), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    logging.captureWarnings(True)
    try:
        cfg = load_config(args.config, args.overrides)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg = replace(cfg, threads=args.threads)
    except ConfigError as exc:
        return _error("ConfigError", str(exc), 2)
    except FileNotFoundError as exc:
        return _error("FileNotFoundError", str(exc), 1, path=str(args.config))

    try:
        args.func(args, cfg)
    except ConfigError as exc:
        return _error("ConfigError", str(exc), 2)
    except DomainError as exc:
        return _error(args.command, str(exc), 1, **exc.details)
    except FileNotFoundError as exc:
        path = exc.filename or next((a for a in _paths(args) if not Path(a).exists()), "")
        return _error("FileNotFoundError", str(exc), 1, path=str(path))
    except (StageError, RegistrationError) as exc:
        return _error(type(exc).__name__, str(exc), 1, stage=getattr(exc, "stage", ""))
    except (ValueError, OSError) as exc:
        return _error(type(exc).__name__, str(exc), 1)
    return 0


def _paths(args: argparse.Namespace) -> list[str]:
    keys = ("input", "source", "reference", "manifest", "rig", "scenario", "cloud", "alignment", "spec")
    return [getattr(args, k) for k in keys if getattr(args, k, None)]


if __name__ == "__main__":
    sys.exit(main())
