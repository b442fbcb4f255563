"""Command-line pipeline.

Subcommands: ``calibrate`` learns margins from matched detections,
``apply`` expands a detections file with a saved model, ``eval`` scores
predictions against ground truth, ``simulate`` runs the synthetic coverage
experiment, ``report`` renders a stored report as text.

Exit codes: 0 success; 2 input or schema error; 3 statistical infeasibility
(not enough calibration data for the requested alpha); 4 internal error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Mapping, Sequence

from .conformal import (
    DegenerateBoxError,
    InsufficientCalibrationError,
    calibrate,
    conformalize,
)
from .geometry import BBox, Detection, filter_by_confidence, nms
from .ingest import (
    DatasetManifest,
    SchemaError,
    load_config,
    load_detections,
    load_groundtruth,
    load_manifest,
    load_model,
    load_report,
    save_detections,
    save_json,
    save_model,
    write_report,
)
from .matching import DEFAULT_MIN_IOU, match_dataset
from .metrics import evaluate
from .synthlab import coverage_experiment

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 on --help; pass it through
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except InsufficientCalibrationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DegenerateBoxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the exit contract
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conformalbox",
        description="Calibrate, expand and score object-detection boxes with coverage guarantees.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads; results never depend on this")

    p = sub.add_parser("calibrate", parents=[common],
                       help="learn per-side margins from predictions and ground truth")
    p.add_argument("--preds", required=True, help="raw detections JSON")
    p.add_argument("--gts", required=True, help="ground-truth JSON")
    p.add_argument("--alpha", type=float, required=True, help="target miscoverage in (0, 1)")
    p.add_argument("--penalty", choices=("additive", "multiplicative"), default="additive")
    p.add_argument("--min-iou", type=float, default=DEFAULT_MIN_IOU,
                   help="pairs below this IoU are not calibrated on")
    p.add_argument("--nms-iou", type=float, default=None, help="run NMS at this IoU first")
    p.add_argument("--confidence-floor", type=float, default=0.0,
                   help="drop detections with objectness below this")
    p.add_argument("--clamp-nonnegative", action="store_true",
                   help="floor learned margins at zero")
    p.add_argument("--manifest", default=None, help="dataset manifest JSON")
    p.add_argument("--split", default=None, help="restrict to this manifest split")
    p.add_argument("-o", "--output", required=True, help="where to write model.json")
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("apply", parents=[common],
                       help="replace each detection's box with its conformal box")
    p.add_argument("--preds", required=True, help="raw detections JSON")
    p.add_argument("--model", required=True, help="calibration model JSON")
    p.add_argument("--clip-to-image", action="store_true",
                   help="clamp boxes to image bounds from the manifest")
    p.add_argument("--manifest", default=None, help="dataset manifest JSON (for --clip-to-image)")
    p.add_argument("-o", "--output", required=True, help="where to write conformal detections")
    p.set_defaults(func=_cmd_apply)

    p = sub.add_parser("eval", parents=[common],
                       help="score detections: mAP family, conformal mAP, coverage, margins")
    p.add_argument("--preds", required=True, help="raw or conformalized detections JSON")
    p.add_argument("--gts", required=True, help="ground-truth JSON")
    p.add_argument("--model", default=None, help="conformalize raw detections with this model first")
    p.add_argument("--iou-t", type=float, default=0.5, help="headline IoU threshold")
    p.add_argument("--min-iou", type=float, default=DEFAULT_MIN_IOU)
    p.add_argument("--interp", choices=("11pt", "101pt"), default="11pt",
                   help="precision interpolation grid")
    p.add_argument("--nms-iou", type=float, default=None)
    p.add_argument("--confidence-floor", type=float, default=0.0)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default=None)
    p.add_argument("--label", default=None, help="row label in the report")
    p.add_argument("-o", "--output", required=True, help="where to write report.json")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("simulate", parents=[common],
                       help="Monte-Carlo coverage experiment from a config file")
    p.add_argument("--config", required=True, help="run configuration JSON")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("-o", "--output", required=True, help="where to write summary.json")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("report", parents=[common],
                       help="render a stored report.json as fixed-width text")
    p.add_argument("--input", required=True, help="report JSON produced by eval")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_report)
    return parser


def _prepare(
    by_image: Mapping[str, Sequence[Detection]],
    nms_iou: float | None,
    confidence_floor: float,
) -> dict[str, list[Detection]]:
    out: dict[str, list[Detection]] = {}
    for img, dets in by_image.items():
        cur = list(dets)
        if nms_iou is not None:
            cur = nms(cur, nms_iou)
        if confidence_floor > 0.0:
            cur = filter_by_confidence(cur, confidence_floor)
        out[img] = cur
    return out


def _restrict_to_split(
    preds: dict[str, list[Detection]],
    gts: dict[str, list],
    manifest_path: str | None,
    split: str | None,
) -> tuple[dict, dict, DatasetManifest | None]:
    manifest = load_manifest(manifest_path) if manifest_path else None
    if split is not None:
        if manifest is None:
            raise SchemaError("--split requires --manifest")
        keep = manifest.ids_for_split(split)
        preds = {img: v for img, v in preds.items() if img in keep}
        gts = {img: v for img, v in gts.items() if img in keep}
    return preds, gts, manifest


def _cmd_calibrate(args: argparse.Namespace) -> int:
    loaded = load_detections(args.preds)
    if loaded.originals_by_image is not None:
        raise SchemaError(f"{args.preds}: already conformalized; calibrate expects raw detections")
    gts = load_groundtruth(args.gts)
    preds, gts, _ = _restrict_to_split(loaded.by_image, gts, args.manifest, args.split)
    preds = _prepare(preds, args.nms_iou, args.confidence_floor)
    ds = match_dataset(preds, gts, args.min_iou, threads=args.threads)
    model = calibrate(ds.pairs, args.alpha, args.penalty,
                      clamp_nonnegative=args.clamp_nonnegative)
    save_model(model, args.output)
    print(f"calibrated {model.penalty} margins on {model.n_calibration} pairs "
          f"(alpha={model.alpha}): q={list(model.q)} -> {args.output}")
    return EXIT_OK


def _cmd_apply(args: argparse.Namespace) -> int:
    loaded = load_detections(args.preds)
    if loaded.originals_by_image is not None:
        raise SchemaError(f"{args.preds}: already conformalized; refusing to expand twice")
    model = load_model(args.model)
    manifest = load_manifest(args.manifest) if args.manifest else None
    if args.clip_to_image and manifest is None:
        raise SchemaError("--clip-to-image requires --manifest with image dimensions")

    if model.penalty == "multiplicative":
        offenders = [
            f"image {img!r} detection #{k} bbox={d.box.as_tuple()}"
            for img, dets in loaded.by_image.items()
            for k, d in enumerate(dets)
            if d.box.width == 0.0 or d.box.height == 0.0
        ]
        if offenders:
            raise DegenerateBoxError(
                "multiplicative model cannot expand degenerate boxes: " + "; ".join(offenders)
            )

    out: dict[str, list[Detection]] = {}
    originals: dict[str, list[BBox]] = {}
    collapsed: dict[str, list[bool]] = {}
    for img, dets in loaded.by_image.items():
        clip = None
        if args.clip_to_image:
            clip = manifest.size_of(img)
            if clip is None:
                raise SchemaError(f"manifest has no dimensions for image {img!r}")
        row_dets, row_orig, row_coll = [], [], []
        for d in dets:
            cb = conformalize(d.box, model, clip_to=clip)
            row_dets.append(Detection(d.image_id, cb.conformal, d.objectness, d.class_probs))
            row_orig.append(cb.original)
            row_coll.append(cb.collapsed)
        out[img] = row_dets
        originals[img] = row_orig
        collapsed[img] = row_coll
    save_detections(out, args.output, originals_by_image=originals, collapsed_by_image=collapsed)
    n = sum(len(v) for v in out.values())
    n_coll = sum(sum(v) for v in collapsed.values())
    note = f" ({n_coll} collapsed)" if n_coll else ""
    print(f"conformalized {n} detections with {model.penalty} margins{note} -> {args.output}")
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    loaded = load_detections(args.preds)
    gts = load_groundtruth(args.gts)
    preds, gts, _ = _restrict_to_split(loaded.by_image, gts, args.manifest, args.split)
    originals = loaded.originals_by_image

    if args.model is not None:
        if originals is not None:
            raise SchemaError(
                f"{args.preds}: already conformalized; drop --model or pass raw detections"
            )
        model = load_model(args.model)
        preds = _prepare(preds, args.nms_iou, args.confidence_floor)
        conf_preds: dict[str, list[Detection]] = {}
        originals = {}
        for img, dets in preds.items():
            row, row_orig = [], []
            for d in dets:
                cb = conformalize(d.box, model)
                row.append(Detection(d.image_id, cb.conformal, d.objectness, d.class_probs))
                row_orig.append(cb.original)
            conf_preds[img] = row
            originals[img] = row_orig
        preds = conf_preds
    else:
        preds = _prepare(preds, args.nms_iou, args.confidence_floor)
        if originals is not None and (args.nms_iou is not None or args.confidence_floor > 0.0):
            raise SchemaError(
                "NMS/confidence filtering of an already-conformalized file would "
                "desynchronize the stored originals; filter before applying the model"
            )

    label = args.label if args.label is not None else Path(args.preds).stem
    report = evaluate(
        preds,
        gts,
        originals,
        headline_iou=args.iou_t,
        min_iou=args.min_iou,
        interp=args.interp,
        confidence_floor=0.0,
        threads=args.threads,
        label=label,
    )
    write_report(report, args.output, fmt="json")
    print(f"evaluated {label}: mAP@{args.iou_t:g}={report.map_at.get(args.iou_t, float('nan')):.4f} "
          f"c_map={report.c_map:.4f} -> {args.output}")
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = args.seed if args.seed is not None else config.seed
    summary = coverage_experiment(
        config.law,
        config.alpha,
        config.penalty,
        n_calib=config.n_calib,
        n_test=config.n_test,
        n_trials=config.n_trials,
        seed=seed,
        min_iou=config.min_iou,
        clamp_nonnegative=config.clamp_nonnegative,
        threads=args.threads,
    )
    save_json(summary.to_dict(), args.output)
    print(f"simulated {summary.n_trials} trials ({summary.penalty}, alpha={summary.alpha}): "
          f"mean coverage {summary.mean:.4f} [{summary.min:.4f}, {summary.max:.4f}] -> {args.output}")
    return EXIT_OK


def _cmd_report(args: argparse.Namespace) -> int:
    report = load_report(args.input)
    write_report(report, args.output, fmt=args.format)
    print(f"rendered {args.input} as {args.format} -> {args.output}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
