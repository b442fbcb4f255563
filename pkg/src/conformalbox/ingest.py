"""File formats: loading, validation, and canonical writing.

Every loader validates before constructing domain objects and raises
:class:`SchemaError` naming the offending record index and field. Writers
emit canonical JSON (sorted keys, two-space indent, shortest round-trip float
encoding, trailing newline) so identical inputs yield byte-identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from ._version import __version__
from .conformal import CalibrationModel, PENALTIES
from .geometry import BBox, Detection, GroundTruthBox
from .matching import DEFAULT_MIN_IOU
from .metrics import IOA_GRID_80_100, Counts, EvalReport, MarginReport
from .synthlab import PerturbationLaw

SPLITS = ("train", "calib", "test")
ORIGINS = ("real", "synthetic")


class SchemaError(ValueError):
    """An input file violates its documented schema."""


def _fail(where: str, message: str) -> None:
    raise SchemaError(f"{where}: {message}")


def _read_json(path: str | Path, what: str) -> Any:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"{what} file {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{what} file {path} is not valid JSON: {exc}") from exc


def _check_bbox(value: Any, where: str) -> BBox:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        _fail(where, f"must be a list of four numbers, got {value!r}")
    for k, v in enumerate(value):
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            _fail(f"{where}[{k}]", f"must be a finite number, got {v!r}")
    xmin, ymin, xmax, ymax = (float(v) for v in value)
    if xmin > xmax or ymin > ymax:
        _fail(where, f"inverted box {value!r} (expects [xmin, ymin, xmax, ymax])")
    return BBox(xmin, ymin, xmax, ymax)


def _check_str(rec: Mapping[str, Any], key: str, where: str) -> str:
    v = rec.get(key)
    if not isinstance(v, str) or not v:
        _fail(f"{where}.{key}", f"must be a non-empty string, got {v!r}")
    return v


@dataclass(frozen=True)
class DetectionDataset:
    """Loaded detections, grouped by image in file order.

    ``originals_by_image`` is present only for conformalized files (those
    whose records carry ``original_bbox``) and is index-aligned with
    ``by_image``.
    """

    by_image: dict[str, list[Detection]]
    originals_by_image: dict[str, list[BBox]] | None = None


def load_detections(path: str | Path) -> DetectionDataset:
    """Read a detections file (raw or conformalized).

    The document is an object with a ``detections`` list; each record holds
    ``image_id``, ``bbox`` as ``[xmin, ymin, xmax, ymax]``, ``objectness``
    and ``class_probs``. Conformalized records additionally carry
    ``original_bbox``. Mixing records with and without ``original_bbox``
    is rejected.
    """
    doc = _read_json(path, "detections")
    if not isinstance(doc, dict) or not isinstance(doc.get("detections"), list):
        raise SchemaError(f"{path}: expected an object with a 'detections' list")
    records = doc["detections"]
    by_image: dict[str, list[Detection]] = {}
    originals: dict[str, list[BBox]] = {}
    any_original = False
    for i, rec in enumerate(records):
        where = f"detections[{i}]"
        if not isinstance(rec, dict):
            _fail(where, f"must be an object, got {type(rec).__name__}")
        image_id = _check_str(rec, "image_id", where)
        box = _check_bbox(rec.get("bbox"), f"{where}.bbox")
        objectness = rec.get("objectness")
        if (
            not isinstance(objectness, (int, float))
            or isinstance(objectness, bool)
            or not 0.0 <= objectness <= 1.0
        ):
            _fail(f"{where}.objectness", f"must be a number in [0, 1], got {objectness!r}")
        probs = rec.get("class_probs")
        if not isinstance(probs, list) or not probs:
            _fail(f"{where}.class_probs", f"must be a non-empty list, got {probs!r}")
        for k, p in enumerate(probs):
            if not isinstance(p, (int, float)) or isinstance(p, bool) or not 0.0 <= p <= 1.0:
                _fail(f"{where}.class_probs[{k}]", f"must be a number in [0, 1], got {p!r}")
        if abs(math.fsum(probs) - 1.0) > 1e-6:
            _fail(f"{where}.class_probs", f"must sum to 1 within 1e-6, got {math.fsum(probs)!r}")
        det = Detection(
            image_id=image_id,
            box=box,
            objectness=float(objectness),
            class_probs=tuple(float(p) for p in probs),
        )
        by_image.setdefault(image_id, []).append(det)
        if "original_bbox" in rec:
            any_original = True
            originals.setdefault(image_id, []).append(
                _check_bbox(rec["original_bbox"], f"{where}.original_bbox")
            )
        elif any_original:
            _fail(f"{where}.original_bbox", "missing, but earlier records carry one")
    if any_original:
        for img, dets in by_image.items():
            if len(originals.get(img, [])) != len(dets):
                raise SchemaError(
                    f"{path}: records for image {img!r} mix conformalized and raw detections"
                )
        return DetectionDataset(by_image=by_image, originals_by_image=originals)
    return DetectionDataset(by_image=by_image)


def load_groundtruth(path: str | Path, n_classes: int | None = None) -> dict[str, list[GroundTruthBox]]:
    """Read a ground-truth file: object with a ``groundtruth`` record list.

    Records hold ``image_id``, ``bbox`` and ``class_id``. Boxes must have
    positive area; when ``n_classes`` is given, class ids must lie below it.
    """
    doc = _read_json(path, "groundtruth")
    if not isinstance(doc, dict) or not isinstance(doc.get("groundtruth"), list):
        raise SchemaError(f"{path}: expected an object with a 'groundtruth' list")
    out: dict[str, list[GroundTruthBox]] = {}
    for i, rec in enumerate(doc["groundtruth"]):
        where = f"groundtruth[{i}]"
        if not isinstance(rec, dict):
            _fail(where, f"must be an object, got {type(rec).__name__}")
        image_id = _check_str(rec, "image_id", where)
        box = _check_bbox(rec.get("bbox"), f"{where}.bbox")
        if box.width == 0.0 or box.height == 0.0:
            _fail(f"{where}.bbox", f"ground-truth box must have positive area, got {rec['bbox']!r}")
        class_id = rec.get("class_id", 0)
        if not isinstance(class_id, int) or isinstance(class_id, bool) or class_id < 0:
            _fail(f"{where}.class_id", f"must be a nonnegative integer, got {class_id!r}")
        if n_classes is not None and class_id >= n_classes:
            _fail(f"{where}.class_id", f"must be < {n_classes}, got {class_id}")
        out.setdefault(image_id, []).append(
            GroundTruthBox(image_id=image_id, box=box, class_id=class_id)
        )
    return out


def save_detections(
    by_image: Mapping[str, Sequence[Detection]],
    path: str | Path,
    originals_by_image: Mapping[str, Sequence[BBox]] | None = None,
    collapsed_by_image: Mapping[str, Sequence[bool]] | None = None,
) -> None:
    """Write detections canonically, images in sorted order."""
    records = []
    for img in sorted(by_image):
        dets = by_image[img]
        origs = originals_by_image.get(img) if originals_by_image else None
        colls = collapsed_by_image.get(img) if collapsed_by_image else None
        for k, d in enumerate(dets):
            rec: dict[str, Any] = {
                "image_id": d.image_id,
                "bbox": list(d.box.as_tuple()),
                "objectness": d.objectness,
                "class_probs": list(d.class_probs),
            }
            if origs is not None:
                rec["original_bbox"] = list(origs[k].as_tuple())
            if colls is not None:
                rec["collapsed"] = bool(colls[k])
            records.append(rec)
    _write_canonical({"detections": records}, path)


def save_groundtruth(gts_by_image: Mapping[str, Sequence[GroundTruthBox]], path: str | Path) -> None:
    """Write ground truth canonically, images in sorted order."""
    records = [
        {"image_id": g.image_id, "bbox": list(g.box.as_tuple()), "class_id": g.class_id}
        for img in sorted(gts_by_image)
        for g in gts_by_image[img]
    ]
    _write_canonical({"groundtruth": records}, path)


def save_model(model: CalibrationModel, path: str | Path) -> None:
    """Write a calibration model as JSON, tagged with the toolkit version."""
    _write_canonical(
        {
            "penalty": model.penalty,
            "alpha": model.alpha,
            "q": list(model.q),
            "n_calibration": model.n_calibration,
            "toolkit_version": __version__,
        },
        path,
    )


def load_model(path: str | Path) -> CalibrationModel:
    """Read a calibration model; floats round-trip at full precision."""
    doc = _read_json(path, "model")
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    for key in ("penalty", "alpha", "q", "n_calibration"):
        if key not in doc:
            _fail(f"model.{key}", "missing")
    if doc["penalty"] not in PENALTIES:
        _fail("model.penalty", f"must be one of {PENALTIES}, got {doc['penalty']!r}")
    if not isinstance(doc["alpha"], (int, float)) or not 0.0 < doc["alpha"] < 1.0:
        _fail("model.alpha", f"must be a number in (0, 1), got {doc['alpha']!r}")
    q = doc["q"]
    if not isinstance(q, list) or len(q) != 4 or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in q
    ):
        _fail("model.q", f"must be four finite numbers, got {q!r}")
    if not isinstance(doc["n_calibration"], int) or doc["n_calibration"] < 1:
        _fail("model.n_calibration", f"must be a positive integer, got {doc['n_calibration']!r}")
    return CalibrationModel(
        penalty=doc["penalty"],
        alpha=float(doc["alpha"]),
        q=tuple(float(v) for v in q),
        n_calibration=doc["n_calibration"],
    )


@dataclass(frozen=True)
class ImageInfo:
    image_id: str
    split: str
    origin: str
    width: float | None = None
    height: float | None = None


@dataclass(frozen=True)
class DatasetManifest:
    """Bookkeeping for a dataset: image roster, splits, class names."""

    images: tuple[ImageInfo, ...]
    class_names: tuple[str, ...]

    def ids_for_split(self, split: str) -> set[str]:
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        return {im.image_id for im in self.images if im.split == split}

    def size_of(self, image_id: str) -> tuple[float, float] | None:
        for im in self.images:
            if im.image_id == image_id and im.width is not None and im.height is not None:
                return (im.width, im.height)
        return None


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a dataset manifest: image roster plus class names."""
    doc = _read_json(path, "manifest")
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise SchemaError(f"{path}: expected an object with an 'images' list")
    names = doc.get("class_names", [])
    if not isinstance(names, list) or not all(isinstance(n, str) and n for n in names):
        raise SchemaError("manifest.class_names: must be a list of non-empty strings")
    images: list[ImageInfo] = []
    seen: set[str] = set()
    for i, rec in enumerate(doc["images"]):
        where = f"images[{i}]"
        if not isinstance(rec, dict):
            _fail(where, f"must be an object, got {type(rec).__name__}")
        image_id = _check_str(rec, "image_id", where)
        if image_id in seen:
            _fail(f"{where}.image_id", f"duplicate id {image_id!r}")
        seen.add(image_id)
        split = _check_str(rec, "split", where)
        if split not in SPLITS:
            _fail(f"{where}.split", f"must be one of {SPLITS}, got {split!r}")
        origin = _check_str(rec, "origin", where)
        if origin not in ORIGINS:
            _fail(f"{where}.origin", f"must be one of {ORIGINS}, got {origin!r}")
        dims: dict[str, float | None] = {}
        for key in ("width", "height"):
            v = rec.get(key)
            if v is not None and (
                not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0 or not math.isfinite(v)
            ):
                _fail(f"{where}.{key}", f"must be a positive number, got {v!r}")
            dims[key] = float(v) if v is not None else None
        images.append(
            ImageInfo(image_id=image_id, split=split, origin=origin, **dims)
        )
    return DatasetManifest(images=tuple(images), class_names=tuple(names))


@dataclass(frozen=True)
class RunConfig:
    """Knobs shared by the pipeline commands; serializes canonically.

    The synthetic-experiment fields (``law`` onward) matter only to
    ``simulate`` and stay at their defaults otherwise.
    """

    alpha: float = 0.1
    penalty: str = "additive"
    iou_threshold: float = 0.5
    confidence_floor: float = 0.0
    nms_iou: float | None = None
    min_iou: float = DEFAULT_MIN_IOU
    interp: str = "11pt"
    ioa_grid: tuple[float, ...] = IOA_GRID_80_100
    clip_to_image: bool = False
    clamp_nonnegative: bool = False
    seed: int = 0
    law: PerturbationLaw = field(default_factory=PerturbationLaw)
    n_calib: int = 1000
    n_test: int = 1000
    n_trials: int = 100

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")
        if not 0.0 <= self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must lie in [0, 1], got {self.iou_threshold!r}")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ValueError(f"confidence_floor must lie in [0, 1], got {self.confidence_floor!r}")
        if self.nms_iou is not None and not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou must lie in [0, 1], got {self.nms_iou!r}")
        if not 0.0 <= self.min_iou <= 1.0:
            raise ValueError(f"min_iou must lie in [0, 1], got {self.min_iou!r}")
        if self.interp not in ("11pt", "101pt"):
            raise ValueError(f"interp must be '11pt' or '101pt', got {self.interp!r}")
        if not self.ioa_grid or not all(0.0 <= s <= 1.0 for s in self.ioa_grid):
            raise ValueError(f"ioa_grid entries must lie in [0, 1], got {self.ioa_grid!r}")
        object.__setattr__(self, "ioa_grid", tuple(float(s) for s in self.ioa_grid))
        for key in ("n_calib", "n_test", "n_trials"):
            v = getattr(self, key)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"{key} must be a positive integer, got {v!r}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {self.seed!r}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "alpha": self.alpha,
            "penalty": self.penalty,
            "iou_threshold": self.iou_threshold,
            "confidence_floor": self.confidence_floor,
            "nms_iou": self.nms_iou,
            "min_iou": self.min_iou,
            "interp": self.interp,
            "ioa_grid": list(self.ioa_grid),
            "clip_to_image": self.clip_to_image,
            "clamp_nonnegative": self.clamp_nonnegative,
            "seed": self.seed,
            "law": self.law.to_dict(),
            "n_calib": self.n_calib,
            "n_test": self.n_test,
            "n_trials": self.n_trials,
        }
        return d

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RunConfig":
        known = {
            "alpha", "penalty", "iou_threshold", "confidence_floor", "nms_iou",
            "min_iou", "interp", "ioa_grid", "clip_to_image", "clamp_nonnegative",
            "seed", "law", "n_calib", "n_test", "n_trials",
        }
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"config: unknown keys {sorted(unknown)}")
        kwargs: dict[str, Any] = dict(doc)
        if "ioa_grid" in kwargs:
            kwargs["ioa_grid"] = tuple(kwargs["ioa_grid"])
        if "law" in kwargs:
            kwargs["law"] = PerturbationLaw.from_dict(kwargs["law"])
        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"config: {exc}") from exc


def load_config(path: str | Path) -> RunConfig:
    doc = _read_json(path, "config")
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    return RunConfig.from_dict(doc)


def save_config(config: RunConfig, path: str | Path) -> None:
    _write_canonical(config.to_dict(), path)


def report_to_dict(report: EvalReport) -> dict[str, Any]:
    """Flatten an evaluation report into JSON-ready primitives."""

    def fmt_t(t: float) -> str:
        return f"{t:.2f}"

    d: dict[str, Any] = {
        "label": report.label,
        "map_at": {fmt_t(t): v for t, v in report.map_at.items()},
        "map_50_95": report.map_50_95,
        "c_map": report.c_map,
        "c_map_50_80_100": report.c_map_50_80_100,
        "coverage": report.coverage,
        "margins": None
        if report.margins is None
        else {
            "left": report.margins.left,
            "top": report.margins.top,
            "right": report.margins.right,
            "bottom": report.margins.bottom,
            "total": report.margins.total,
        },
        "stretch": report.stretch,
        "box_area_sqrt_mean": report.box_area_sqrt_mean,
        "box_area_sqrt_std": report.box_area_sqrt_std,
        "counts": {
            fmt_t(t): {"tp": c.tp, "fp": c.fp, "fn": c.fn} for t, c in report.counts.items()
        },
        "matched_pairs": report.matched_pairs,
        "unmatched_predictions": report.unmatched_predictions,
        "unmatched_ground_truths": report.unmatched_ground_truths,
    }
    return d


def report_from_dict(doc: Mapping[str, Any]) -> EvalReport:
    """Inverse of :func:`report_to_dict` (used by the report command)."""
    try:
        margins = doc["margins"]
        return EvalReport(
            label=doc["label"],
            map_at={float(t): v for t, v in doc["map_at"].items()},
            map_50_95=doc["map_50_95"],
            c_map=doc["c_map"],
            c_map_50_80_100=doc["c_map_50_80_100"],
            coverage=doc["coverage"],
            margins=None if margins is None else MarginReport(**margins),
            stretch=doc["stretch"],
            box_area_sqrt_mean=doc["box_area_sqrt_mean"],
            box_area_sqrt_std=doc["box_area_sqrt_std"],
            counts={float(t): Counts(**c) for t, c in doc["counts"].items()},
            matched_pairs=doc["matched_pairs"],
            unmatched_predictions=doc["unmatched_predictions"],
            unmatched_ground_truths=doc["unmatched_ground_truths"],
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"report: {exc}") from exc


def load_report(path: str | Path) -> EvalReport:
    """Read back a report.json written by :func:`write_report`."""
    doc = _read_json(path, "report")
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a JSON object")
    return report_from_dict(doc)


def save_json(obj: Any, path: str | Path) -> None:
    """Write any JSON-ready object canonically (used for summaries)."""
    _write_canonical(obj, path)


def write_report(report: EvalReport, path: str | Path, fmt: str = "json") -> None:
    """Write an evaluation report as canonical JSON or a fixed-width table."""
    if fmt == "json":
        _write_canonical(report_to_dict(report), path)
    elif fmt == "table":
        Path(path).write_text(format_report_table(report), encoding="utf-8")
    else:
        raise ValueError(f"fmt must be 'json' or 'table', got {fmt!r}")


def format_report_table(report: EvalReport) -> str:
    """Fixed-width text rendering with one row per metric family."""

    def num(v: float | None) -> str:
        return "-" if v is None else f"{v:.4f}"

    headline = min(report.map_at, key=lambda t: abs(t - 0.5)) if report.map_at else None
    rows = [
        ("Model", report.label),
        ("mAP@0.5", num(report.map_at.get(headline)) if headline is not None else "-"),
        ("mAP@50:95", num(report.map_50_95)),
        ("C-mAP", num(report.c_map)),
        ("C-mAP@50@80:100", num(report.c_map_50_80_100)),
        ("Coverage", num(report.coverage)),
        ("Stretch", num(report.stretch)),
        ("sqrt(BoxArea) mean", num(report.box_area_sqrt_mean)),
        ("sqrt(BoxArea) std", num(report.box_area_sqrt_std)),
        ("Matched pairs", str(report.matched_pairs)),
        ("Unmatched predictions", str(report.unmatched_predictions)),
        ("Unmatched ground truths", str(report.unmatched_ground_truths)),
    ]
    if report.margins is not None:
        m = report.margins
        rows += [
            ("Margin left", num(m.left)),
            ("Margin top", num(m.top)),
            ("Margin right", num(m.right)),
            ("Margin bottom", num(m.bottom)),
            ("Margin total", num(m.total)),
        ]
    width = max(len(k) for k, _ in rows)
    lines = [f"{k:<{width}}  {v}" for k, v in rows]
    return "\n".join(lines) + "\n"


def canonical_json_bytes(obj: Any) -> bytes:
    """Canonical encoding: sorted keys, 2-space indent, trailing newline."""
    return (
        json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"
    ).encode("utf-8")


def _write_canonical(obj: Any, path: str | Path) -> None:
    Path(path).write_bytes(canonical_json_bytes(obj))
