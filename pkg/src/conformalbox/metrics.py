"""Detection metrics: exact PR curves, the AP family, and margin statistics.

Precision/recall points are stored as integer TP/FP/FN counts and exposed as
exact rationals, so golden-value tests can assert equality instead of
tolerances. Average precision interpolates those rationals and only converts
to float at the very end.
"""

from __future__ import annotations

import math
import statistics
import warnings
from bisect import bisect_left
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Mapping, Sequence

from .conformal import ConformalBox
from .geometry import BBox, Detection, GroundTruthBox, area, contains, ioa, iou
from .matching import DEFAULT_MIN_IOU, hungarian_match

MATCH_RULES = ("classic", "conformal")

# IoU grid behind mAP@50:95 and the IoA grid behind the conformal headline
# metric. Built from integer hundredths so each threshold is the canonical
# float a user would type.
IOU_GRID_50_95 = tuple(k / 100.0 for k in range(50, 100, 5))
IOA_GRID_80_100 = tuple(k / 100.0 for k in range(80, 101, 5))


@dataclass(frozen=True)
class PRPoint:
    """Cumulative counts after one ranked prediction."""

    tp: int
    fp: int
    fn: int
    threshold: float

    @property
    def precision(self) -> Fraction:
        return Fraction(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> Fraction:
        if self.tp + self.fn == 0:
            return Fraction(0)
        return Fraction(self.tp, self.tp + self.fn)


@dataclass(frozen=True)
class PRCurve:
    """Ranked precision/recall points for one class.

    ``thresholds`` (the confidence at each point) are non-increasing and
    recall is non-decreasing along the curve.
    """

    points: tuple[PRPoint, ...]
    n_gts: int


def rank_and_classify(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    iou_threshold: float,
    match_rule: str = "classic",
    *,
    ioa_threshold: float | None = None,
    confidence_floor: float = 0.0,
) -> PRCurve:
    """Rank predictions by confidence and classify each as TP or FP.

    Predictions (all images pooled, single class assumed) are visited in
    descending confidence, ties keeping input order. Each is greedily matched
    to the unused ground truth of its image with the highest IoU. The match
    counts as a true positive when IoU meets ``iou_threshold``; the
    ``conformal`` rule additionally requires the prediction to contain the
    ground truth (exact coordinate test), and ``ioa_threshold`` adds an
    intersection-over-ground-truth bar (1.0 delegates to the exact test).
    A true positive consumes its ground truth; false positives do not.
    """
    if match_rule not in MATCH_RULES:
        raise ValueError(f"match_rule must be one of {MATCH_RULES}, got {match_rule!r}")
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold!r}")
    if ioa_threshold is not None and not 0.0 <= ioa_threshold <= 1.0:
        raise ValueError(f"ioa_threshold must lie in [0, 1], got {ioa_threshold!r}")

    ranked: list[Detection] = []
    for img in sorted(preds_by_image):
        ranked.extend(d for d in preds_by_image[img] if d.confidence >= confidence_floor)
    ranked.sort(key=lambda d: -d.confidence)

    n_gts = sum(len(v) for v in gts_by_image.values())
    if n_gts == 0:
        warnings.warn("no ground-truth boxes; every prediction is a false positive", stacklevel=2)

    used: dict[str, list[bool]] = {img: [False] * len(v) for img, v in gts_by_image.items()}
    points: list[PRPoint] = []
    tp = fp = 0
    for det in ranked:
        gts = gts_by_image.get(det.image_id, ())
        flags = used.get(det.image_id, [])
        best_j = -1
        best_iou = 0.0
        for j, gt in enumerate(gts):
            if flags[j]:
                continue
            v = iou(det.box, gt.box)
            if v > best_iou:
                best_iou, best_j = v, j
        hit = best_j >= 0 and best_iou >= iou_threshold
        if hit and match_rule == "conformal":
            hit = contains(det.box, gts[best_j].box)
        if hit and ioa_threshold is not None:
            if ioa_threshold >= 1.0:
                hit = contains(det.box, gts[best_j].box)
            else:
                hit = ioa(det.box, gts[best_j].box) >= ioa_threshold
        if hit:
            tp += 1
            flags[best_j] = True
        else:
            fp += 1
        points.append(PRPoint(tp=tp, fp=fp, fn=n_gts - tp, threshold=det.confidence))
    return PRCurve(points=tuple(points), n_gts=n_gts)


def interpolate_precision(curve: PRCurve) -> Callable[[float | Fraction], Fraction]:
    """Monotone interpolated precision ``p(r) = max over recall >= r``.

    Returns a callable mapping a recall level to the interpolated precision
    as an exact rational; levels beyond the maximum achieved recall map to 0.
    Pass ``Fraction`` levels when exact grid comparisons matter.
    """
    recalls = [p.recall for p in curve.points]
    best: list[Fraction] = []
    running = Fraction(0)
    for p in reversed(curve.points):
        running = max(running, p.precision)
        best.append(running)
    best.reverse()

    def p_bar(r: float | Fraction) -> Fraction:
        level = r if isinstance(r, Fraction) else Fraction(r)
        i = bisect_left(recalls, level)
        if i == len(recalls):
            return Fraction(0)
        return best[i]

    return p_bar


def average_precision(curve: PRCurve, interp: str = "11pt") -> float:
    """Mean interpolated precision over a fixed recall grid.

    ``11pt`` averages over recalls {0.0, 0.1, ..., 1.0}; ``101pt`` over
    {0.00, 0.01, ..., 1.00}. Grid levels are exact rationals, so boundary
    recalls like 2/3 compare exactly.
    """
    if interp == "11pt":
        grid = [Fraction(k, 10) for k in range(11)]
    elif interp == "101pt":
        grid = [Fraction(k, 100) for k in range(101)]
    else:
        raise ValueError(f"interp must be '11pt' or '101pt', got {interp!r}")
    if not curve.points:
        return 0.0
    p_bar = interpolate_precision(curve)
    return float(sum(p_bar(r) for r in grid) / len(grid))


def class_curves(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    iou_threshold: float,
    match_rule: str = "classic",
    *,
    ioa_threshold: float | None = None,
    confidence_floor: float = 0.0,
) -> dict[int, PRCurve]:
    """One PR curve per ground-truth class.

    Classes are the distinct ground-truth class ids; predictions vote for
    their argmax class. Predictions of classes with no ground truth anywhere
    are ignored (standard detection-benchmark convention).
    """
    classes = sorted({g.class_id for v in gts_by_image.values() for g in v})
    out: dict[int, PRCurve] = {}
    for c in classes:
        preds_c = {
            img: [d for d in v if d.class_id == c] for img, v in preds_by_image.items()
        }
        gts_c = {img: [g for g in v if g.class_id == c] for img, v in gts_by_image.items()}
        out[c] = rank_and_classify(
            preds_c,
            gts_c,
            iou_threshold,
            match_rule,
            ioa_threshold=ioa_threshold,
            confidence_floor=confidence_floor,
        )
    return out


def map_at(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    iou_threshold: float,
    match_rule: str = "classic",
    *,
    ioa_threshold: float | None = None,
    interp: str = "11pt",
    confidence_floor: float = 0.0,
) -> float:
    """Mean over classes of average precision at one IoU threshold."""
    curves = class_curves(
        preds_by_image,
        gts_by_image,
        iou_threshold,
        match_rule,
        ioa_threshold=ioa_threshold,
        confidence_floor=confidence_floor,
    )
    if not curves:
        warnings.warn("no ground-truth classes; mAP defined as 0", stacklevel=2)
        return 0.0
    aps = [average_precision(c, interp) for c in curves.values()]
    return sum(aps) / len(aps)


def map_range(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    iou_thresholds: Sequence[float] = IOU_GRID_50_95,
    *,
    interp: str = "11pt",
    confidence_floor: float = 0.0,
) -> float:
    """mAP averaged over an IoU-threshold grid (default 0.50:0.05:0.95)."""
    if not iou_thresholds:
        raise ValueError("iou_thresholds must not be empty")
    values = [
        map_at(
            preds_by_image,
            gts_by_image,
            t,
            "classic",
            interp=interp,
            confidence_floor=confidence_floor,
        )
        for t in iou_thresholds
    ]
    return sum(values) / len(values)


def c_map(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    iou_threshold: float = 0.5,
    *,
    interp: str = "11pt",
    confidence_floor: float = 0.0,
) -> float:
    """mAP under the conformal rule: IoU bar plus exact containment.

    A prediction only counts as a true positive if it both overlaps its
    ground truth at the IoU threshold and fully contains it, so this can
    never exceed the classic mAP at the same threshold.
    """
    return map_at(
        preds_by_image,
        gts_by_image,
        iou_threshold,
        "conformal",
        interp=interp,
        confidence_floor=confidence_floor,
    )


def c_map_50_80_100(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    ioa_grid: Sequence[float] = IOA_GRID_80_100,
    *,
    iou_threshold: float = 0.5,
    interp: str = "11pt",
    confidence_floor: float = 0.0,
) -> float:
    """Containment-relaxed conformal mAP, averaged over an IoA grid.

    Each grid level s demands IoU >= ``iou_threshold`` and intersection over
    ground-truth area >= s; the 1.00 level uses the exact containment test.
    The result is the mean over the grid (default {0.80, ..., 1.00}).
    """
    if not ioa_grid:
        raise ValueError("ioa_grid must not be empty")
    values = [
        map_at(
            preds_by_image,
            gts_by_image,
            iou_threshold,
            "classic",
            ioa_threshold=s,
            interp=interp,
            confidence_floor=confidence_floor,
        )
        for s in ioa_grid
    ]
    return sum(values) / len(values)


@dataclass(frozen=True)
class MarginReport:
    """Mean absolute per-side displacement, in pixels."""

    left: float
    top: float
    right: float
    bottom: float
    total: float


def margin(conformal_boxes: Sequence[ConformalBox]) -> MarginReport:
    """Average absolute displacement of each side, plus the grand mean."""
    if not conformal_boxes:
        raise ValueError("margin needs at least one box")
    n = len(conformal_boxes)
    left = math.fsum(abs(cb.conformal.xmin - cb.original.xmin) for cb in conformal_boxes) / n
    top = math.fsum(abs(cb.conformal.ymin - cb.original.ymin) for cb in conformal_boxes) / n
    right = math.fsum(abs(cb.conformal.xmax - cb.original.xmax) for cb in conformal_boxes) / n
    bottom = math.fsum(abs(cb.conformal.ymax - cb.original.ymax) for cb in conformal_boxes) / n
    return MarginReport(left, top, right, bottom, (left + top + right + bottom) / 4.0)


def stretch(conformal_boxes: Sequence[ConformalBox]) -> float:
    """Mean linear growth factor ``sqrt(area(conformal) / area(original))``."""
    if not conformal_boxes:
        raise ValueError("stretch needs at least one box")
    ratios = []
    for cb in conformal_boxes:
        a = area(cb.original)
        if a == 0.0:
            raise ValueError(f"stretch undefined for zero-area original {cb.original.as_tuple()}")
        ratios.append(math.sqrt(area(cb.conformal) / a))
    return math.fsum(ratios) / len(ratios)


@dataclass(frozen=True)
class AreaStats:
    """Population mean and standard deviation of sqrt(box area)."""

    mean: float
    std: float


def box_area_stats(boxes: Sequence[BBox]) -> AreaStats:
    """Mean and population standard deviation of the square root of box area."""
    if not boxes:
        raise ValueError("box_area_stats needs at least one box")
    roots = [math.sqrt(area(b)) for b in boxes]
    return AreaStats(mean=statistics.fmean(roots), std=statistics.pstdev(roots))


@dataclass(frozen=True)
class Counts:
    """Final TP/FP/FN totals at one IoU threshold, summed over classes."""

    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class EvalReport:
    """Everything one evaluation run produces.

    ``coverage``, ``margins`` and ``stretch`` describe the conformal side and
    are ``None`` when the dataset is empty or nothing matched. For raw
    (never-conformalized) predictions the originals equal the boxes, so
    margins are zero and stretch is one.
    """

    label: str
    map_at: dict[float, float]
    map_50_95: float
    c_map: float
    c_map_50_80_100: float
    coverage: float | None
    margins: MarginReport | None
    stretch: float | None
    box_area_sqrt_mean: float | None
    box_area_sqrt_std: float | None
    counts: dict[float, Counts]
    matched_pairs: int
    unmatched_predictions: int
    unmatched_ground_truths: int


def evaluate(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    originals_by_image: Mapping[str, Sequence[BBox]] | None = None,
    *,
    iou_thresholds: Sequence[float] = IOU_GRID_50_95,
    headline_iou: float = 0.5,
    ioa_grid: Sequence[float] = IOA_GRID_80_100,
    min_iou: float = DEFAULT_MIN_IOU,
    interp: str = "11pt",
    confidence_floor: float = 0.0,
    threads: int | None = None,
    label: str = "run",
) -> EvalReport:
    """Assemble the full evaluation report for one set of predictions.

    ``originals_by_image`` supplies the pre-expansion box for each detection
    (index-aligned with ``preds_by_image``); omit it for raw predictions, in
    which case every box is its own original. Coverage is computed over
    minimum-cost matched pairs only (matched on the original boxes, which is
    what the detector actually produced); unmatched counts are reported
    separately.
    """
    if originals_by_image is None:
        originals_by_image = {
            img: [d.box for d in v] for img, v in preds_by_image.items()
        }
    for img, dets in preds_by_image.items():
        origs = originals_by_image.get(img)
        if origs is None or len(origs) != len(dets):
            raise ValueError(f"originals for image {img!r} do not align with its detections")

    cboxes: list[ConformalBox] = []
    for img in sorted(preds_by_image):
        for det, orig in zip(preds_by_image[img], originals_by_image[img]):
            cboxes.append(ConformalBox(original=orig, conformal=det.box))

    thresholds = list(iou_thresholds)
    if headline_iou not in thresholds:
        thresholds.append(headline_iou)
    grid: dict[float, float] = {}
    counts: dict[float, Counts] = {}
    for t in thresholds:
        curves = class_curves(
            preds_by_image, gts_by_image, t, "classic", confidence_floor=confidence_floor
        )
        aps = [average_precision(c, interp) for c in curves.values()]
        grid[t] = sum(aps) / len(aps) if aps else 0.0
        tp = fp = fn = 0
        for curve in curves.values():
            if curve.points:
                last = curve.points[-1]
                tp += last.tp
                fp += last.fp
                fn += last.fn
            else:
                fn += curve.n_gts
        counts[t] = Counts(tp=tp, fp=fp, fn=fn)

    map_50_95 = (
        sum(grid[t] for t in iou_thresholds) / len(iou_thresholds) if iou_thresholds else 0.0
    )

    # coverage over matched pairs; matching runs on the original boxes
    cov_hits = 0
    cov_total = 0
    n_unmatched_preds = 0
    n_unmatched_gts = 0
    image_ids = sorted(set(preds_by_image) | set(gts_by_image))

    def solve(img: str) -> tuple[int, int, int, int]:
        dets = preds_by_image.get(img, ())
        origs = originals_by_image.get(img, ())
        odets = [
            Detection(d.image_id, ob, d.objectness, d.class_probs)
            for d, ob in zip(dets, origs)
        ]
        conformal_of = {id(od): d.box for od, d in zip(odets, dets)}
        res = hungarian_match(odets, gts_by_image.get(img, ()), min_iou)
        hits = sum(1 for p in res.pairs if contains(conformal_of[id(p.pred)], p.gt.box))
        return hits, len(res.pairs), len(res.unmatched_preds), len(res.unmatched_gts)

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            solved = list(pool.map(solve, image_ids))
    else:
        solved = [solve(img) for img in image_ids]
    for hits, total, n_up, n_ug in solved:
        cov_hits += hits
        cov_total += total
        n_unmatched_preds += n_up
        n_unmatched_gts += n_ug
    cov = cov_hits / cov_total if cov_total else None

    return EvalReport(
        label=label,
        map_at=grid,
        map_50_95=map_50_95,
        c_map=c_map(
            preds_by_image,
            gts_by_image,
            headline_iou,
            interp=interp,
            confidence_floor=confidence_floor,
        ),
        c_map_50_80_100=c_map_50_80_100(
            preds_by_image,
            gts_by_image,
            ioa_grid,
            iou_threshold=headline_iou,
            interp=interp,
            confidence_floor=confidence_floor,
        ),
        coverage=cov,
        margins=margin(cboxes) if cboxes else None,
        stretch=stretch(cboxes) if cboxes else None,
        box_area_sqrt_mean=box_area_stats([cb.conformal for cb in cboxes]).mean if cboxes else None,
        box_area_sqrt_std=box_area_stats([cb.conformal for cb in cboxes]).std if cboxes else None,
        counts=counts,
        matched_pairs=cov_total,
        unmatched_predictions=n_unmatched_preds,
        unmatched_ground_truths=n_unmatched_gts,
    )
