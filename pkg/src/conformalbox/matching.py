"""Prediction/ground-truth pairing via minimum-cost assignment.

Calibration needs an unambiguous one-to-one pairing, so matching solves the
assignment problem on cost ``1 - IoU`` per image (rectangular instances are
handled natively by the solver, which is equivalent to padding the matrix to
square with cost 1.0 and discarding padded assignments). Assigned pairs whose
IoU falls below a floor are demoted to unmatched rather than calibrated on.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BBox, Detection, GroundTruthBox, iou

DEFAULT_MIN_IOU = 0.1


@dataclass(frozen=True)
class MatchedPair:
    """One prediction paired with one ground-truth box from the same image."""

    pred: Detection
    gt: GroundTruthBox
    iou: float

    def __post_init__(self) -> None:
        if self.pred.image_id != self.gt.image_id:
            raise ValueError(
                f"pair spans images {self.pred.image_id!r} and {self.gt.image_id!r}"
            )


@dataclass(frozen=True)
class MatchResult:
    """Assignment outcome for a single image."""

    pairs: tuple[MatchedPair, ...]
    unmatched_preds: tuple[Detection, ...]
    unmatched_gts: tuple[GroundTruthBox, ...]


@dataclass(frozen=True)
class DatasetMatch:
    """Per-image matches concatenated in sorted image-id order."""

    pairs: tuple[MatchedPair, ...]
    n_unmatched_preds: int
    n_unmatched_gts: int


def build_cost_matrix(preds: Sequence[Detection], gts: Sequence[GroundTruthBox]) -> np.ndarray:
    """Assignment costs ``1 - IoU``, shape (#preds, #gts).

    All boxes must come from the same image.
    """
    _check_single_image(preds, gts)
    return 1.0 - _iou_matrix([d.box for d in preds], [g.box for g in gts])


def hungarian_match(
    preds: Sequence[Detection],
    gts: Sequence[GroundTruthBox],
    min_iou: float = DEFAULT_MIN_IOU,
) -> MatchResult:
    """Minimum-cost one-to-one pairing for one image.

    Pairs at most ``min(#preds, #gts)`` boxes; assignments with IoU below
    ``min_iou`` are demoted to unmatched so that barely-overlapping pairs
    never reach calibration. Deterministic for fixed inputs.
    """
    if not 0.0 <= min_iou <= 1.0:
        raise ValueError(f"min_iou must lie in [0, 1], got {min_iou!r}")
    _check_single_image(preds, gts)
    if not preds or not gts:
        return MatchResult((), tuple(preds), tuple(gts))

    ious = _iou_matrix([d.box for d in preds], [g.box for g in gts])
    n, m = ious.shape
    if n == 1:
        # single prediction: the optimal assignment is its best ground truth
        rows, cols = np.array([0]), np.array([int(np.argmax(ious[0]))])
    elif m == 1:
        rows, cols = np.array([int(np.argmax(ious[:, 0]))]), np.array([0])
    else:
        rows, cols = linear_sum_assignment(1.0 - ious)

    pairs = []
    used_preds: set[int] = set()
    used_gts: set[int] = set()
    for i, j in zip(rows.tolist(), cols.tolist()):
        pair_iou = float(ious[i, j])
        if pair_iou < min_iou:
            continue
        pairs.append(MatchedPair(preds[i], gts[j], pair_iou))
        used_preds.add(i)
        used_gts.add(j)
    return MatchResult(
        tuple(pairs),
        tuple(d for i, d in enumerate(preds) if i not in used_preds),
        tuple(g for j, g in enumerate(gts) if j not in used_gts),
    )


def match_dataset(
    preds_by_image: Mapping[str, Sequence[Detection]],
    gts_by_image: Mapping[str, Sequence[GroundTruthBox]],
    min_iou: float = DEFAULT_MIN_IOU,
    threads: int | None = None,
) -> DatasetMatch:
    """Match every image independently and concatenate in sorted-id order.

    The result is independent of ``threads``; workers only parallelize the
    per-image solves and the merge is keyed by image id.
    """
    image_ids = sorted(set(preds_by_image) | set(gts_by_image))

    def solve(img: str) -> MatchResult:
        return hungarian_match(
            preds_by_image.get(img, ()), gts_by_image.get(img, ()), min_iou
        )

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(solve, image_ids))
    else:
        results = [solve(img) for img in image_ids]

    pairs: list[MatchedPair] = []
    n_up = 0
    n_ug = 0
    for res in results:
        pairs.extend(res.pairs)
        n_up += len(res.unmatched_preds)
        n_ug += len(res.unmatched_gts)
    return DatasetMatch(tuple(pairs), n_up, n_ug)


def _iou_matrix(pred_boxes: Sequence[BBox], gt_boxes: Sequence[BBox]) -> np.ndarray:
    out = np.empty((len(pred_boxes), len(gt_boxes)), dtype=float)
    for i, pb in enumerate(pred_boxes):
        for j, gb in enumerate(gt_boxes):
            out[i, j] = iou(pb, gb)
    return out


def _check_single_image(preds: Sequence[Detection], gts: Sequence[GroundTruthBox]) -> None:
    ids = {d.image_id for d in preds} | {g.image_id for g in gts}
    if len(ids) > 1:
        raise ValueError(f"matching works on one image at a time, got ids {sorted(ids)}")
