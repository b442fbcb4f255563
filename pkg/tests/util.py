"""Shared builders and independent oracles for the test suite.

The oracles here deliberately avoid the library's own code paths: IoU by
counting grid cells, assignment by enumerating permutations, quantiles by
scanning for the smallest value with enough mass. They exist so the fast
implementations have something slow and obviously-correct to answer to.
"""

from __future__ import annotations

import math
from fractions import Fraction
from itertools import permutations

import numpy as np

from conformalbox import (
    BBox,
    CalibrationModel,
    Detection,
    GroundTruthBox,
    additive_score,
    corrected_quantile,
)


def make_det(
    image_id: str,
    box: tuple[float, float, float, float],
    confidence: float,
    class_probs: tuple[float, ...] = (1.0,),
) -> Detection:
    return Detection(
        image_id=image_id,
        box=BBox(*box),
        objectness=confidence,
        class_probs=class_probs,
    )


def make_gt(
    image_id: str, box: tuple[float, float, float, float], class_id: int = 0
) -> GroundTruthBox:
    return GroundTruthBox(image_id=image_id, box=BBox(*box), class_id=class_id)


def rasterized_iou(a: BBox, b: BBox, cells: int = 400) -> float:
    """IoU by counting grid-cell centers over the joint bounding region."""
    x0 = min(a.xmin, b.xmin)
    x1 = max(a.xmax, b.xmax)
    y0 = min(a.ymin, b.ymin)
    y1 = max(a.ymax, b.ymax)
    if x1 == x0 or y1 == y0:
        return 0.0
    xs = x0 + (np.arange(cells) + 0.5) * (x1 - x0) / cells
    ys = y0 + (np.arange(cells) + 0.5) * (y1 - y0) / cells
    gx, gy = np.meshgrid(xs, ys)

    def inside(box: BBox) -> np.ndarray:
        return (gx >= box.xmin) & (gx <= box.xmax) & (gy >= box.ymin) & (gy <= box.ymax)

    in_a = inside(a)
    in_b = inside(b)
    union = np.count_nonzero(in_a | in_b)
    if union == 0:
        return 0.0
    return np.count_nonzero(in_a & in_b) / union


def brute_force_min_cost(cost: np.ndarray) -> float:
    """Minimum total assignment cost by enumerating injective mappings."""
    n, m = cost.shape
    if n > m:
        return brute_force_min_cost(cost.T)
    best = math.inf
    for perm in permutations(range(m), n):
        total = math.fsum(cost[i, perm[i]] for i in range(n))
        if total < best:
            best = total
    return best


def naive_quantile(samples: list[float], beta: float) -> float | None:
    """Smallest sample s with #{x <= s} >= ceil((1-beta)(n+1)); None if infeasible."""
    n = len(samples)
    k = math.ceil((1 - Fraction(beta)) * (n + 1))
    if k > n:
        return None
    for s in sorted(samples):
        if sum(1 for x in samples if x <= s) >= k:
            return s
    raise AssertionError("unreachable")


def max_margin_model(pairs, alpha: float) -> CalibrationModel:
    """Single-sided variant: one quantile of the max residual at full alpha.

    A deliberately different way to reach valid coverage, used only to check
    that the per-side split is the more conservative of the two.
    """
    scores = [max(additive_score(p).as_tuple()) for p in pairs]
    q = corrected_quantile(scores, alpha)
    return CalibrationModel(penalty="additive", alpha=alpha, q=(q, q, q, q), n_calibration=len(pairs))


def staircase_dataset():
    """Five ranked predictions, three ground truths, match flags (1,1,0,1,0).

    Cumulative TP/FP reproduce precision (1, 1, 2/3, 3/4, 3/5) and recall
    (1/3, 2/3, 2/3, 1, 1) at IoU threshold 0.5.
    """
    gts = {
        "im0": [
            make_gt("im0", (0, 0, 10, 10)),
            make_gt("im0", (100, 0, 110, 10)),
            make_gt("im0", (200, 0, 210, 10)),
        ]
    }
    preds = {
        "im0": [
            make_det("im0", (0, 0, 10, 10), 0.9),       # exact hit on gt 1
            make_det("im0", (100, 0, 110, 10), 0.8),    # exact hit on gt 2
            make_det("im0", (206, 0, 216, 10), 0.7),    # IoU 0.25 with gt 3: miss
            make_det("im0", (200, 0, 210, 10), 0.6),    # exact hit on gt 3
            make_det("im0", (300, 0, 310, 10), 0.5),    # overlaps nothing
        ]
    }
    return preds, gts


def containment_dataset():
    """IoU flags (1,0,0,1,0) and containment flags (1,1,0,1,0) at IoU 0.5.

    Under the containment-aware rule the TP flags are the AND of the two:
    (1,0,0,1,0), giving precision (1, 1/2, 1/3, 1/2, 2/5) and recall
    (1/3, 1/3, 1/3, 2/3, 2/3).
    """
    gts = {
        "im0": [
            make_gt("im0", (0, 0, 10, 10)),
            make_gt("im0", (100, 0, 110, 10)),
            make_gt("im0", (200, 0, 210, 10)),
        ]
    }
    preds = {
        "im0": [
            make_det("im0", (-1, -1, 11, 11), 0.9),     # contains gt 1, IoU 100/144
            make_det("im0", (95, -5, 120, 15), 0.8),    # contains gt 2 but IoU only 0.2
            make_det("im0", (212, 0, 222, 10), 0.7),    # disjoint from gt 3
            make_det("im0", (199, -1, 211, 11), 0.6),   # contains gt 3, IoU 100/144
            make_det("im0", (300, 0, 310, 10), 0.5),    # overlaps nothing
        ]
    }
    return preds, gts
