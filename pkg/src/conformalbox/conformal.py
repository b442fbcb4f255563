"""Split-conformal calibration of bounding-box margins.

The per-side nonconformity score measures how far a predicted box falls
short of its matched ground truth on each of the four sides (positive means
under-coverage). Calibration takes the finite-sample corrected quantile of
each side's scores at level ``alpha / 4`` (a Bonferroni split, so the four
per-side guarantees combine into a joint one), and applying the resulting
margins to a fresh prediction yields a box that contains the true box with
probability at least ``1 - alpha`` under exchangeability.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .geometry import BBox, GroundTruthBox, contains
from .matching import MatchedPair

PENALTIES = ("additive", "multiplicative")


class InsufficientCalibrationError(ValueError):
    """Raised when the corrected quantile rank exceeds the sample size."""


class DegenerateBoxError(ValueError):
    """Raised when a zero-width or zero-height box meets a multiplicative model."""


@dataclass(frozen=True)
class ScoreVector:
    """Per-side nonconformity scores ``(left, top, right, bottom)``.

    Positive components mean the prediction under-covers the ground truth on
    that side; negative components mean it already overshoots.
    """

    left: float
    top: float
    right: float
    bottom: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.left, self.top, self.right, self.bottom)


def additive_score(pair: MatchedPair) -> ScoreVector:
    """Signed pixel gaps between prediction and ground truth, per side."""
    p, g = pair.pred.box, pair.gt.box
    return ScoreVector(
        left=p.xmin - g.xmin,
        top=p.ymin - g.ymin,
        right=g.xmax - p.xmax,
        bottom=g.ymax - p.ymax,
    )


def multiplicative_score(pair: MatchedPair) -> ScoreVector:
    """Additive scores rescaled by the predicted box's width and height.

    Horizontal gaps are divided by the predicted width, vertical gaps by the
    predicted height, so the learned margins scale with box size. The
    predicted box must have positive width and height.
    """
    p = pair.pred.box
    if p.width == 0.0 or p.height == 0.0:
        raise DegenerateBoxError(
            f"multiplicative score undefined for degenerate prediction {p.as_tuple()} "
            f"in image {pair.pred.image_id!r}"
        )
    a = additive_score(pair)
    return ScoreVector(
        left=a.left / p.width,
        top=a.top / p.height,
        right=a.right / p.width,
        bottom=a.bottom / p.height,
    )


def corrected_quantile(samples: Sequence[float], beta: float) -> float:
    """Finite-sample corrected empirical quantile at miscoverage ``beta``.

    Returns the ``k``-th smallest sample where ``k = ceil((1 - beta) * (n + 1))``.
    The rank is computed in exact rational arithmetic on the float arguments
    so that boundary cases (for example ``beta = 0.1, n = 39``) resolve the
    way the formula says rather than the way float rounding drifts.

    Raises :class:`InsufficientCalibrationError` when ``k > n``, i.e. when
    fewer than ``(1 - beta) / beta`` samples are available.
    """
    n = len(samples)
    if n == 0:
        raise InsufficientCalibrationError("corrected_quantile needs at least one sample")
    if not 0.0 < beta < 1.0:
        raise ValueError(f"beta must lie in (0, 1), got {beta!r}")
    frac_beta = Fraction(beta)
    k = math.ceil((1 - frac_beta) * (n + 1))
    if k > n:
        n_min = math.ceil((1 - frac_beta) / frac_beta)
        raise InsufficientCalibrationError(
            f"rank {k} exceeds sample size {n}; "
            f"need at least {n_min} samples at beta={beta}"
        )
    return sorted(samples)[k - 1]


@dataclass(frozen=True)
class CalibrationModel:
    """Frozen result of calibration: four margins and their provenance.

    ``q`` holds the corrected quantiles ``(left, top, right, bottom)`` in the
    units of the chosen penalty: pixels for additive, dimensionless fractions
    of predicted width/height for multiplicative.
    """

    penalty: str
    alpha: float
    q: tuple[float, float, float, float]
    n_calibration: int

    def __post_init__(self) -> None:
        if self.penalty not in PENALTIES:
            raise ValueError(f"penalty must be one of {PENALTIES}, got {self.penalty!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha!r}")
        q = tuple(float(v) for v in self.q)
        if len(q) != 4 or not all(math.isfinite(v) for v in q):
            raise ValueError(f"q must be four finite numbers, got {self.q!r}")
        object.__setattr__(self, "q", q)
        if not isinstance(self.n_calibration, int) or self.n_calibration < 1:
            raise ValueError(f"n_calibration must be a positive integer, got {self.n_calibration!r}")


def calibrate(
    pairs: Sequence[MatchedPair],
    alpha: float,
    penalty: str = "additive",
    clamp_nonnegative: bool = False,
) -> CalibrationModel:
    """Learn per-side margins from matched calibration pairs.

    Each side's margin is the corrected quantile of that side's scores at
    level ``alpha / 4``; the Bonferroni split makes the four-sided coverage
    guarantee at least ``1 - alpha``. Margins may come out negative (the
    detector systematically overshoots that side); they are kept unless
    ``clamp_nonnegative`` floors them at zero.
    """
    if not pairs:
        raise InsufficientCalibrationError("calibrate needs at least one matched pair")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if penalty not in PENALTIES:
        raise ValueError(f"penalty must be one of {PENALTIES}, got {penalty!r}")
    score = additive_score if penalty == "additive" else multiplicative_score
    vectors = [score(p).as_tuple() for p in pairs]
    beta = alpha / 4.0
    q = tuple(corrected_quantile([v[j] for v in vectors], beta) for j in range(4))
    if clamp_nonnegative:
        q = tuple(max(0.0, v) for v in q)
    return CalibrationModel(penalty=penalty, alpha=alpha, q=q, n_calibration=len(pairs))


@dataclass(frozen=True)
class ConformalBox:
    """A predicted box together with its margin-expanded version.

    ``collapsed`` marks boxes where a negative margin inverted a side and the
    result was collapsed to the degenerate midline.
    """

    original: BBox
    conformal: BBox
    collapsed: bool = False


def conformalize(
    box: BBox,
    model: CalibrationModel,
    clip_to: tuple[float, float] | None = None,
) -> ConformalBox:
    """Expand (or shrink) a predicted box by the calibrated margins.

    Additive models move each side by its margin in pixels; multiplicative
    models move it by ``margin * width`` or ``margin * height`` of the input
    box. If shrinkage inverts an axis, that axis collapses to its midline and
    the result is flagged. ``clip_to = (width, height)`` optionally clamps the
    result to the image; by default no clipping happens.
    """
    ql, qt, qr, qb = model.q
    if model.penalty == "multiplicative":
        if box.width == 0.0 or box.height == 0.0:
            raise DegenerateBoxError(
                f"multiplicative model cannot expand degenerate box {box.as_tuple()}"
            )
        ql, qr = ql * box.width, qr * box.width
        qt, qb = qt * box.height, qb * box.height
    xmin, xmax = box.xmin - ql, box.xmax + qr
    ymin, ymax = box.ymin - qt, box.ymax + qb
    collapsed = False
    if xmin > xmax:
        xmin = xmax = (xmin + xmax) / 2.0
        collapsed = True
    if ymin > ymax:
        ymin = ymax = (ymin + ymax) / 2.0
        collapsed = True
    if collapsed:
        warnings.warn(
            "negative margins inverted a box side; collapsed to midline",
            RuntimeWarning,
            stacklevel=2,
        )
    if clip_to is not None:
        w, h = clip_to
        xmin, xmax = min(max(xmin, 0.0), w), min(max(xmax, 0.0), w)
        ymin, ymax = min(max(ymin, 0.0), h), min(max(ymax, 0.0), h)
    return ConformalBox(original=box, conformal=BBox(xmin, ymin, xmax, ymax), collapsed=collapsed)


def coverage(conformal_boxes: Sequence[ConformalBox], paired_gts: Sequence[GroundTruthBox]) -> float:
    """Fraction of ground-truth boxes contained in their conformal box.

    The two sequences are index-aligned: ``paired_gts[i]`` is the ground
    truth matched to ``conformal_boxes[i]``. Containment is the exact
    four-inequality test, so the value is a fraction of an integer count.
    """
    if len(conformal_boxes) != len(paired_gts):
        raise ValueError(
            f"aligned sequences required, got {len(conformal_boxes)} boxes "
            f"and {len(paired_gts)} ground truths"
        )
    if not conformal_boxes:
        raise ValueError("coverage needs at least one pair")
    hits = sum(1 for cb, gt in zip(conformal_boxes, paired_gts) if contains(cb.conformal, gt.box))
    return hits / len(conformal_boxes)
