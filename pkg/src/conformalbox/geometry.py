"""Axis-aligned boxes and the overlap measures used throughout the toolkit.

Boxes are corner-encoded ``(xmin, ymin, xmax, ymax)`` in pixel units.
Degenerate boxes (zero width or height) are representable; operations that
cannot tolerate them say so explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box with ``xmin <= xmax`` and ``ymin <= ymax``.

    Coordinates must be finite. Zero-extent sides are allowed; callers that
    need positive area must check it themselves.
    """

    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def __post_init__(self) -> None:
        for name in ("xmin", "ymin", "xmax", "ymax"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ValueError(f"BBox.{name} must be a number, got {type(v).__name__}")
            if not math.isfinite(v):
                raise ValueError(f"BBox.{name} must be finite, got {v!r}")
        if self.xmin > self.xmax:
            raise ValueError(f"inverted box: xmin={self.xmin} > xmax={self.xmax}")
        if self.ymin > self.ymax:
            raise ValueError(f"inverted box: ymin={self.ymin} > ymax={self.ymax}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.xmin, self.ymin, self.xmax, self.ymax)


@dataclass(frozen=True)
class Detection:
    """One predicted box with its objectness and class probabilities.

    ``objectness`` is the detector's belief that the box contains any object;
    ``class_probs`` distributes that belief over classes and must sum to one
    within 1e-6. The ranking confidence is ``objectness * max(class_probs)``.
    """

    image_id: str
    box: BBox
    objectness: float
    class_probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.image_id, str) or not self.image_id:
            raise ValueError("Detection.image_id must be a non-empty string")
        if not 0.0 <= self.objectness <= 1.0:
            raise ValueError(f"objectness must lie in [0, 1], got {self.objectness!r}")
        probs = tuple(self.class_probs)
        object.__setattr__(self, "class_probs", probs)
        if not probs:
            raise ValueError("class_probs must not be empty")
        for j, p in enumerate(probs):
            if not (isinstance(p, (int, float)) and math.isfinite(p)) or not 0.0 <= p <= 1.0:
                raise ValueError(f"class_probs[{j}] must lie in [0, 1], got {p!r}")
        if abs(math.fsum(probs) - 1.0) > 1e-6:
            raise ValueError(f"class_probs must sum to 1 within 1e-6, got {math.fsum(probs)!r}")

    @property
    def confidence(self) -> float:
        """Ranking confidence: objectness times the top class probability."""
        return self.objectness * max(self.class_probs)

    @property
    def class_id(self) -> int:
        """Index of the most probable class (lowest index wins ties)."""
        return self.class_probs.index(max(self.class_probs))


@dataclass(frozen=True)
class GroundTruthBox:
    """An annotated box. Ground truth must have positive area."""

    image_id: str
    box: BBox
    class_id: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.image_id, str) or not self.image_id:
            raise ValueError("GroundTruthBox.image_id must be a non-empty string")
        if not isinstance(self.class_id, int) or isinstance(self.class_id, bool) or self.class_id < 0:
            raise ValueError(f"class_id must be a nonnegative integer, got {self.class_id!r}")
        if area(self.box) == 0.0:
            raise ValueError(f"ground-truth box must have positive area, got {self.box.as_tuple()}")


def area(b: BBox) -> float:
    """Area of the box; zero for degenerate boxes."""
    return (b.xmax - b.xmin) * (b.ymax - b.ymin)


def intersection_area(a: BBox, b: BBox) -> float:
    """Area of the overlap rectangle, zero when the boxes are disjoint."""
    w = min(a.xmax, b.xmax) - max(a.xmin, b.xmin)
    h = min(a.ymax, b.ymax) - max(a.ymin, b.ymin)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union in [0, 1]; zero when the union has zero area."""
    inter = intersection_area(a, b)
    union = area(a) + area(b) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def ioa(pred: BBox, gt: BBox) -> float:
    """Intersection over the *ground-truth* area.

    Reaches 1.0 exactly when ``gt`` lies inside ``pred``. The ground-truth
    box must have positive area.
    """
    denom = area(gt)
    if denom <= 0.0:
        raise ValueError(f"ioa needs a ground-truth box with positive area, got {gt.as_tuple()}")
    return intersection_area(pred, gt) / denom


def contains(outer: BBox, inner: BBox) -> bool:
    """True iff ``inner`` lies inside ``outer``: four exact coordinate tests.

    This is the inclusion test used for coverage and conformal matching; it
    deliberately avoids the float ratio ``ioa == 1.0``.
    """
    return (
        inner.xmin >= outer.xmin
        and inner.ymin >= outer.ymin
        and inner.xmax <= outer.xmax
        and inner.ymax <= outer.ymax
    )


def filter_by_confidence(detections: Sequence[Detection], tau: float) -> list[Detection]:
    """Keep detections whose objectness is at least ``tau``, preserving order."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau!r}")
    return [d for d in detections if d.objectness >= tau]


def nms(detections: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Walks detections in descending confidence (ties keep input order) and
    keeps a box iff its IoU with every previously kept box is <= the
    threshold. Output stays in descending confidence order.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError(f"iou_threshold must lie in [0, 1], got {iou_threshold!r}")
    ranked = sorted(range(len(detections)), key=lambda i: -detections[i].confidence)
    kept: list[Detection] = []
    for i in ranked:
        cand = detections[i]
        if all(iou(cand.box, k.box) <= iou_threshold for k in kept):
            kept.append(cand)
    return kept
