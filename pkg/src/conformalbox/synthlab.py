"""Synthetic detector laboratory.

Generates scenes from a known perturbation law (one ground-truth box per
image, a noisy prediction unless the detector "misses", optional spurious
boxes) so the coverage guarantee can be checked against truth. Everything is
deterministic in the seed; trials of an experiment draw their sub-seeds from
a spawned seed sequence, so results do not depend on execution schedule.
"""

from __future__ import annotations

import math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Mapping

import numpy as np

from .conformal import (
    InsufficientCalibrationError,
    calibrate,
    conformalize,
    coverage,
)
from .geometry import BBox, Detection, GroundTruthBox
from .matching import DEFAULT_MIN_IOU, match_dataset

NOISE_FAMILIES = ("gaussian", "student_t")


def _tuple4(value: Any, name: str) -> tuple[float, float, float, float]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = (value,) * 4
    try:
        out = tuple(float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"{name} must be a number or 4 numbers, got {value!r}") from exc
    if len(out) != 4 or not all(math.isfinite(v) for v in out):
        raise ValueError(f"{name} must be a number or 4 finite numbers, got {value!r}")
    return out


@dataclass(frozen=True)
class PerturbationLaw:
    """How the synthetic detector corrupts ground truth.

    ``noise_scale`` and ``bias`` act per side in the order (left, top, right,
    bottom); scalars broadcast to all four. ``miss_rate`` drops the real
    prediction, ``spurious_rate`` is the Poisson mean of extra boxes per
    image. Real predictions get a confidence that decays logistically in the
    total absolute perturbation, so bad boxes rank low, as with a real
    detector; spurious boxes draw a low confidence uniformly.
    """

    noise_scale: tuple[float, float, float, float] = (3.0, 3.0, 3.0, 3.0)
    bias: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    miss_rate: float = 0.0
    spurious_rate: float = 0.0
    noise_family: str = "gaussian"
    student_df: float = 4.0
    image_size: tuple[float, float] = (640.0, 640.0)
    width_range: tuple[float, float] = (60.0, 200.0)
    height_range: tuple[float, float] = (40.0, 160.0)
    conf_midpoint: float = 12.0
    conf_scale: float = 4.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "noise_scale", _tuple4(self.noise_scale, "noise_scale"))
        object.__setattr__(self, "bias", _tuple4(self.bias, "bias"))
        if any(s < 0 for s in self.noise_scale):
            raise ValueError(f"noise_scale components must be >= 0, got {self.noise_scale!r}")
        if not 0.0 <= self.miss_rate <= 1.0:
            raise ValueError(f"miss_rate must lie in [0, 1], got {self.miss_rate!r}")
        if not math.isfinite(self.spurious_rate) or self.spurious_rate < 0.0:
            raise ValueError(f"spurious_rate must be >= 0, got {self.spurious_rate!r}")
        if self.noise_family not in NOISE_FAMILIES:
            raise ValueError(f"noise_family must be one of {NOISE_FAMILIES}, got {self.noise_family!r}")
        if self.student_df <= 0:
            raise ValueError(f"student_df must be positive, got {self.student_df!r}")
        W, H = self.image_size
        if W <= 0 or H <= 0:
            raise ValueError(f"image_size must be positive, got {self.image_size!r}")
        for rng_name, hi in (("width_range", W), ("height_range", H)):
            lo, up = getattr(self, rng_name)
            if not 0 < lo <= up <= hi:
                raise ValueError(
                    f"{rng_name} must satisfy 0 < low <= high <= image side, got {getattr(self, rng_name)!r}"
                )
        if self.conf_scale <= 0:
            raise ValueError(f"conf_scale must be positive, got {self.conf_scale!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "noise_scale": list(self.noise_scale),
            "bias": list(self.bias),
            "miss_rate": self.miss_rate,
            "spurious_rate": self.spurious_rate,
            "noise_family": self.noise_family,
            "student_df": self.student_df,
            "image_size": list(self.image_size),
            "width_range": list(self.width_range),
            "height_range": list(self.height_range),
            "conf_midpoint": self.conf_midpoint,
            "conf_scale": self.conf_scale,
        }

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "PerturbationLaw":
        known = {
            "noise_scale", "bias", "miss_rate", "spurious_rate", "noise_family",
            "student_df", "image_size", "width_range", "height_range",
            "conf_midpoint", "conf_scale",
        }
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"law: unknown keys {sorted(unknown)}")
        kwargs: dict[str, Any] = dict(doc)
        for key in ("image_size", "width_range", "height_range"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)


@dataclass(frozen=True)
class Scene:
    """One synthetic dataset: per-image predictions and ground truth."""

    preds_by_image: dict[str, list[Detection]]
    gts_by_image: dict[str, list[GroundTruthBox]]


def generate_scene(
    seed: int | np.random.SeedSequence | np.random.Generator,
    law: PerturbationLaw,
    n_images: int,
) -> Scene:
    """Draw ``n_images`` one-object images under ``law``, deterministically.

    Each image holds exactly one ground-truth box. Unless the detector
    misses, the prediction perturbs each side independently by
    ``bias + noise``; a side that inverts collapses to its midline (the
    detector produced a degenerate box, which is its problem, not ours).
    """
    if n_images < 0:
        raise ValueError(f"n_images must be >= 0, got {n_images}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    W, H = law.image_size
    n = n_images

    widths = rng.uniform(*law.width_range, size=n)
    heights = rng.uniform(*law.height_range, size=n)
    xs = rng.uniform(0.0, W - widths)
    ys = rng.uniform(0.0, H - heights)
    missed = rng.random(size=n) < law.miss_rate
    if law.noise_family == "gaussian":
        noise = rng.normal(0.0, 1.0, size=(n, 4))
    else:
        noise = rng.standard_t(law.student_df, size=(n, 4))
    noise = noise * np.asarray(law.noise_scale) + np.asarray(law.bias)
    spur_counts = rng.poisson(law.spurious_rate, size=n)
    n_spur = int(spur_counts.sum())
    sw = rng.uniform(*law.width_range, size=n_spur)
    sh = rng.uniform(*law.height_range, size=n_spur)
    sx = rng.uniform(0.0, W - sw)
    sy = rng.uniform(0.0, H - sh)
    s_conf = rng.uniform(0.05, 0.5, size=n_spur)

    preds: dict[str, list[Detection]] = {}
    gts: dict[str, list[GroundTruthBox]] = {}
    spur_at = 0
    for i in range(n):
        img = f"synth-{i:06d}"
        gx0, gy0 = float(xs[i]), float(ys[i])
        gx1, gy1 = gx0 + float(widths[i]), gy0 + float(heights[i])
        gts[img] = [GroundTruthBox(image_id=img, box=BBox(gx0, gy0, gx1, gy1))]
        dets: list[Detection] = []
        if not missed[i]:
            px0 = gx0 + float(noise[i, 0])
            py0 = gy0 + float(noise[i, 1])
            px1 = gx1 + float(noise[i, 2])
            py1 = gy1 + float(noise[i, 3])
            if px0 > px1:
                px0 = px1 = (px0 + px1) / 2.0
            if py0 > py1:
                py0 = py1 = (py0 + py1) / 2.0
            total = abs(px0 - gx0) + abs(py0 - gy0) + abs(px1 - gx1) + abs(py1 - gy1)
            conf = 1.0 / (1.0 + math.exp(min((total - law.conf_midpoint) / law.conf_scale, 700.0)))
            dets.append(Detection(image_id=img, box=BBox(px0, py0, px1, py1),
                                  objectness=conf, class_probs=(1.0,)))
        for _ in range(int(spur_counts[i])):
            bx0, by0 = float(sx[spur_at]), float(sy[spur_at])
            box = BBox(bx0, by0, bx0 + float(sw[spur_at]), by0 + float(sh[spur_at]))
            dets.append(Detection(image_id=img, box=box,
                                  objectness=float(s_conf[spur_at]), class_probs=(1.0,)))
            spur_at += 1
        preds[img] = dets
    return Scene(preds_by_image=preds, gts_by_image=gts)


@dataclass(frozen=True)
class ExperimentSummary:
    """Per-trial coverages plus the configuration that produced them."""

    alpha: float
    penalty: str
    n_calib: int
    n_test: int
    n_trials: int
    seed: int
    min_iou: float
    law: PerturbationLaw
    coverages: tuple[float, ...]
    mean_pairs_calib: float
    mean_pairs_test: float

    @property
    def mean(self) -> float:
        return statistics.fmean(self.coverages)

    @property
    def min(self) -> float:
        return min(self.coverages)

    @property
    def max(self) -> float:
        return max(self.coverages)

    def to_dict(self) -> dict[str, Any]:
        return {
            "alpha": self.alpha,
            "penalty": self.penalty,
            "n_calib": self.n_calib,
            "n_test": self.n_test,
            "n_trials": self.n_trials,
            "seed": self.seed,
            "min_iou": self.min_iou,
            "law": self.law.to_dict(),
            "coverage": {
                "per_trial": list(self.coverages),
                "mean": self.mean,
                "min": self.min,
                "max": self.max,
            },
            "mean_pairs_calib": self.mean_pairs_calib,
            "mean_pairs_test": self.mean_pairs_test,
        }


def coverage_experiment(
    law: PerturbationLaw,
    alpha: float,
    penalty: str = "additive",
    n_calib: int = 1000,
    n_test: int = 1000,
    n_trials: int = 100,
    seed: int = 0,
    *,
    min_iou: float = DEFAULT_MIN_IOU,
    clamp_nonnegative: bool = False,
    threads: int | None = None,
) -> ExperimentSummary:
    """Monte-Carlo check of the coverage guarantee.

    Each trial draws a fresh calibration scene and test scene from ``law``,
    calibrates at ``alpha``, conformalizes the matched test predictions and
    records the fraction of matched test pairs whose ground truth is
    contained. Infeasible (alpha, n_calib) combinations fail before any
    trial runs. The per-trial results are independent of ``threads``.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    beta = Fraction(alpha / 4.0)
    n_min = math.ceil((1 - beta) / beta)
    expected_pairs = int(n_calib * (1.0 - law.miss_rate))
    if expected_pairs < n_min:
        raise InsufficientCalibrationError(
            f"about {expected_pairs} calibration pairs expected but at least {n_min} "
            f"needed at alpha={alpha}; increase n_calib or alpha"
        )

    children = np.random.SeedSequence(seed).spawn(n_trials)

    def run_trial(t: int) -> tuple[float, int, int]:
        calib_ss, test_ss = children[t].spawn(2)
        calib = generate_scene(calib_ss, law, n_calib)
        test = generate_scene(test_ss, law, n_test)
        calib_pairs = match_dataset(calib.preds_by_image, calib.gts_by_image, min_iou).pairs
        model = calibrate(calib_pairs, alpha, penalty, clamp_nonnegative=clamp_nonnegative)
        test_pairs = match_dataset(test.preds_by_image, test.gts_by_image, min_iou).pairs
        if not test_pairs:
            raise ValueError(f"trial {t}: no matched test pairs to measure coverage on")
        cboxes = [conformalize(p.pred.box, model) for p in test_pairs]
        cov = coverage(cboxes, [p.gt for p in test_pairs])
        return cov, len(calib_pairs), len(test_pairs)

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_trial, range(n_trials)))
    else:
        results = [run_trial(t) for t in range(n_trials)]

    return ExperimentSummary(
        alpha=alpha,
        penalty=penalty,
        n_calib=n_calib,
        n_test=n_test,
        n_trials=n_trials,
        seed=seed,
        min_iou=min_iou,
        law=law,
        coverages=tuple(r[0] for r in results),
        mean_pairs_calib=statistics.fmean(r[1] for r in results),
        mean_pairs_test=statistics.fmean(r[2] for r in results),
    )
