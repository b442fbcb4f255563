"""Acceptance gate: nine go/no-go checks, one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines.
"""

from __future__ import annotations

import functools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conformalbox import (
    BBox,
    CalibrationModel,
    ConformalBox,
    InsufficientCalibrationError,
    MatchedPair,
    PerturbationLaw,
    average_precision,
    build_cost_matrix,
    c_map,
    c_map_50_80_100,
    calibrate,
    conformalize,
    corrected_quantile,
    coverage_experiment,
    generate_scene,
    hungarian_match,
    ioa,
    map_at,
    map_range,
    margin,
    rank_and_classify,
    save_detections,
    save_groundtruth,
    stretch,
)
from conformalbox.cli import main as cli_main
from util import (
    brute_force_min_cost,
    containment_dataset,
    make_det,
    make_gt,
    naive_quantile,
    staircase_dataset,
)


def criterion(n, name):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                out = fn(*args, **kwargs)
            except BaseException:
                print(f"\n[acceptance] criterion {n} ({name}): FAIL")
                raise
            print(f"\n[acceptance] criterion {n} ({name}): PASS")
            return out
        return wrapper
    return deco


def random_boxed_dataset(rng, n_images=3, max_objects=4):
    preds, gts = {}, {}
    for i in range(n_images):
        img = f"im{i}"
        gts[img] = []
        preds[img] = []
        for _ in range(int(rng.integers(1, max_objects + 1))):
            x, y = rng.uniform(0, 300, size=2)
            w, h = rng.uniform(10, 80, size=2)
            gts[img].append(make_gt(img, (x, y, x + w, y + h)))
            e = rng.normal(0, 8, size=4)
            p = (x + e[0], y + e[1], x + w + e[2], y + h + e[3])
            if p[0] < p[2] and p[1] < p[3]:
                preds[img].append(make_det(img, p, float(rng.uniform(0.05, 1.0))))
    return preds, gts


@criterion(1, "ranked precision/recall golden")
def test_criterion_1_staircase_golden():
    t0 = time.perf_counter()
    preds, gts = staircase_dataset()
    curve = rank_and_classify(preds, gts, iou_threshold=0.5)
    assert [p.precision for p in curve.points] == [
        Fraction(1), Fraction(1), Fraction(2, 3), Fraction(3, 4), Fraction(3, 5)]
    assert [p.recall for p in curve.points] == [
        Fraction(1, 3), Fraction(2, 3), Fraction(2, 3), Fraction(1), Fraction(1)]
    assert average_precision(curve, interp="11pt") == pytest.approx(10 / 11, abs=1e-12)
    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0, f"took {elapsed:.3f}s"


@criterion(2, "containment-rule golden")
def test_criterion_2_containment_golden():
    preds, gts = containment_dataset()
    curve = rank_and_classify(preds, gts, iou_threshold=0.5, match_rule="conformal")
    assert [p.tp for p in curve.points] == [1, 1, 1, 2, 2]
    assert [p.precision for p in curve.points] == [
        Fraction(1), Fraction(1, 2), Fraction(1, 3), Fraction(1, 2), Fraction(2, 5)]
    assert [p.recall for p in curve.points] == [
        Fraction(1, 3), Fraction(1, 3), Fraction(1, 3), Fraction(2, 3), Fraction(2, 3)]


@criterion(3, "coverage guarantee")
def test_criterion_3_coverage_guarantee():
    t0 = time.perf_counter()
    law = PerturbationLaw()  # gaussian per-side noise
    for penalty in ("additive", "multiplicative"):
        summary = coverage_experiment(
            law, alpha=0.3, penalty=penalty,
            n_calib=1000, n_test=1000, n_trials=100, seed=20260816)
        assert summary.mean >= 0.70, f"{penalty}: mean coverage {summary.mean:.4f}"
        n_good = sum(1 for c in summary.coverages if c >= 0.68)
        assert n_good >= 90, f"{penalty}: only {n_good}/100 trials reached 0.68"
    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0, f"took {elapsed:.1f}s"


@criterion(4, "quantile oracle")
def test_criterion_4_quantile_oracle():
    rng = np.random.default_rng(404)
    n_checked = 0
    for _ in range(1000):
        n = int(rng.integers(1, 51))
        samples = [float(v) for v in rng.integers(-20, 21, size=n)]
        beta = float(rng.uniform(0.01, 0.99))
        expected = naive_quantile(samples, beta)
        if expected is None:
            with pytest.raises(InsufficientCalibrationError):
                corrected_quantile(samples, beta)
        else:
            assert corrected_quantile(samples, beta) == expected
            n_checked += 1
    assert n_checked > 500


@criterion(5, "assignment oracle")
def test_criterion_5_assignment_oracle():
    rng = np.random.default_rng(505)
    for _ in range(500):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        preds, gts = [], []
        for _ in range(n):
            x, y = rng.uniform(0, 60, size=2)
            w, h = rng.uniform(5, 40, size=2)
            preds.append(make_det("im", (x, y, x + w, y + h), 0.5))
        for _ in range(m):
            x, y = rng.uniform(0, 60, size=2)
            w, h = rng.uniform(5, 40, size=2)
            gts.append(make_gt("im", (x, y, x + w, y + h)))
        cost = build_cost_matrix(preds, gts)
        res = hungarian_match(preds, gts, min_iou=0.0)
        total = math.fsum(1.0 - p.iou for p in res.pairs)
        assert total == brute_force_min_cost(cost)


@criterion(6, "margin identity")
def test_criterion_6_margin_identity():
    rng = np.random.default_rng(606)
    add_boxes, mul_boxes = [], []
    for _ in range(200):
        x, y = rng.uniform(-500, 500, size=2)
        # extents exceed any total shrink below, so no side can invert
        w, h = rng.uniform(70, 300, size=2)
        box = BBox(x, y, x + w, y + h)
        q = tuple(float(v) for v in rng.uniform(-30, 30, size=4))
        add = CalibrationModel("additive", 0.1, q, 10)
        rep = margin([conformalize(box, add)])
        for got, qi in zip((rep.left, rep.top, rep.right, rep.bottom), q):
            assert got == pytest.approx(abs(qi), abs=1e-9)
        qm = tuple(float(v) for v in rng.uniform(-0.4, 0.4, size=4))
        mul = CalibrationModel("multiplicative", 0.1, qm, 10)
        repm = margin([conformalize(box, mul)])
        expected = (abs(qm[0]) * w, abs(qm[1]) * h, abs(qm[2]) * w, abs(qm[3]) * h)
        for got, want in zip((repm.left, repm.top, repm.right, repm.bottom), expected):
            assert got == pytest.approx(want, abs=1e-9)
        add_boxes.append(box)
        mul_boxes.append(box)
    # batch means follow the same identity
    q = (4.0, 0.5, 7.25, 2.0)
    batch_model = CalibrationModel("additive", 0.1, q, 10)
    rep = margin([conformalize(b, batch_model) for b in add_boxes])
    assert rep.left == pytest.approx(4.0, abs=1e-9)
    assert rep.total == pytest.approx(sum(q) / 4, abs=1e-9)
    qm = 0.25
    batch_mul = CalibrationModel("multiplicative", 0.1, (qm,) * 4, 10)
    repm = margin([conformalize(b, batch_mul) for b in mul_boxes])
    mean_w = math.fsum(b.width for b in mul_boxes) / len(mul_boxes)
    mean_h = math.fsum(b.height for b in mul_boxes) / len(mul_boxes)
    assert repm.left == pytest.approx(qm * mean_w, abs=1e-9)
    assert repm.bottom == pytest.approx(qm * mean_h, abs=1e-9)


@criterion(7, "dominance and monotonicity")
def test_criterion_7_dominance_and_monotonicity():
    rng = np.random.default_rng(707)

    for _ in range(100):
        preds, gts = random_boxed_dataset(rng)
        assert c_map(preds, gts, 0.5) <= map_at(preds, gts, 0.5) + 1e-12

    for _ in range(1000):
        x, y = rng.uniform(-50, 50, size=2)
        w, h = rng.uniform(1, 60, size=2)
        gt = BBox(x, y, x + w, y + h)
        px, py = x + rng.uniform(-20, 20), y + rng.uniform(-20, 20)
        pred = BBox(px, py, px + rng.uniform(1, 60), py + rng.uniform(1, 60))
        d = rng.uniform(0, 15, size=4)
        grown = BBox(pred.xmin - d[0], pred.ymin - d[1], pred.xmax + d[2], pred.ymax + d[3])
        assert ioa(grown, gt) >= ioa(pred, gt)

    pairs = []
    for i in range(60):
        x, y = rng.uniform(0, 400, size=2)
        g = (x, y, x + rng.uniform(30, 100), y + rng.uniform(30, 100))
        e = rng.normal(0, 5, size=4)
        p = (g[0] + e[0], g[1] + e[1], g[2] + e[2], g[3] + e[3])
        pairs.append(MatchedPair(make_det(f"im{i}", p, 0.9), make_gt(f"im{i}", g), iou=0.5))
    prev = (-math.inf,) * 4
    for alpha in (0.9, 0.7, 0.5, 0.35, 0.3):
        q = calibrate(pairs, alpha).q
        assert all(a >= b for a, b in zip(q, prev)), f"q shrank at alpha={alpha}"
        prev = q

    preds, gts = random_boxed_dataset(rng, n_images=5)
    scaled = {
        img: [make_det(d.image_id, d.box.as_tuple(), d.objectness * 0.5,
                       class_probs=d.class_probs) for d in ds]
        for img, ds in preds.items()
    }
    assert map_at(preds, gts, 0.5) == map_at(scaled, gts, 0.5)
    assert map_range(preds, gts) == map_range(scaled, gts)
    assert c_map(preds, gts, 0.5) == c_map(scaled, gts, 0.5)
    assert c_map_50_80_100(preds, gts) == c_map_50_80_100(scaled, gts)


@criterion(8, "determinism")
def test_criterion_8_determinism(tmp_path):
    scene = generate_scene(808, PerturbationLaw(), 100)
    preds_p = tmp_path / "preds.json"
    gts_p = tmp_path / "gts.json"
    save_detections(scene.preds_by_image, preds_p)
    save_groundtruth(scene.gts_by_image, gts_p)

    reports = []
    for name, threads in (("r1.json", None), ("r2.json", None), ("r4.json", 4)):
        out = tmp_path / name
        argv = ["eval", "--preds", str(preds_p), "--gts", str(gts_p),
                "--label", "det", "-o", str(out)]
        if threads:
            argv += ["--threads", str(threads)]
        assert cli_main(argv) == 0
        reports.append(out.read_bytes())
    assert reports[0] == reports[1] == reports[2]

    config_p = tmp_path / "config.json"
    config_p.write_text(
        '{"alpha": 0.3, "n_calib": 120, "n_test": 80, "n_trials": 5, "seed": 11}\n',
        encoding="utf-8")
    summaries = []
    for name, threads in (("s1.json", None), ("s2.json", None), ("s4.json", 4)):
        out = tmp_path / name
        argv = ["simulate", "--config", str(config_p), "-o", str(out)]
        if threads:
            argv += ["--threads", str(threads)]
        assert cli_main(argv) == 0
        summaries.append(out.read_bytes())
    assert summaries[0] == summaries[1] == summaries[2]


@criterion(9, "stretch sanity")
def test_criterion_9_stretch_sanity():
    identity = CalibrationModel("additive", 0.1, (0, 0, 0, 0), 10)
    cbs = [conformalize(BBox(0, 0, w, 11), identity) for w in (3, 8, 21)]
    assert stretch(cbs) == 1.0

    doubled = [ConformalBox(BBox(0, 0, 10, 4), BBox(0, 0, 20, 4)),
               ConformalBox(BBox(2, 2, 5, 11), BBox(2, 2, 5, 20)),
               ConformalBox(BBox(-6, 0, 0, 6), BBox(-12, 0, 0, 6))]
    assert stretch(doubled) == pytest.approx(math.sqrt(2), abs=1e-9)
