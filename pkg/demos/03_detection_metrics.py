"""Why a high-IoU box can still be a bad box, and how the metrics react.

Builds a three-image toy dataset where one detection overlaps its object
well (IoU 0.68) yet clips off a corner. Classic mAP rewards it; the
containment-aware variants do not.

Run with: python demos/03_detection_metrics.py
"""

from conformalbox import (
    BBox,
    Detection,
    GroundTruthBox,
    average_precision,
    c_map,
    c_map_50_80_100,
    map_at,
    rank_and_classify,
)


def toy_dataset():
    # im0: detection encloses the object with room to spare
    # im1: detection overlaps strongly but cuts off the left edge
    # im2: spurious low-confidence detection, object missed entirely
    preds = {
        "im0": [Detection("im0", BBox(-1, -1, 11, 11), 0.90, (1.0,))],
        "im1": [Detection("im1", BBox(1, 1, 11, 11), 0.80, (1.0,))],
        "im2": [Detection("im2", BBox(50, 50, 60, 60), 0.20, (1.0,))],
    }
    gts = {
        "im0": [GroundTruthBox("im0", BBox(0, 0, 10, 10), 0)],
        "im1": [GroundTruthBox("im1", BBox(0, 0, 10, 10), 0)],
        "im2": [GroundTruthBox("im2", BBox(0, 0, 10, 10), 0)],
    }
    return preds, gts


def show_curve(title, curve):
    print(title)
    print("  rank conf  cumTP  precision recall")
    for i, pt in enumerate(curve.points, 1):
        print(f"  {i:>4} {pt.threshold:.2f}  {pt.tp:>5}  "
              f"{float(pt.precision):>9.4f} {float(pt.recall):.4f}")


def main():
    preds, gts = toy_dataset()

    classic = rank_and_classify(preds, gts, iou_threshold=0.5)
    conformal = rank_and_classify(preds, gts, iou_threshold=0.5,
                                  match_rule="conformal")
    show_curve("classic rule (IoU >= 0.5):", classic)
    print()
    show_curve("conformal rule (IoU >= 0.5 AND full containment):", conformal)
    print()

    # the im1 detection flips from TP to FP under the stricter rule,
    # which drags every downstream summary number with it
    print(f"AP 11pt, classic:    {average_precision(classic):.4f}")
    print(f"AP 101pt, classic:   {average_precision(classic, interp='101pt'):.4f}")
    print(f"AP 11pt, conformal:  {average_precision(conformal):.4f}")
    print()

    print(f"mAP@0.5 classic:     {map_at(preds, gts, 0.5):.4f}")
    print(f"C-mAP@0.5:           {c_map(preds, gts):.4f}")
    print(f"C-mAP@50@80:100:     {c_map_50_80_100(preds, gts):.4f}")
    print()

    # the graded family replaces the hard containment bar with IoA
    # thresholds from 0.8 to 1.0; the clipped box covers 81% of its
    # object so it survives the 0.8 rung and fails the rest
    for s in (0.8, 0.9, 1.0):
        v = map_at(preds, gts, 0.5, ioa_threshold=s)
        print(f"mAP@0.5 with IoA >= {s:.1f}: {v:.4f}")


if __name__ == "__main__":
    main()
