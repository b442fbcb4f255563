"""Learn conformal margins on one split and check coverage on another.

The workflow is the whole point of the package in four steps: match
predictions to ground truth, calibrate per-side margins at a target
miscoverage alpha, expand every box by those margins, then count how
often the expanded boxes fully contain their objects.

Run with: python demos/02_calibrate_and_expand.py
"""

from conformalbox import (
    PerturbationLaw,
    calibrate,
    conformalize,
    coverage,
    generate_scene,
    margin,
    match_dataset,
    stretch,
)

ALPHA = 0.2


def matched(seed, n_images, law):
    scene = generate_scene(seed, law, n_images)
    return match_dataset(scene.preds_by_image, scene.gts_by_image)


def main():
    law = PerturbationLaw(noise_scale=4.0, bias=(-1.0, 0.5, 1.0, -0.5))
    calib = matched(7, 800, law)
    test = matched(8, 800, law)
    print(f"calibration split: {len(calib.pairs)} matched pairs "
          f"({calib.n_unmatched_preds} spurious, {calib.n_unmatched_gts} missed)")
    print(f"test split:        {len(test.pairs)} matched pairs")
    print()

    # raw predictions rarely contain the whole object
    naked = sum(
        p.pred.box.xmin <= p.gt.box.xmin
        and p.pred.box.ymin <= p.gt.box.ymin
        and p.pred.box.xmax >= p.gt.box.xmax
        and p.pred.box.ymax >= p.gt.box.ymax
        for p in test.pairs
    ) / len(test.pairs)
    print(f"containment without any expansion: {naked:.3f}")
    print()

    gts = [p.gt for p in test.pairs]
    for penalty in ("additive", "multiplicative"):
        model = calibrate(calib.pairs, ALPHA, penalty=penalty)
        qs = ", ".join(f"{v:.3f}" for v in model.q)
        print(f"{penalty} model at alpha={ALPHA}: q = ({qs})")

        expanded = [conformalize(p.pred.box, model) for p in test.pairs]
        m = margin(expanded)
        print(f"  coverage on held-out pairs: {coverage(expanded, gts):.3f}"
              f"  (target {1 - ALPHA})")
        print(f"  mean absolute displacement per side: "
              f"L {m.left:.2f}  T {m.top:.2f}  R {m.right:.2f}  B {m.bottom:.2f}"
              f"  (total {m.total:.2f})")
        print(f"  mean side-length stretch: {stretch(expanded):.3f}")
        print()


if __name__ == "__main__":
    main()
