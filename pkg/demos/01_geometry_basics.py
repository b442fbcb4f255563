"""Box geometry from the ground up: overlap measures, containment, NMS.

Run with: python demos/01_geometry_basics.py
"""

from conformalbox import (
    BBox,
    Detection,
    area,
    contains,
    filter_by_confidence,
    intersection_area,
    ioa,
    iou,
    nms,
)


def main():
    gt = BBox(0.0, 0.0, 10.0, 10.0)
    tight = BBox(1.0, 1.0, 11.0, 11.0)
    loose = BBox(-2.0, -2.0, 12.0, 12.0)

    print("ground truth     ", gt.as_tuple(), " area", area(gt))
    print("shifted predict  ", tight.as_tuple())
    print("enclosing predict", loose.as_tuple())
    print()

    # iou is symmetric, ioa is not: it asks how much of the FIRST box's
    # area the second box covers
    print(f"iou(gt, shifted)        = {iou(gt, tight):.4f}")
    print(f"iou(gt, enclosing)      = {iou(gt, loose):.4f}")
    print(f"ioa(gt, shifted)        = {ioa(gt, tight):.4f}")
    print(f"ioa(gt, enclosing)      = {ioa(gt, loose):.4f}   (fully covered)")
    print(f"intersection(gt, shift) = {intersection_area(gt, tight)}")
    print()

    # containment is a hard yes/no on the raw coordinates, not a ratio.
    # the shifted box overlaps a lot but still loses a sliver of the object.
    print("contains(shifted, gt)   =", contains(tight, gt))
    print("contains(enclosing, gt) =", contains(loose, gt))
    print()

    # three detections of the same object; NMS keeps the most confident
    # one and drops near-duplicates above the IoU threshold
    dets = [
        Detection("demo", BBox(0, 0, 10, 10), 0.9, (1.0,)),
        Detection("demo", BBox(0.5, 0.5, 10.5, 10.5), 0.8, (1.0,)),
        Detection("demo", BBox(40, 40, 50, 50), 0.3, (1.0,)),
    ]
    kept = nms(dets, iou_threshold=0.5)
    print(f"nms kept {len(kept)} of {len(dets)} detections:")
    for d in kept:
        print(f"  conf {d.objectness:.1f} at {d.box.as_tuple()}")

    confident = filter_by_confidence(kept, tau=0.5)
    print(f"after a 0.5 confidence floor: {len(confident)} left")


if __name__ == "__main__":
    main()
