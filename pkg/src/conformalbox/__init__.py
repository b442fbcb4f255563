"""Conformal calibration and evaluation for object-detection boxes.

Learn per-side margins from matched prediction/ground-truth pairs, expand
predicted boxes so they contain the true box with a guaranteed probability,
and score detectors with both classical mAP and its containment-aware
variants.
"""

from ._version import __version__
from .conformal import (
    CalibrationModel,
    ConformalBox,
    DegenerateBoxError,
    InsufficientCalibrationError,
    ScoreVector,
    additive_score,
    calibrate,
    conformalize,
    corrected_quantile,
    coverage,
    multiplicative_score,
)
from .geometry import (
    BBox,
    Detection,
    GroundTruthBox,
    area,
    contains,
    filter_by_confidence,
    intersection_area,
    ioa,
    iou,
    nms,
)
from .ingest import (
    DatasetManifest,
    DetectionDataset,
    RunConfig,
    SchemaError,
    load_config,
    load_detections,
    load_groundtruth,
    load_manifest,
    load_model,
    load_report,
    save_config,
    save_detections,
    save_groundtruth,
    save_model,
    write_report,
)
from .matching import (
    DatasetMatch,
    MatchedPair,
    MatchResult,
    build_cost_matrix,
    hungarian_match,
    match_dataset,
)
from .metrics import (
    IOA_GRID_80_100,
    IOU_GRID_50_95,
    AreaStats,
    Counts,
    EvalReport,
    MarginReport,
    PRCurve,
    PRPoint,
    average_precision,
    box_area_stats,
    c_map,
    c_map_50_80_100,
    class_curves,
    evaluate,
    interpolate_precision,
    map_at,
    map_range,
    margin,
    rank_and_classify,
    stretch,
)
from .synthlab import (
    ExperimentSummary,
    PerturbationLaw,
    Scene,
    coverage_experiment,
    generate_scene,
)

__all__ = [
    "__version__",
    "IOA_GRID_80_100",
    "IOU_GRID_50_95",
    "AreaStats",
    "BBox",
    "CalibrationModel",
    "ConformalBox",
    "Counts",
    "DatasetManifest",
    "DatasetMatch",
    "DegenerateBoxError",
    "Detection",
    "DetectionDataset",
    "EvalReport",
    "ExperimentSummary",
    "GroundTruthBox",
    "InsufficientCalibrationError",
    "MarginReport",
    "MatchResult",
    "MatchedPair",
    "PRCurve",
    "PRPoint",
    "PerturbationLaw",
    "RunConfig",
    "Scene",
    "SchemaError",
    "ScoreVector",
    "additive_score",
    "area",
    "average_precision",
    "box_area_stats",
    "build_cost_matrix",
    "c_map",
    "c_map_50_80_100",
    "class_curves",
    "calibrate",
    "conformalize",
    "contains",
    "corrected_quantile",
    "coverage",
    "coverage_experiment",
    "evaluate",
    "filter_by_confidence",
    "generate_scene",
    "hungarian_match",
    "intersection_area",
    "interpolate_precision",
    "ioa",
    "iou",
    "load_config",
    "load_detections",
    "load_groundtruth",
    "load_manifest",
    "load_model",
    "load_report",
    "map_at",
    "map_range",
    "margin",
    "match_dataset",
    "multiplicative_score",
    "nms",
    "rank_and_classify",
    "save_config",
    "save_detections",
    "save_groundtruth",
    "save_model",
    "stretch",
    "write_report",
]
