"""The full file-based pipeline, driven through the CLI entry point.

Equivalent shell session:

    conformalbox calibrate --preds preds.json --gts gts.json \
        --alpha 0.2 -o model.json
    conformalbox apply --preds preds.json --model model.json \
        -o conformal.json
    conformalbox eval --preds conformal.json --gts gts.json \
        --label demo -o report.json
    conformalbox report --input report.json --format table -o report.txt

Run with: python demos/05_cli_pipeline.py
"""

import tempfile
from pathlib import Path

from conformalbox import PerturbationLaw, generate_scene, save_detections, save_groundtruth
from conformalbox.cli import main as cli


def run(*argv):
    argv = [str(a) for a in argv]
    print("$ conformalbox", " ".join(argv))
    code = cli(argv)
    if code != 0:
        raise SystemExit(f"step failed with exit code {code}")


def main():
    work = Path(tempfile.mkdtemp(prefix="conformalbox-demo-"))
    print(f"working in {work}\n")

    # two disjoint synthetic scenes stand in for calibration and test data
    law = PerturbationLaw(noise_scale=3.0)
    for name, seed in (("calib", 1), ("test", 2)):
        scene = generate_scene(seed, law, 300)
        save_detections(scene.preds_by_image, work / f"{name}_preds.json")
        save_groundtruth(scene.gts_by_image, work / f"{name}_gts.json")

    run("calibrate",
        "--preds", work / "calib_preds.json", "--gts", work / "calib_gts.json",
        "--alpha", "0.2", "-o", work / "model.json")
    run("apply",
        "--preds", work / "test_preds.json", "--model", work / "model.json",
        "-o", work / "conformal_preds.json")
    run("eval",
        "--preds", work / "conformal_preds.json", "--gts", work / "test_gts.json",
        "--label", "expanded", "-o", work / "report.json")
    run("report",
        "--input", work / "report.json", "--format", "table",
        "-o", work / "report.txt")

    print()
    print((work / "report.txt").read_text(), end="")


if __name__ == "__main__":
    main()
