"""
Training on synthetic radiographs
=================================

A short run of the full pipeline on the synthetic-shapes dataset: write the
images, draw a repartition with 60% hidden anomalies in the unlabeled set,
train for a few hundred iterations and score the test split.

The acceptance run uses ``configs/synthetic.yaml`` for 2000 iterations; this
script stops earlier so that it finishes in a few minutes on one CPU core.
Pass a different iteration count as the first argument.
"""
import sys
import tempfile
from pathlib import Path

from restore_ad.cli import main

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 300
config = Path(__file__).resolve().parents[1] / "configs" / "synthetic.yaml"
work = Path(tempfile.mkdtemp(prefix="restore_ad_demo_"))
print("working directory:", work)

###############################################################################
# 400 normal and 250 abnormal 64x64 images plus a manifest.
main(["make-synthetic", "--out", str(work / "data"), "--seed", "0"])

###############################################################################
# 200 normal training images, 200 unlabeled images of which 120 are abnormal,
# and a balanced test split of 200 images.
rep = work / "rep.json"
main(["prepare", "--manifest", str(work / "data" / "manifest.csv"), "--ar", "0.6",
      "--n-normal-train", "200", "--n-unlabeled", "200", "--n-test-normal", "100",
      "--n-test-abnormal", "100", "--out", str(rep)])

###############################################################################
# Train, then evaluate the final checkpoint.
run = work / "run"
main(["train", "--config", str(config), "--repartition", str(rep), f"output_dir={run}",
      f"train.max_iterations={iterations}", f"train.checkpoint_every={iterations}"])
main(["eval", "--checkpoint", str(run), "--repartition", str(rep)])

###############################################################################
# Heatmaps for the first three abnormal test images.
images = sorted((work / "data" / "images").glob("a*.png"))[:3]
main(["heatmap", "--checkpoint", str(run), "--out", str(work / "heat"), *map(str, images)])
