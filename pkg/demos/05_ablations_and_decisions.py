#!/usr/bin/env python3
"""Ablation grids and decision-weight reporting through the CLI entry
points, driven in process.

Run:  python demos/05_ablations_and_decisions.py
"""

import os
import tempfile

from semnet.cli import main

root = tempfile.mkdtemp(prefix="semnet_demo_")
cfg_path = os.path.join(root, "base.cfg")
with open(cfg_path, "w") as fh:
    fh.write("""\
dataset=synthetic
depth=11
attention=sem
epochs=2
batch_size=16
synthetic_train=64
synthetic_test=32
synthetic_classes=4
seed=5
eval_batch_size=32
""")

# Decision-module removal: the same switch with unit weights.
print("== ablate: decision_removal ==")
main(["ablate", "--which", "decision_removal", "--config", cfg_path,
      "--out-dir", os.path.join(root, "abl_decision")])

# Switch activations: the linear ones are expected to train poorly and
# may abort on a non-finite loss, which the grid records as 'diverged'.
print("\n== ablate: activation ==")
main(["ablate", "--which", "activation", "--config", cfg_path,
      "--out-dir", os.path.join(root, "abl_act")])

# Per-layer decision statistics of a trained checkpoint.
print("\n== export-decisions ==")
run_dir = os.path.join(root, "run")
main(["train", "--config", cfg_path, "--out-dir", run_dir])
main(["export-decisions", "--checkpoint", os.path.join(run_dir, "final.ckpt"),
      "--samples", "32"])

# Random operator assignment experiments (one trial to keep this quick).
print("\n== random-ops ==")
main(["random-ops", "--arity", "2", "--trials", "1", "--config", cfg_path,
      "--out-dir", os.path.join(root, "ro")])
print("\nartifacts under:", root)
