"""
Which end of the trajectory tolerates a shallow network?
========================================================

Pretrain a toy stack on an 8-mode ring, then fine-tune two schedules with
the same average depth: one thins the network near pure noise, the other
near the data.  Runs in a minute or two on one core.
"""

import logging

from asediff.config import parse_config
from asediff.experiments import run_tradeoff_experiment

logging.basicConfig(level=logging.INFO, format="%(message)s")

cfg = parse_config({"experiments": {"seeds": [0]}})
rows = run_tradeoff_experiment(cfg)

for r in rows:
    print(f"{r.label:>16}  row {r.row:<22} SW {r.sliced_wasserstein:.4f}  "
          f"saves {r.predicted_accel:.1%} of block compute")

# Expect the noise_easy row close to the full model and data_easy behind it.
