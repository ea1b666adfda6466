"""
Four solvers against a known answer
===================================

For Gaussian data the optimal noise predictor is closed form, so every
solver can be checked without training anything.
"""

import numpy as np

from asediff import GaussianOracle, SamplerConfig, linear_beta_schedule, sample_loop

ns = linear_beta_schedule()
mu, s = np.array([0.5, -0.5]), 1.0
oracle = GaussianOracle(mu, s, ns)

for kind, n in [("ddpm", 1000), ("ddpm", 100), ("ddim", 50), ("em", 1000), ("langevin", 100)]:
    cfg = SamplerConfig(kind, n, seed=0, batch=5000, langevin_step=1e-4)
    x, stats = sample_loop(oracle, None, cfg, ns)
    print(f"{kind:>8}-{n:<5} mean {np.round(x.mean(0), 3)}  std {np.round(x.std(0), 3)}  "
          f"forwards {len(stats.step_t)}")

# ddpm-100 runs the eta = 1 DDIM update on a strided grid.  It uses a tenth
# of the forwards and pays for it with a few percent of lost spread.
