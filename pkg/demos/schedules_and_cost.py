"""
Exit schedules and what they buy
================================

Walk the D-n catalog, compare the cost model against the reported
wall-clock numbers, then scale one row down to an 8-block toy stack and
time it.
"""

import numpy as np

from asediff import NetworkConfig, SamplerConfig, init_network, linear_beta_schedule
from asediff.experiments import bench_acceleration
from asediff.schedules import (CATALOG_SCALE, DN_CATALOG, Architecture, make_dn_schedule,
                               make_named_schedule, predicted_acceleration,
                               reported_acceleration)

# --- the catalog at full scale ---
print(f"{'name':<10} {'row':<44} {'predicted':>9} {'reported':>9}")
for name in DN_CATALOG:
    s = make_dn_schedule(name)
    pred = predicted_acceleration(s, CATALOG_SCALE[s.arch])
    print(f"{name:<10} {str(list(s.blocks)):<44} {pred:9.2%} {reported_acceleration(name):9.2%}")

# Only the mean of a row matters to the cost model, so the two easy-side
# schedules cost the same.
toy = Architecture.stack(8)
ne = make_named_schedule("noise_easy", toy)
de = make_named_schedule("data_easy", toy)
print("\nnoise_easy", ne.blocks, f"{predicted_acceleration(ne, toy):.2%}")
print("data_easy ", de.blocks, f"{predicted_acceleration(de, toy):.2%}")

# --- a scaled row on a real network ---
net = init_network(NetworkConfig("stack", 8, width=128), 0)
rng = np.random.default_rng(1)
for k in net.params:
    net.params[k] += 0.01 * rng.standard_normal(net.params[k].shape)

d3 = make_dn_schedule("D3-DiT", 8)
rows = bench_acceleration(net, [d3], SamplerConfig("ddim", 20, batch=512),
                          linear_beta_schedule(), repeats=3)
print()
for r in rows:
    print(f"{r['schedule']:<10} {r['row']:<22} predicted {r['predicted_accel']:.3f}  "
          f"flops {r['flop_accel']:.3f}  wall {r['wall_measured_accel']:.3f}")
