"""Two-tier twinning: cluster the twins, initialize, then gate refreshes.

Clusters 40 twins into 4 groups by affinity, runs V-twinning with a median
defense inside each cluster and then H-twinning steps, printing which cluster
refreshed and whether its deviation beat the threshold.

    python3 demos/03_clustered_twinning.py
"""

from dataclasses import replace

import numpy as np

from ndtsim import AggregatorConfig, AttackConfig, Simulation
from ndtsim import config as cfgmod

base = cfgmod.load_scenario(cfgmod.preset_path("desk"))
cfg = replace(base, num_benign=40, clusters=4, rounds_v=10, rounds_h=8, psi=9e-5,
              attack=AttackConfig(kind="mpaf"), defense=AggregatorConfig(rule="median"))
sim = Simulation(cfg)
print("cluster sizes:", np.bincount(sim.labels).tolist(),
      " fakes per cluster:", np.bincount(sim.fake_labels, minlength=4).tolist())

for rec in sim.v_twinning():
    pass
print(f"after V-twinning ({cfg.rounds_v} rounds): mse {rec.global_mse:.4f}")

for _ in range(cfg.rounds_h):
    rec = sim.h_twinning_step()
    eps = rec.cluster_deviations[-1]
    print(f"  H step {rec.round:3d}: cluster {rec.cluster} eps {eps:.2e} "
          f"{'refresh' if rec.updated else 'skip   '} mse {rec.global_mse:.4f}")
