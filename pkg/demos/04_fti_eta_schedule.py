"""The FTI scaling schedule against a live run.

Records eta and its step through a flat run under median aggregation and
prints the tidy trajectory: the step halves every round, so eta settles
within one initial step of where it started.

    python3 demos/04_fti_eta_schedule.py
"""

from dataclasses import replace

from ndtsim import AggregatorConfig, run_experiment
from ndtsim import config as cfgmod

base = cfgmod.load_scenario(cfgmod.preset_path("desk"))
for eta0 in (1.0, 10.0, 20.0):
    cfg = replace(base, attack=replace(base.attack, eta0=eta0), defense=AggregatorConfig(rule="median"))
    res = run_experiment(cfg)
    etas = res.report["eta_trajectory"]
    head = " ".join(f"{e:.4g}" for e in etas[:8])
    print(f"eta0={eta0:>4}: {head} ... final {etas[-1]:.6g}  (mse {res.final_mse:.4g})")
