"""Attack x defense matrix on the desk scenario.

Runs every attack against a handful of aggregation rules in flat mode and
prints the final MSE relative to the clean run of the same rule. Values near
1 mean the rule held; values in the thousands mean the metric hit the cap.

    python3 demos/01_attack_matrix.py
"""

from dataclasses import replace

from ndtsim import AggregatorConfig, AttackConfig, run_experiment
from ndtsim import config as cfgmod

ATTACKS = ["fti", "trim", "history", "random", "mpaf", "zheng"]
RULES = ["mean", "median", "trim", "krum", "faba", "glid"]

base = cfgmod.load_scenario(cfgmod.preset_path("desk"))

print(f"{'rule':>8} " + " ".join(f"{a:>9}" for a in ATTACKS))
for rule in RULES:
    cfg = replace(base, defense=replace(base.defense, rule=rule))
    clean = run_experiment(replace(cfg, attack=None)).final_mse
    cells = []
    for kind in ATTACKS:
        attacked = run_experiment(replace(cfg, attack=AttackConfig(kind=kind))).final_mse
        cells.append(attacked / clean)
    print(f"{rule:>8} " + " ".join(f"{c:9.3g}" for c in cells))
