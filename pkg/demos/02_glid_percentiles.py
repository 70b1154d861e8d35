"""What GLID trims, one dimension at a time.

One parameter dimension holds 16 benign values plus a block of 4 identical
fakes. The first table puts the block above the benign values and compares
the estimated percentile pairs; the second puts it below and uses fixed
pairs, where the lower edge decides whether the block survives.

    python3 demos/02_glid_percentiles.py
"""

import numpy as np

from ndtsim.aggregation import glid_aggregate
from ndtsim.estimators import EstimatorConfig, estimate_pair

rng = np.random.default_rng(0)
benign = rng.normal(0.5, 0.1, size=16)
print(f"benign mean {benign.mean():.4f}")


def show(label, v, est):
    pair = estimate_pair(v, est)
    out, flags = glid_aggregate(v[:, None], est)
    print(f"  {label:>12}: pair [{pair.lo:5.1f}, {pair.hi:5.1f}]  trimmed {int(flags.sum()):2d}"
          f" (fakes {int(flags[-4:].sum())}/4)  result {out[0]:8.4f}")


for fake in (0.9, 50.0):
    print(f"fakes at +{fake}")
    v = np.concatenate([benign, np.full(4, fake)])
    for method in ("sd", "iqr", "zscore", "ocsvm"):
        show(method, v, EstimatorConfig(method=method))

print("fakes at -50, fixed pairs")
v = np.concatenate([benign, np.full(4, -50.0)])
for pair in ((10, 70), (10, 90), (20, 70), (20, 80)):
    show(str(list(pair)), v, EstimatorConfig(method="fixed", fixed_pair=pair))
