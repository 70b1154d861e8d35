"""Table-shaped sweeps through the command-line runner.

Writes a small sweep file, runs ``ndtsim sweep`` on it in-process and prints
the resulting matrix.csv. Outputs land in ./demo_out/.

    python3 demos/05_sweeps.py
"""

from pathlib import Path

import yaml

from ndtsim.cli import main

out = Path("demo_out")
out.mkdir(exist_ok=True)
sweeps = {
    "fraction": {"base": "desk", "axis": "fake_fraction", "values": [0.05, 0.1, 0.2, 0.3, 0.4],
                 "defenses": ["median", "glid"]},
    "pairs": {"base": "desk", "axis": "percentile_pair",
              "values": [[10, 70], [10, 90], [20, 70], [20, 80]], "attacks": ["trim", "random", "mpaf"]},
}
for name, raw in sweeps.items():
    path = out / f"{name}.yaml"
    path.write_text(yaml.safe_dump(raw))
    main(["sweep", "--config", str(path), "--out", str(out / name)])
    print((out / name / "matrix.csv").read_text())
