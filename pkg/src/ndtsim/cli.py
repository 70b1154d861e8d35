"""Command-line runner: ``ndtsim run | sweep | gen-data``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 invalid configuration.
``NDTSIM_WORKERS`` sets the number of worker processes for sweeps.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from .config import ConfigError
from .data import export_csv, synth_generate
from .orchestrator import RoundRecord, ScenarioConfig, run_experiment

ROUNDS_CSV = "rounds.csv"
REPORT_JSON = "report.json"
MATRIX_CSV = "matrix.csv"
SWEEP_CSV = "sweep.csv"
ETA_CSV = "eta.csv"
FLAGS_CSV = "flags.csv"


def write_rounds_csv(records: list[RoundRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RoundRecord.CSV_FIELDS)
        for r in records:
            w.writerow(r.csv_row())


def write_eta_csv(records: list[RoundRecord], path) -> None:
    """Tidy FTI schedule: one row per round with a recorded ``eta``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("round", "stage", "eta", "step"))
        for r in records:
            if r.eta is not None:
                w.writerow((r.round, r.stage, repr(r.eta), repr(r.step)))


def write_flags_csv(records: list[RoundRecord], path) -> None:
    """Per-round, per-participant count of trimmed dimensions (GLID diagnostics)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("round", "stage", "participant", "flagged_dims"))
        for r in records:
            for pid in sorted(r.flags_per_ndt):
                w.writerow((r.round, r.stage, pid, r.flags_per_ndt[pid]))


def _write_run(result, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / REPORT_JSON).write_text(json.dumps(result.report, indent=2, sort_keys=True) + "\n")
    write_rounds_csv(result.records, out / ROUNDS_CSV)
    if result.report["eta_trajectory"]:
        write_eta_csv(result.records, out / ETA_CSV)
    if any(r.flags_per_ndt for r in result.records):
        write_flags_csv(result.records, out / FLAGS_CSV)


def _scenario(args) -> ScenarioConfig:
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    path = args.config
    if not Path(path).is_file() and path in ("reference", "desk"):
        path = cfgmod.preset_path(path)
    return cfgmod.load_scenario(path, overrides)


def cmd_run(args) -> int:
    cfg = _scenario(args)
    result = run_experiment(cfg)
    _write_run(result, Path(args.out))
    print(f"final mae={result.final_mae:.6g} mse={result.final_mse:.6g} -> {args.out}")
    return 0


def _run_cell(cfg: ScenarioConfig):
    return run_experiment(cfg)


def _label(v) -> str:
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_label(x) for x in v) + "]"
    return str(v)


def _fmt(x: float) -> str:
    return repr(float(x))


def cmd_sweep(args) -> int:
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    spec = cfgmod.load_sweep(args.config, overrides)
    workers = cfgmod.worker_count()
    cells = list(spec.cells())
    cfgs = [c[-1] for c in cells]
    if workers > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, cfgs))
    else:
        results = [_run_cell(c) for c in cfgs]

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    axis_col = spec.axis not in ("attack", "defense")
    with open(out / SWEEP_CSV, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("cell", "axis", "value", "defense", "attack", "seed", "mae", "mse", "v_mae", "v_mse"))
        for i, ((value, rule, attack, seed, _), res) in enumerate(zip(cells, results)):
            v_end = res.report["end_of_v"] or res.report["final"]
            w.writerow((i, spec.axis, _label(value), rule, attack, seed, _fmt(res.final_mae),
                        _fmt(res.final_mse), _fmt(v_end["mae"]), _fmt(v_end["mse"])))
            _write_run(res, out / "cells" / f"{i:03d}")

    # matrix: rows = (axis value,) defense; columns = attack; seeds averaged
    rows: dict = {}
    attacks: list[str] = []
    for (value, rule, attack, _, _), res in zip(cells, results):
        key = (_label(value), rule) if axis_col else (rule,)
        rows.setdefault(key, {}).setdefault(attack, []).append((res.final_mae, res.final_mse))
        if attack not in attacks:
            attacks.append(attack)
    with open(out / MATRIX_CSV, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        head = ([spec.axis] if axis_col else []) + ["defense"]
        w.writerow(head + [f"{a}_{m}" for a in attacks for m in ("mae", "mse")])
        for key, by_attack in rows.items():
            line = list(key)
            for a in attacks:
                vals = by_attack.get(a)
                if not vals:
                    line += ["", ""]
                    continue
                mae = sum(v[0] for v in vals) / len(vals)
                mse = sum(v[1] for v in vals) / len(vals)
                line += [_fmt(mae), _fmt(mse)]
            w.writerow(line)
    print(f"{len(cells)} cells -> {out / MATRIX_CSV}")
    return 0


def cmd_gen_data(args) -> int:
    raw = cfgmod.load_yaml(args.config) if args.config else {}
    for item in args.override or []:
        key, value = cfgmod.parse_override(item)
        cfgmod.set_dotted(raw, key, value)
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = cfgmod.synth_from_dict(raw)
    series = synth_generate(spec)
    out = Path(args.out)
    export_csv(series, out)
    print(f"{len(series)} series x {spec.length} intervals -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ndtsim", description="Distributed twin poisoning simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True, config_help="scenario YAML (or preset name: reference, desk)"):
        sp.add_argument("--config", required=config_required, help=config_help)
        sp.add_argument("--out", required=True, help="output path")
        sp.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        sp.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="dotted-path override, value parsed as YAML (repeatable)")

    common(sub.add_parser("run", help="run one scenario"))
    common(sub.add_parser("sweep", help="run a one-axis sweep and emit a matrix"),
           config_help="sweep YAML with base, axis, values")
    common(sub.add_parser("gen-data", help="write synthetic traffic as CSV"), config_required=False,
           config_help="synthetic spec YAML (defaults if omitted)")
    return p


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "gen-data": cmd_gen_data}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure inside a component
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
