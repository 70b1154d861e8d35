"""YAML scenario configs: parsing, dotted overrides and field-level validation.

A config file mirrors :class:`ScenarioConfig` field for field; nested
dataclasses are nested mappings. ``attack: none`` (or null) disables the
attacker and ``clusters: flat`` (or null) runs the flat baseline.
"""

from __future__ import annotations

import copy
import dataclasses
import os
import types
import typing
from pathlib import Path

import yaml

from .attacks import AttackConfig
from .data import SynthSpec
from .estimators import EstimatorConfig
from .orchestrator import ScenarioConfig

PRESET_DIR = Path(__file__).with_name("presets")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists one message per offending field."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _is_none_word(v) -> bool:
    return v is None or (isinstance(v, str) and v.lower() in ("none", "null", "flat"))


def _unwrap_optional(tp):
    args = typing.get_args(tp)
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType) and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return (rest[0] if len(rest) == 1 else typing.Union[tuple(rest)]), True
    return tp, False


def _coerce(value, tp, path: str, errors: list[str]):
    tp, optional = _unwrap_optional(tp)
    if optional and _is_none_word(value):
        return None
    if dataclasses.is_dataclass(tp):
        if isinstance(value, tp):
            return value
        if not isinstance(value, dict):
            errors.append(f"{path}: expected a mapping, got {type(value).__name__}")
            return None
        return _build(tp, value, path, errors)
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            errors.append(f"{path}: expected a list")
            return None
        args = typing.get_args(tp)
        inner = args[0] if args else float
        return tuple(_coerce(v, inner, f"{path}[{i}]", errors) for i, v in enumerate(value))
    if origin in (typing.Union, types.UnionType):
        # e.g. ``str | list`` for an explicit FTI base model
        return value
    if tp is bool:
        if not isinstance(value, bool):
            errors.append(f"{path}: expected true/false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            errors.append(f"{path}: expected an integer, got {value!r}")
            return None
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            errors.append(f"{path}: expected a number, got {value!r}")
            return None
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            errors.append(f"{path}: expected a string, got {value!r}")
            return None
        return value
    return value


def _build(cls, raw: dict, path: str, errors: list[str]):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    for key in raw:
        if key not in names:
            errors.append(f"{path + '.' if path else ''}{key}: unknown field")
    kwargs = {}
    n_before = len(errors)
    for key, value in raw.items():
        if key in names:
            kwargs[key] = _coerce(value, hints[key], f"{path + '.' if path else ''}{key}", errors)
    if len(errors) > n_before:
        return None
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        errors.append(f"{path or cls.__name__}: {exc}")
        return None


def set_dotted(raw: dict, key: str, value) -> None:
    parts = key.split(".")
    node = raw
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def parse_override(text: str) -> tuple[str, object]:
    """``a.b=value`` with the value parsed as YAML (so 0.2, true, [10, 70] work)."""
    if "=" not in text:
        raise ConfigError([f"override {text!r}: expected key=value"])
    key, val = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError([f"override {text!r}: empty key"])
    try:
        return key, yaml.safe_load(val)
    except yaml.YAMLError as exc:
        raise ConfigError([f"override {key}: {exc}"]) from None


def load_yaml(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"{path}: no such config file"])
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return raw


def scenario_from_dict(raw: dict, overrides=()) -> ScenarioConfig:
    raw = copy.deepcopy(raw)
    for item in overrides:
        key, value = parse_override(item) if isinstance(item, str) else item
        set_dotted(raw, key, value)
    if _is_none_word(raw.get("attack", None)):
        raw["attack"] = None
    errors: list[str] = []
    cfg = _build(ScenarioConfig, raw, "", errors)
    if errors:
        raise ConfigError(errors)
    return cfg


def load_scenario(path, overrides=()) -> ScenarioConfig:
    return scenario_from_dict(load_yaml(path), overrides)


def preset_path(name: str) -> Path:
    """Path of a shipped preset (``reference`` or ``desk``)."""
    p = PRESET_DIR / f"{name}.yaml"
    if not p.is_file():
        raise ConfigError([f"unknown preset {name!r}"])
    return p


def synth_from_dict(raw: dict) -> SynthSpec:
    errors: list[str] = []
    spec = _build(SynthSpec, raw, "", errors)
    if errors:
        raise ConfigError(errors)
    return spec


# -- sweeps ---------------------------------------------------------------------

SWEEP_AXES = ("attack", "defense", "fake_fraction", "eta0", "percentile_pair", "estimator", "num_ndts")


@dataclasses.dataclass(frozen=True)
class SweepSpec:
    """A one-axis sweep over a base scenario.

    ``attacks`` and ``defenses`` optionally widen each cell into a grid so the
    output matrix has one row per defense and one column per attack.
    """

    base: ScenarioConfig
    axis: str
    values: list
    attacks: list | None = None
    defenses: list | None = None
    seeds: list | None = None

    def cells(self):
        """Yield ``(axis_value, defense, attack, seed, ScenarioConfig)`` for every cell."""
        attacks = self.attacks or [None]
        defenses = self.defenses or [None]
        seeds = self.seeds or [self.base.seed]
        for v in self.values:
            cfg_v = apply_axis(self.base, self.axis, v)
            for d in defenses:
                cfg_d = cfg_v if d is None else apply_axis(cfg_v, "defense", d)
                for a in attacks:
                    cfg_a = cfg_d if a is None else apply_axis(cfg_d, "attack", a)
                    for s in seeds:
                        cfg = dataclasses.replace(cfg_a, seed=int(s))
                        yield v, cfg.defense.rule, attack_name(cfg), int(s), cfg


def attack_name(cfg: ScenarioConfig) -> str:
    return "none" if cfg.attack is None else cfg.attack.kind


def apply_axis(base: ScenarioConfig, axis: str, value) -> ScenarioConfig:
    """Return ``base`` with the sweep axis set to ``value`` (raises ConfigError)."""
    rep = dataclasses.replace
    try:
        if axis == "attack":
            if _is_none_word(value):
                return rep(base, attack=None)
            prev = base.attack or AttackConfig()
            return rep(base, attack=rep(prev, kind=str(value)))
        if axis == "defense":
            return rep(base, defense=rep(base.defense, rule=str(value)))
        if axis == "fake_fraction":
            return rep(base, fake_fraction=_number(value, axis))
        if axis == "eta0":
            prev = base.attack or AttackConfig()
            return rep(base, attack=rep(prev, kind="fti", eta0=_number(value, axis)))
        if axis == "percentile_pair":
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise ValueError(f"percentile_pair values must be [lo, hi], got {value!r}")
            est = EstimatorConfig(method="fixed", fixed_pair=tuple(_number(x, axis) for x in value))
            return rep(base, defense=rep(base.defense, rule="glid", estimator=est))
        if axis == "estimator":
            est = rep(base.defense.estimator, method=str(value))
            return rep(base, defense=rep(base.defense, rule="glid", estimator=est))
        if axis == "num_ndts":
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError(f"num_ndts values must be integers, got {value!r}")
            return rep(base, num_benign=value)
    except (ValueError, TypeError) as exc:
        raise ConfigError([f"{axis}={value!r}: {exc}"]) from None
    raise ConfigError([f"axis: must be one of {SWEEP_AXES}, got {axis!r}"])


def _number(v, axis) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValueError(f"{axis} values must be numbers, got {v!r}")
    return float(v)


def _name_list(raw, key, errors):
    v = raw.get(key)
    if v is None:
        return None
    if not isinstance(v, list) or not v:
        errors.append(f"{key}: expected a non-empty list")
        return None
    return ["none" if x is None else x for x in v]


def load_sweep(path, overrides=()) -> SweepSpec:
    """Sweep file: ``base`` (mapping or path relative to the sweep file), ``axis``, ``values``.

    Optional ``attacks``, ``defenses`` and ``seeds`` lists widen the grid.
    """
    raw = load_yaml(path)
    errors: list[str] = []
    for key in raw:
        if key not in ("base", "axis", "values", "attacks", "defenses", "seeds"):
            errors.append(f"{key}: unknown field")
    base_raw = raw.get("base", {})
    if isinstance(base_raw, str):
        base_file = Path(base_raw)
        if not base_file.is_absolute():
            base_file = Path(path).parent / base_file
        if not base_file.is_file() and base_raw in ("reference", "desk"):
            base_file = preset_path(base_raw)
        base_raw = load_yaml(base_file)
    if not isinstance(base_raw, dict):
        errors.append("base: expected a mapping or a config path")
        base_raw = {}
    axis = raw.get("axis")
    if axis not in SWEEP_AXES:
        errors.append(f"axis: must be one of {SWEEP_AXES}, got {axis!r}")
    values = raw.get("values")
    if not isinstance(values, list) or not values:
        errors.append("values: expected a non-empty list")
    attacks = _name_list(raw, "attacks", errors)
    defenses = _name_list(raw, "defenses", errors)
    seeds = raw.get("seeds")
    if seeds is not None and (not isinstance(seeds, list) or not seeds
                              or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds)):
        errors.append("seeds: expected a non-empty list of integers")
    try:
        base = scenario_from_dict(base_raw, overrides)
    except ConfigError as exc:
        errors.extend(f"base.{e}" for e in exc.errors)
        base = None
    if errors:
        raise ConfigError(errors)
    spec = SweepSpec(base, axis, values, attacks, defenses, seeds)
    # type-check every cell up front so a bad value fails before any work
    for _ in spec.cells():
        pass
    return spec


def worker_count() -> int:
    """Sweep worker processes from ``NDTSIM_WORKERS`` (default 1)."""
    raw = os.environ.get("NDTSIM_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError([f"NDTSIM_WORKERS: expected an integer, got {raw!r}"]) from None
    if n < 1:
        raise ConfigError(["NDTSIM_WORKERS: must be >= 1"])
    return n


__all__ = [
    "ConfigError", "SweepSpec", "SWEEP_AXES", "apply_axis", "load_scenario", "load_sweep",
    "scenario_from_dict", "synth_from_dict", "parse_override", "preset_path", "worker_count",
]
