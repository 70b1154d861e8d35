"""Traffic ingestion (cell-grid CSV), synthetic traffic and normalization."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DataFormatError(ValueError):
    """A traffic CSV could not be parsed."""


@dataclass(frozen=True)
class TrafficSeries:
    ndt_id: str
    loads: np.ndarray
    interval_seconds: int = 600
    start_ms: int = 0

    def __post_init__(self):
        loads = np.asarray(self.loads, dtype=float)
        if loads.ndim != 1:
            raise ValueError("loads must be one-dimensional")
        if not np.all(np.isfinite(loads)):
            raise ValueError(f"series {self.ndt_id}: loads must be finite")
        if self.interval_seconds < 1:
            raise ValueError("interval_seconds must be a positive integer")
        object.__setattr__(self, "loads", loads)

    def __len__(self) -> int:
        return len(self.loads)


@dataclass(frozen=True)
class CsvSchema:
    """Column names and delimiter of a traffic CSV (header row required)."""

    cell: str = "cell_id"
    time: str = "timestamp_ms"
    load: str = "load"
    delimiter: str = ","


@dataclass(frozen=True)
class SynthSpec:
    num_ndts: int = 80
    length: int = 336
    daily_period: int = 24
    base: float = 10.0
    amplitude: float = 5.0
    noise_sd: float = 0.3
    heterogeneity: float = 0.2
    seed: int = 0
    interval_seconds: int = 3600

    def __post_init__(self):
        if self.num_ndts < 1:
            raise ValueError("num_ndts must be positive")
        if self.daily_period < 1:
            raise ValueError("daily_period must be positive")
        if self.length < 2 * self.daily_period:
            raise ValueError("length must cover at least two periods")
        if self.noise_sd < 0 or self.heterogeneity < 0:
            raise ValueError("noise_sd and heterogeneity must be nonnegative")


def ingest_csv(path, interval_seconds: int, schema: CsvSchema = CsvSchema()) -> dict[str, TrafficSeries]:
    """Read a cell-grid traffic CSV into one series per cell.

    Records are binned to ``interval_seconds`` and summed per (cell, interval).
    All series share one time grid spanning the earliest to the latest bin in
    the file; intervals without records are filled with 0.
    """
    if interval_seconds < 1:
        raise ValueError("interval_seconds must be positive")
    width_ms = interval_seconds * 1000
    sums: dict[str, dict[int, float]] = defaultdict(lambda: defaultdict(float))
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        try:
            ci, ti, li = (header.index(c) for c in (schema.cell, schema.time, schema.load))
        except ValueError:
            raise DataFormatError(
                f"{path}: header {header} lacks one of "
                f"{schema.cell!r}, {schema.time!r}, {schema.load!r}"
            ) from None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                cell = row[ci].strip()
                ts = int(float(row[ti]))
                load = float(row[li])
            except (IndexError, ValueError) as exc:
                raise DataFormatError(f"{path}:{lineno}: cannot parse row {row!r} ({exc})") from None
            if not np.isfinite(load) or load < 0:
                raise DataFormatError(f"{path}:{lineno}: load must be a nonnegative number")
            sums[cell][ts // width_ms] += load
    if not sums:
        raise DataFormatError(f"{path}: no data rows")

    first = min(min(b) for b in sums.values())
    last = max(max(b) for b in sums.values())
    out = {}
    for cell in sorted(sums):
        loads = np.zeros(last - first + 1)
        for b, v in sums[cell].items():
            loads[b - first] = v
        out[cell] = TrafficSeries(cell, loads, interval_seconds, first * width_ms)
    return out


def export_csv(series: dict[str, TrafficSeries], path, schema: CsvSchema = CsvSchema()) -> None:
    """Write series in the layout :func:`ingest_csv` reads, one row per interval."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=schema.delimiter)
        writer.writerow([schema.cell, schema.time, schema.load])
        for key in sorted(series):
            s = series[key]
            width_ms = s.interval_seconds * 1000
            for l, v in enumerate(s.loads):
                writer.writerow([s.ndt_id, s.start_ms + l * width_ms, repr(float(v))])


def synth_generate(spec: SynthSpec) -> dict[str, TrafficSeries]:
    """Seeded sinusoidal traffic with per-twin amplitude and phase spread.

    Series ``m`` at interval ``l`` is ``base + A_m sin(2 pi (l + phi_m) / P)``
    plus Gaussian noise, clipped at zero.
    """
    out = {}
    l = np.arange(spec.length)
    for m in range(spec.num_ndts):
        rng = np.random.default_rng([spec.seed, m])
        u_amp, u_phase = rng.uniform(-1.0, 1.0, size=2)
        amp = spec.amplitude * max(0.0, 1.0 + spec.heterogeneity * u_amp)
        phase = spec.heterogeneity * spec.daily_period * u_phase
        noise = rng.normal(0.0, spec.noise_sd, size=spec.length) if spec.noise_sd > 0 else 0.0
        loads = spec.base + amp * np.sin(2 * np.pi * (l + phase) / spec.daily_period) + noise
        ndt_id = f"ndt{m:03d}"
        out[ndt_id] = TrafficSeries(ndt_id, np.clip(loads, 0.0, None), spec.interval_seconds)
    return out


SD_FLOOR = 1e-8


@dataclass(frozen=True)
class Standardizer:
    mean: float
    sd: float

    def forward(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.sd

    def inverse(self, x):
        return np.asarray(x, dtype=float) * self.sd + self.mean


def standardize(loads, train_len: int | None = None):
    """Z-score a series using statistics of its first ``train_len`` points.

    Returns ``(normalized, mean, sd)``; ``sd`` is floored at 1e-8 so constant
    series map to zeros.
    """
    x = np.asarray(loads, dtype=float)
    if len(x) < 2:
        raise ValueError("standardize needs at least two points")
    train = x if train_len is None else x[:train_len]
    if len(train) < 1:
        raise ValueError("empty training split")
    mean = float(train.mean())
    sd = max(float(train.std()), SD_FLOOR)
    return (x - mean) / sd, mean, sd


def destandardize(z, mean: float, sd: float):
    return np.asarray(z, dtype=float) * sd + mean
