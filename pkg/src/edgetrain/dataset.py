"""PV power series: CSV ingest, synthetic generation and supervised windowing."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

SAMPLES_PER_DAY = 96
CSV_HEADER = ("timestamp", "power_kw")
NORMALIZATIONS = ("none", "capacity")


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass(frozen=True)
class PowerSeries:
    timestamps: np.ndarray  # datetime64[s]
    power: np.ndarray  # kW, float64
    cap: float
    interval_minutes: int = 15

    def __post_init__(self):
        if not self.cap > 0:
            raise DataError(f"capacity must be positive, got {self.cap}")
        if len(self.timestamps) != len(self.power):
            raise DataError("timestamps and power differ in length")
        if len(self.power) and (self.power.min() < 0 or self.power.max() > self.cap):
            raise DataError(f"power outside [0, {self.cap}]")
        if len(self.timestamps) > 1:
            steps = np.diff(self.timestamps).astype("timedelta64[s]").astype(np.int64)
            if np.any(steps != self.interval_minutes * 60):
                raise DataError("timestamps are not evenly spaced at the sample interval")

    def __len__(self):
        return len(self.power)


def load_csv(path, cap: float) -> PowerSeries:
    """Read a ``timestamp,power_kw`` file; the header line is optional.

    Errors name the physical line number in the file.
    """
    if not cap > 0:
        raise DataError(f"capacity must be positive, got {cap}")
    stamps: list[datetime] = []
    power: list[float] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if lineno == 1 and row[0].strip().lower() == CSV_HEADER[0]:
                continue
            if len(row) != 2:
                raise DataError(f"line {lineno}: expected 2 columns, got {len(row)}")
            try:
                ts = datetime.fromisoformat(row[0].strip())
                p = float(row[1])
            except ValueError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
            if not math.isfinite(p) or p < 0 or p > cap:
                raise DataError(f"line {lineno}: power {p} outside [0, {cap}]")
            if stamps and ts <= stamps[-1]:
                raise DataError(f"line {lineno}: timestamp {ts.isoformat()} is not increasing")
            stamps.append(ts)
            power.append(p)

    interval = 15
    if len(stamps) > 1:
        delta = stamps[1] - stamps[0]
        if delta.total_seconds() % 60:
            raise DataError("sample interval must be a whole number of minutes")
        interval = int(delta.total_seconds() // 60)
        for i in range(2, len(stamps)):
            if stamps[i] - stamps[i - 1] != delta:
                raise DataError(f"row {i + 1}: sample interval differs from the first two rows")
    return PowerSeries(
        timestamps=np.array(stamps, dtype="datetime64[s]"),
        power=np.array(power, dtype=np.float64),
        cap=float(cap),
        interval_minutes=interval,
    )


def write_csv(series: PowerSeries, path) -> int:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for ts, p in zip(series.timestamps.astype(datetime), series.power.tolist()):
            w.writerow([ts.isoformat(timespec="minutes"), repr(p)])
    return len(series)


def clear_sky(hour: np.ndarray, cap: float) -> np.ndarray:
    """Sine arch between 06:00 and 18:00 peaking at ``cap`` at noon."""
    hour = np.asarray(hour, dtype=np.float64)
    arch = cap * np.sin(np.pi * (hour - 6.0) / 12.0)
    return np.where((hour >= 6.0) & (hour <= 18.0), np.maximum(arch, 0.0), 0.0)


def synthesize_pv(
    days: int,
    cap: float = 5.0,
    cloud_noise: float = 0.2,
    seed: int = 0,
    start: str = "2024-01-01T00:00",
) -> PowerSeries:
    """Deterministic 15-minute PV trace: clear-sky arch times a cloud factor.

    The cloud factor per sample is ``clip(1 - |N(0, cloud_noise)|, 0, 1)``.
    """
    if days < 1:
        raise ValueError("days must be >= 1")
    if not 0 <= cloud_noise < 1:
        raise ValueError("cloud_noise must lie in [0, 1)")
    n = SAMPLES_PER_DAY * days
    rng = np.random.default_rng(seed)
    hour = (np.arange(n) % SAMPLES_PER_DAY) * (24.0 / SAMPLES_PER_DAY)
    factor = np.clip(1.0 - np.abs(rng.normal(0.0, cloud_noise, size=n)), 0.0, 1.0)
    power = np.clip(clear_sky(hour, cap) * factor, 0.0, cap)
    t0 = np.datetime64(datetime.fromisoformat(start), "s")
    stamps = t0 + np.arange(n) * np.timedelta64(15 * 60, "s")
    return PowerSeries(timestamps=stamps, power=power, cap=float(cap))


@dataclass(frozen=True)
class WindowedDataset:
    """Supervised pairs: newest-first lag vectors and the value ``h`` steps ahead.

    Row ``i`` uses ``t = i + k - 1``; ``features[i] = P[t], P[t-1], ..., P[t-k+1]``
    and ``targets[i] = P[t+h]``. ``anchor`` holds ``t`` for every row.
    """

    features: np.ndarray
    targets: np.ndarray
    k: int
    h: int
    cap: float
    normalization: str = "none"
    anchor: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    too_short: bool = False

    def __len__(self):
        return len(self.targets)

    @property
    def target_index(self) -> np.ndarray:
        return self.anchor + self.h

    def subset(self, rows) -> "WindowedDataset":
        return WindowedDataset(
            features=self.features[rows],
            targets=self.targets[rows],
            k=self.k,
            h=self.h,
            cap=self.cap,
            normalization=self.normalization,
            anchor=self.anchor[rows],
        )

    def to_kw(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        return values * self.cap if self.normalization == "capacity" else values

    def targets_kw(self) -> np.ndarray:
        return self.to_kw(self.targets)


def make_windows(series: PowerSeries, k: int, h: int, normalization: str = "none") -> WindowedDataset:
    if k < 1 or h < 1:
        raise ValueError("k and h must be >= 1")
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}")
    p = series.power.astype(np.float64)
    if normalization == "capacity":
        p = p / series.cap
    n = len(p) - k - h + 1
    if n <= 0:
        warnings.warn(f"series of length {len(p)} is shorter than k+h={k + h}; no windows")
        return WindowedDataset(
            features=np.zeros((0, k)), targets=np.zeros(0), k=k, h=h, cap=series.cap,
            normalization=normalization, anchor=np.zeros(0, dtype=np.int64), too_short=True,
        )
    lagged = np.lib.stride_tricks.sliding_window_view(p[: n + k - 1], k)[:, ::-1]
    anchor = np.arange(n, dtype=np.int64) + k - 1
    return WindowedDataset(
        features=np.ascontiguousarray(lagged),
        targets=p[anchor + h].copy(),
        k=k,
        h=h,
        cap=series.cap,
        normalization=normalization,
        anchor=anchor,
    )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


def split(ds: WindowedDataset, spec: SplitSpec = SplitSpec()) -> tuple[WindowedDataset, WindowedDataset]:
    """Chronological cut: the first ``floor(n * fraction)`` pairs train."""
    cut = math.floor(len(ds) * spec.train_fraction)
    if cut == 0 or cut == len(ds):
        raise DataError(f"split of {len(ds)} pairs at {spec.train_fraction} leaves one side empty")
    return ds.subset(slice(0, cut)), ds.subset(slice(cut, None))


def timestamps_for(series: PowerSeries, index: np.ndarray) -> np.ndarray:
    return series.timestamps[np.asarray(index)]

