"""Dataset ingest and sample generation.

CSV in (one datetime column plus named value columns), hourly-aggregated
series out, cut 6:2:2 in time order into train/validation/test, then
swept into stride-1 windows that never cross a split boundary.  Calendar
features ride along with every window so the model can consume them as
extra channels.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .model import SeriesWindow

__all__ = [
    "RawSeries",
    "SplitSpec",
    "NoiseSpec",
    "load_csv",
    "save_csv",
    "aggregate_hourly",
    "standardize_series",
    "split_points",
    "windows_of",
    "split_and_window",
    "make_time_features",
    "inject_noise",
    "apply_noise",
    "synthetic_sinusoid",
]

logger = logging.getLogger(__name__)

TRAIN_FRACTION = 0.6
VAL_FRACTION = 0.2


@dataclass
class RawSeries:
    """One value column with its timestamps; NaN marks a missing record."""

    timestamps: list[datetime]
    values: np.ndarray
    target_name: str

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if len(self.timestamps) != len(self.values):
            raise DataError("timestamps and values differ in length")
        for a, b in zip(self.timestamps, self.timestamps[1:]):
            if a >= b:
                raise DataError(f"timestamps not strictly increasing at {b}")

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class SplitSpec:
    """Window lengths for the fixed 6:2:2 split at stride 1."""

    l_h: int
    l_f: int

    def __post_init__(self):
        if self.l_h < 1 or self.l_f < 1:
            raise ConfigError("window lengths must be positive")


@dataclass
class NoiseSpec:
    """Fraction of history points to perturb and the RNG seed to do it with."""

    epsilon: float
    rng_seed: int

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")


def _parse_timestamp(text: str, row: int) -> datetime:
    cleaned = text.strip().replace("Z", "+00:00")
    try:
        ts = datetime.fromisoformat(cleaned)
    except ValueError:
        raise DataError(f"row {row}: cannot parse timestamp {text!r}") from None
    if ts.tzinfo is not None:
        # normalize offset-carrying stamps to naive UTC so ordering is total
        ts = (ts - ts.utcoffset()).replace(tzinfo=None)
    return ts


def load_csv(path, target_column: str, timestamp_column: str = "date") -> RawSeries:
    """Parse one target column; empty cells become NaN (counted as missing).

    Rows are sorted by timestamp; an exact duplicate timestamp is an error
    since it would make the aggregation ambiguous.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        for col in (timestamp_column, target_column):
            if col not in header:
                raise DataError(f"{path} has no column {col!r} (header: {header})")
        t_idx = header.index(timestamp_column)
        v_idx = header.index(target_column)
        rows: list[tuple[datetime, float]] = []
        missing = 0
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) <= max(t_idx, v_idx):
                raise DataError(f"row {row_no}: expected {len(header)} fields, got {len(row)}")
            ts = _parse_timestamp(row[t_idx], row_no)
            cell = row[v_idx].strip()
            if cell in ("", "NA", "NaN", "nan"):
                value = math.nan
                missing += 1
            else:
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"row {row_no}: cannot parse {target_column!r} value {cell!r}"
                    ) from None
            rows.append((ts, value))
    if not rows:
        raise DataError(f"{path} has no data rows")
    rows.sort(key=lambda r: r[0])
    for (a, _), (b, _) in zip(rows, rows[1:]):
        if a == b:
            raise DataError(f"duplicated timestamp {a}")
    if missing:
        logger.info("%s: %d missing %s entries", path, missing, target_column)
    return RawSeries(timestamps=[r[0] for r in rows],
                     values=np.array([r[1] for r in rows]),
                     target_name=target_column)


def save_csv(series: RawSeries, path, timestamp_column: str = "date") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([timestamp_column, series.target_name])
        for ts, v in zip(series.timestamps, series.values):
            writer.writerow([ts.strftime("%Y-%m-%d %H:%M:%S"), repr(float(v))])


def aggregate_hourly(series: RawSeries) -> RawSeries:
    """Mean of all records within each clock hour, on a gapless hourly axis.

    Hours without a usable record are filled by linear interpolation over
    time (clamped at the ends); the fill count is logged.
    """
    sums: dict[datetime, float] = {}
    counts: dict[datetime, int] = {}
    for ts, value in zip(series.timestamps, series.values):
        hour = ts.replace(minute=0, second=0, microsecond=0)
        if not math.isnan(value):
            sums[hour] = sums.get(hour, 0.0) + value
            counts[hour] = counts.get(hour, 0) + 1
        else:
            sums.setdefault(hour, 0.0)
            counts.setdefault(hour, 0)
    first = min(sums)
    last = max(sums)
    n = int((last - first) / timedelta(hours=1)) + 1
    hours = [first + timedelta(hours=i) for i in range(n)]
    values = np.full(n, np.nan)
    for i, hour in enumerate(hours):
        if counts.get(hour, 0):
            values[i] = sums[hour] / counts[hour]
    valid = np.flatnonzero(~np.isnan(values))
    if valid.size == 0:
        raise DataError("no usable records to aggregate")
    gaps = n - valid.size
    if gaps:
        values = np.interp(np.arange(n), valid, values[valid])
        logger.info("interpolated %d empty hours (of %d)", gaps, n)
    return RawSeries(timestamps=hours, values=values, target_name=series.target_name)


def make_time_features(timestamps) -> np.ndarray:
    """Hour-of-day, day-of-week, day-of-month, day-of-year in [-0.5, 0.5].

    Each feature maps its first calendar value (midnight, Monday, day 1,
    Jan 1) to -0.5 and its last to +0.5.
    """
    out = np.empty((len(timestamps), 4))
    for i, ts in enumerate(timestamps):
        out[i, 0] = ts.hour / 23.0 - 0.5
        out[i, 1] = ts.weekday() / 6.0 - 0.5
        out[i, 2] = (ts.day - 1) / 30.0 - 0.5
        out[i, 3] = (ts.timetuple().tm_yday - 1) / 365.0 - 0.5
    return out


def standardize_series(series: RawSeries) -> tuple[RawSeries, float, float]:
    """Z-score the whole series by the training split's mean and std.

    This is the benchmark convention: statistics come from the first 60%
    of the points only (no test leakage), the transform applies
    everywhere, and downstream losses/metrics are reported in these
    scaled units.  Returns (scaled series, mean, std).
    """
    n_train, _, _ = split_points(len(series))
    if n_train < 2:
        raise DataError(f"series too short to standardize ({len(series)} points)")
    head = series.values[:n_train]
    mean = float(head.mean())
    std = float(head.std())
    if std == 0.0:
        raise DataError("training split is constant; cannot standardize")
    scaled = (series.values - mean) / std
    return RawSeries(timestamps=list(series.timestamps), values=scaled,
                     target_name=series.target_name), mean, std


def split_points(n: int) -> tuple[int, int, int]:
    """Partition sizes of the fixed 6:2:2 split (test takes the remainder)."""
    n_train = int(n * TRAIN_FRACTION)
    n_val = int(n * VAL_FRACTION)
    return n_train, n_val, n - n_train - n_val


def windows_of(values, l_h: int, l_f: int, feats=None, times=None,
               ) -> list[SeriesWindow]:
    """All stride-1 windows of one split: count = n - l_h - l_f + 1."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if feats is None:
        feats = np.zeros((n, 0))
    count = n - l_h - l_f + 1
    out = []
    for i in range(count):
        out.append(SeriesWindow(
            x_1d=values[i:i + l_h],
            tf_enc=feats[i:i + l_h],
            y_true=values[i + l_h:i + l_h + l_f],
            y_times=None if times is None else times[i + l_h:i + l_h + l_f],
        ))
    return out


def split_and_window(series: RawSeries, spec: SplitSpec,
                     ) -> tuple[list[SeriesWindow], list[SeriesWindow], list[SeriesWindow]]:
    """Contiguous 60/20/20 partition, then stride-1 windows inside each part.

    Windows never straddle a boundary, so every test timestamp is strictly
    after every train timestamp.
    """
    n = len(series)
    n_train, n_val, _ = split_points(n)
    bounds = [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, n)]
    need = spec.l_h + spec.l_f
    feats = make_time_features(series.timestamps)
    splits = []
    for name, (lo, hi) in zip(("train", "validation", "test"), bounds):
        if hi - lo < need:
            raise ConfigError(
                f"{name} split has {hi - lo} points, needs at least {need} "
                f"for l_h={spec.l_h}, l_f={spec.l_f}")
        splits.append(windows_of(series.values[lo:hi], spec.l_h, spec.l_f,
                                 feats[lo:hi], series.timestamps[lo:hi]))
    return splits[0], splits[1], splits[2]


def inject_noise(window: SeriesWindow, spec: NoiseSpec) -> SeriesWindow:
    """Perturb floor(epsilon * L_h) distinct history points.

    Each chosen point x gets an additive draw from Uniform(-2|x|, +2|x|),
    so a zero stays a zero and a positive value lands in [-x, 3x].  The
    targets and features are untouched.
    """
    l_h = window.l_h
    k = int(spec.epsilon * l_h)
    if k == 0:
        return window
    rng = np.random.default_rng(spec.rng_seed)
    idx = rng.choice(l_h, size=k, replace=False)
    x = window.x_1d.copy()
    span = 2.0 * np.abs(x[idx])
    x[idx] += rng.uniform(-span, span)
    return SeriesWindow(x_1d=x, tf_enc=window.tf_enc, y_true=window.y_true,
                        y_times=window.y_times)


def apply_noise(windows, spec: NoiseSpec) -> list[SeriesWindow]:
    """Noise every window with a per-window stream seeded seed + index."""
    if spec.epsilon == 0.0:
        return list(windows)
    return [inject_noise(w, NoiseSpec(spec.epsilon, spec.rng_seed + i))
            for i, w in enumerate(windows)]


def synthetic_sinusoid(n_hours: int, period: float = 24.0, amplitude: float = 1.0,
                       mean: float = 0.0, phase_drift: float = 0.0,
                       noise: float = 0.0, seed: int = 0,
                       start: str = "2020-01-01 00:00:00") -> RawSeries:
    """Hourly sinusoid benchmark series.

    ``phase_drift`` (radians per hour) slides the within-period pattern
    over time, which separates models that track the period axis from
    models that only summarize whole periods.
    """
    if n_hours < 1:
        raise ContractError("n_hours must be positive")
    t0 = datetime.fromisoformat(start)
    t = np.arange(n_hours, dtype=np.float64)
    values = mean + amplitude * np.sin(2.0 * np.pi * t / period + phase_drift * t)
    if noise > 0.0:
        values = values + noise * np.random.default_rng(seed).standard_normal(n_hours)
    stamps = [t0 + timedelta(hours=int(i)) for i in range(n_hours)]
    return RawSeries(timestamps=stamps, values=values, target_name="value")
