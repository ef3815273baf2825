"""Closing-price series: loading, validation, splitting, windowing and synthesis."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_INTERVAL = 900  # 15-minute bars


class DataError(ValueError):
    """Raised for malformed or inconsistent price data."""


@dataclass(frozen=True)
class PricePoint:
    timestamp: int
    close: float


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Ordered closing prices sampled at a fixed interval.

    Loaded and synthesised series have at least 2 points; split segments
    may be shorter.

    ``gap_tolerant`` relaxes the equal-spacing check so that consecutive
    deltas only need to be positive multiples of ``interval`` (weekend gaps).
    """

    timestamps: tuple[int, ...]
    closes: tuple[float, ...]
    interval: int
    gap_tolerant: bool = False

    def __post_init__(self):
        if len(self.timestamps) != len(self.closes):
            raise DataError("timestamps and closes differ in length")
        if not self.closes:
            raise DataError("a price series needs at least 1 point")
        if self.interval <= 0:
            raise DataError(f"interval must be positive, got {self.interval}")
        for i, c in enumerate(self.closes):
            if not (c > 0 and math.isfinite(c)):
                raise DataError(f"non-positive price {c!r} at index {i}")
        _check_spacing(self.timestamps, self.interval, self.gap_tolerant)

    @classmethod
    def from_points(cls, points: Iterable[PricePoint], interval: int | None = None,
                    gap_tolerant: bool = False) -> "PriceSeries":
        points = list(points)
        ts = tuple(int(p.timestamp) for p in points)
        if interval is None:
            interval = ts[1] - ts[0] if len(ts) >= 2 else DEFAULT_INTERVAL
        return cls(ts, tuple(float(p.close) for p in points), interval, gap_tolerant)

    @classmethod
    def from_closes(cls, closes: Sequence[float], interval: int = DEFAULT_INTERVAL,
                    start: int = 0) -> "PriceSeries":
        closes = tuple(float(c) for c in closes)
        if len(closes) < 2:
            raise DataError("a price series needs at least 2 points")
        ts = tuple(start + i * interval for i in range(len(closes)))
        return cls(ts, closes, interval)

    @property
    def points(self) -> list[PricePoint]:
        return [PricePoint(t, c) for t, c in zip(self.timestamps, self.closes)]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.closes, dtype=float)

    def __len__(self) -> int:
        return len(self.closes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PriceSeries):
            return NotImplemented
        return (self.timestamps == other.timestamps and self.closes == other.closes
                and self.interval == other.interval)

    def __hash__(self) -> int:
        return hash((self.timestamps, self.closes, self.interval))

    def slice(self, start: int, stop: int) -> "PriceSeries":
        return PriceSeries(self.timestamps[start:stop], self.closes[start:stop],
                           self.interval, self.gap_tolerant)


def _check_spacing(timestamps: Sequence[int], interval: int, gap_tolerant: bool,
                   line_offset: int | None = None) -> None:
    for i in range(1, len(timestamps)):
        delta = timestamps[i] - timestamps[i - 1]
        where = f"line {i + line_offset}" if line_offset is not None else f"index {i}"
        if delta <= 0:
            raise DataError(f"non-monotonic timestamp at {where}")
        if gap_tolerant:
            if delta % interval:
                raise DataError(f"timestamp gap {delta} is not a multiple of {interval} at {where}")
        elif delta != interval:
            raise DataError(f"timestamp delta {delta} != interval {interval} at {where}")


def load_csv(path: str | Path, gap_tolerant: bool = False) -> PriceSeries:
    """Read a ``timestamp,close`` CSV with a one-line header.

    Errors name the offending 1-based file line (the header is line 1).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    timestamps: list[int] = []
    closes: list[float] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        if [h.strip().lower() for h in header] != ["timestamp", "close"]:
            raise DataError(f"{path}: expected header 'timestamp,close', got {','.join(header)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 2:
                raise DataError(f"{path}: malformed row at line {lineno}: expected 2 fields")
            try:
                ts = int(row[0].strip())
                close = float(row[1].strip())
            except ValueError:
                raise DataError(f"{path}: malformed row at line {lineno}: {','.join(row)!r}") from None
            if not (close > 0 and math.isfinite(close)):
                raise DataError(f"{path}: non-positive price {close!r} at line {lineno}")
            if timestamps and ts <= timestamps[-1]:
                raise DataError(f"{path}: non-monotonic timestamp at line {lineno}")
            timestamps.append(ts)
            closes.append(close)
    if len(closes) < 2:
        raise DataError(f"{path}: need at least 2 price rows, got {len(closes)}")
    interval = timestamps[1] - timestamps[0]
    if gap_tolerant:
        interval = min(b - a for a, b in zip(timestamps, timestamps[1:]))
    _check_spacing(timestamps, interval, gap_tolerant, line_offset=2)
    return PriceSeries(tuple(timestamps), tuple(closes), interval, gap_tolerant)


def write_csv(series: PriceSeries, path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("timestamp,close\n")
        for ts, close in zip(series.timestamps, series.closes):
            fh.write(f"{ts},{close!r}\n")


def split(series: PriceSeries, train_len: int) -> tuple[PriceSeries, PriceSeries]:
    if not 0 < train_len < len(series):
        raise ValueError(f"train_len must be in (0, {len(series)}), got {train_len}")
    return series.slice(0, train_len), series.slice(train_len, len(series))


def window(series: PriceSeries | Sequence[float], end_index: int, n: int) -> list[float]:
    """Closes at ``end_index - n + 1 .. end_index``, oldest first."""
    closes = series.closes if isinstance(series, PriceSeries) else series
    if n < 1:
        raise ValueError(f"window length must be >= 1, got {n}")
    if end_index < n - 1:
        raise ValueError(f"insufficient history: need {n} points ending at {end_index}")
    if end_index >= len(closes):
        raise IndexError(f"end_index {end_index} beyond series of length {len(closes)}")
    return list(closes[end_index - n + 1:end_index + 1])


def synth_series(kind: str, length: int, seed: int = 0, *, base: float = 1.3,
                 step: float = 0.0001, amp: float = 0.01, period: float = 20.0,
                 phase: float = 0.0, sigma: float = 0.0005,
                 interval: int = DEFAULT_INTERVAL) -> PriceSeries:
    """Deterministic synthetic closes.

    ``constant``: ``base``; ``trend``: ``base + step*t``;
    ``sine``: ``base + amp*sin(2*pi*t/period + phase)``;
    ``random_walk``: geometric walk with log-step std ``sigma`` from ``seed``.
    """
    if length < 2:
        raise ValueError(f"length must be >= 2, got {length}")
    if base <= 0:
        raise ValueError(f"base price must be positive, got {base}")
    t = np.arange(length, dtype=float)
    if kind == "constant":
        closes = np.full(length, base)
    elif kind == "trend":
        closes = base + step * t
        if closes.min() <= 0:
            raise ValueError("trend reaches a non-positive price; shorten it or reduce the step")
    elif kind == "sine":
        if abs(amp) >= base:
            raise ValueError(f"amplitude {amp} must be smaller than base price {base}")
        if period <= 0:
            raise ValueError(f"period must be positive, got {period}")
        closes = base + amp * np.sin(2 * np.pi * t / period + phase)
    elif kind == "random_walk":
        if sigma < 0:
            raise ValueError(f"sigma must be non-negative, got {sigma}")
        rng = np.random.default_rng(seed)
        steps = rng.normal(0.0, sigma, size=length - 1)
        closes = base * np.exp(np.concatenate([[0.0], np.cumsum(steps)]))
    else:
        raise ValueError(f"unknown series kind {kind!r}")
    return PriceSeries.from_closes(closes.tolist(), interval=interval)
