"""Render price windows into ternary close-only candlestick rasters.

Cell values: ``1`` close marker, ``0`` body between consecutive closes,
``-1`` background. Rows are price buckets over the window's own min/max.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MARKER, BODY, BACKGROUND = 1, 0, -1
_BOUNDARY_TOL = 1e-9
_GLYPHS = {MARKER: "#", BODY: "+", BACKGROUND: "."}


@dataclass(frozen=True, eq=False)
class ChartRaster:
    """``cells[c, r]`` for column ``c`` (time, oldest first) and row ``r`` (price, low first)."""

    cells: np.ndarray
    min_price: float
    max_price: float

    @property
    def width(self) -> int:
        return self.cells.shape[0]

    @property
    def height(self) -> int:
        return self.cells.shape[1]

    def to_text(self) -> str:
        """Debug grid, top row = highest bucket."""
        lines = []
        for r in range(self.height - 1, -1, -1):
            lines.append("".join(_GLYPHS[int(v)] for v in self.cells[:, r]))
        return "\n".join(lines)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ChartRaster):
            return NotImplemented
        return (np.array_equal(self.cells, other.cells) and self.min_price == other.min_price
                and self.max_price == other.max_price)


def price_to_row(price: float, min_price: float, max_price: float, v: int) -> int:
    if v < 1:
        raise ValueError(f"vertical resolution must be >= 1, got {v}")
    if not min_price <= price <= max_price:
        raise ValueError(f"price {price} outside [{min_price}, {max_price}]")
    span = max_price - min_price
    if span <= 0:
        return 0
    # (price - min) * v / span rather than / bucket: avoids 0.2499/0.025 style rounding drift
    pos = (price - min_price) * v / span
    # a price on a bucket boundary belongs to the upper bucket even when rounding lands just below it
    nearest = round(pos)
    if abs(pos - nearest) <= _BOUNDARY_TOL:
        pos = nearest
    row = math.floor(pos)
    return min(row, v - 1)


def rasterize(prices: Sequence[float], v: int) -> ChartRaster:
    prices = [float(p) for p in prices]
    if not prices:
        raise ValueError("cannot rasterize an empty window")
    if v < 1:
        raise ValueError(f"vertical resolution must be >= 1, got {v}")
    lo, hi = min(prices), max(prices)
    rows = [price_to_row(p, lo, hi, v) for p in prices]
    cells = np.full((len(prices), v), BACKGROUND, dtype=np.int8)
    for c, r in enumerate(rows):
        if c:
            prev = rows[c - 1]
            a, b = (prev, r) if prev < r else (r, prev)
            cells[c, a + 1:b] = BODY
        cells[c, r] = MARKER
    return ChartRaster(cells, lo, hi)


def axis_coords(n: int) -> np.ndarray:
    """Evenly spaced coordinates over [-1, 1]; a single element sits at 0."""
    if n == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(n) / (n - 1)


def flatten(raster: ChartRaster) -> tuple[np.ndarray, np.ndarray]:
    """Row-major values and their ``(x, y)`` coordinates.

    The column index varies fastest, so a 2x2 raster yields coordinates
    ``(-1,-1), (1,-1), (-1,1), (1,1)``.
    """
    xs = axis_coords(raster.width)
    ys = axis_coords(raster.height)
    values = raster.cells.T.reshape(-1).astype(float)
    gx, gy = np.meshgrid(xs, ys)
    coords = np.column_stack([gx.reshape(-1), gy.reshape(-1)])
    return values, coords


def rasterize_all(closes: Sequence[float], width: int, v: int) -> np.ndarray:
    """Flattened rasters for every full window of ``closes``.

    Row ``t`` holds the flattened raster of the window ending at ``t``;
    rows ``t < width - 1`` are left at background since they lack history.
    """
    closes = np.asarray(closes, dtype=float)
    n = len(closes)
    out = np.full((n, width * v), float(BACKGROUND))
    for t in range(width - 1, n):
        out[t] = flatten(rasterize(closes[t - width + 1:t + 1], v))[0]
    return out
