"""Trading agents built from genotypes, and the fitness evaluator used by evolution."""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Sequence

import numpy as np

from .chartizer import rasterize_all
from .market import DEFAULT_PARAMS, MarketParams, evaluate_agent
from .neuralnet import Genotype, Network, signal_from_output
from .pricefeed import PriceSeries
from .substrate import build_substrate, paint_weights

_CHART_CACHE: OrderedDict = OrderedDict()
_CHART_CACHE_SIZE = 64


def cached_charts(closes: np.ndarray, width: int, height: int) -> np.ndarray:
    """``rasterize_all`` memoised on the close values; the result must not be mutated."""
    key = (hashlib.sha1(np.ascontiguousarray(closes, dtype=float).tobytes()).hexdigest(), width, height)
    hit = _CHART_CACHE.get(key)
    if hit is None:
        hit = rasterize_all(closes, width, height)
        hit.setflags(write=False)
        _CHART_CACHE[key] = hit
        if len(_CHART_CACHE) > _CHART_CACHE_SIZE:
            _CHART_CACHE.popitem(last=False)
    return hit


def scale_window(prices: Sequence[float]) -> list[float]:
    """Map a price window onto [-1, 1] by its own extremes; flat windows map to zeros."""
    lo, hi = min(prices), max(prices)
    if hi <= lo:
        return [0.0] * len(prices)
    k = 2.0 / (hi - lo)
    return [(p - lo) * k - 1.0 for p in prices]


class DirectAgent:
    """Price-list agent: sliding-window and internals sensors feed a direct network.

    Window sensors present closes scaled onto [-1, 1] by the window's own
    extremes unless their gene sets ``scaled=False``.
    """

    def __init__(self, genotype: Genotype):
        if genotype.encoding != "direct":
            raise ValueError("DirectAgent needs a direct-encoded genotype")
        self.genotype = genotype
        self.net = Network(genotype)
        self._before, self._after = [], []
        self._internals_at = None
        for s in genotype.sensors:
            if s.kind == "sliding_window":
                side = self._before if self._internals_at is None else self._after
                side.append((s.params["n"], s.params.get("scaled", True)))
            elif s.kind == "internals":
                if self._internals_at is not None:
                    raise ValueError("at most one internals sensor is supported")
                self._internals_at = len(self._before)
            else:
                raise ValueError(f"direct agents cannot use sensor kind {s.kind!r}")
        self.lookback = max([n for n, _ in self._before + self._after], default=1)
        self._rows_before: list = []
        self._rows_after: list = []

    def start(self, closes) -> None:
        closes = np.asarray(closes, dtype=float)
        self._rows_before = _window_rows(closes, self._before)
        self._rows_after = _window_rows(closes, self._after) if self._after else None
        self.net.reset()

    def act(self, t: int, internals) -> int:
        x = self._rows_before[t]
        if self._internals_at is not None:
            x = x + list(internals)
            if self._rows_after is not None:
                x += self._rows_after[t]
        return signal_from_output(self.net.step(x)[0])


def _window_rows(closes: np.ndarray, windows: list[tuple[int, bool]]) -> list:
    """Per-index concatenation of the given window sensors' inputs."""
    n = len(closes)
    parts = []
    for size, scaled in windows:
        w = np.zeros((n, size))
        if n >= size:
            w[size - 1:] = np.lib.stride_tricks.sliding_window_view(closes, size)
        if scaled:
            lo = w.min(axis=1, keepdims=True)
            span = w.max(axis=1, keepdims=True) - lo
            safe = np.where(span > 0, span, 1.0)
            w = np.where(span > 0, 2.0 * (w - lo) / safe - 1.0, 0.0)
        parts.append(w)
    if not parts:
        return [[] for _ in range(n)]
    return np.hstack(parts).tolist()


class SubstrateAgent:
    """Chart agent: a painted Jordan-recurrent substrate reading rasterised windows."""

    def __init__(self, genotype: Genotype):
        if genotype.encoding != "substrate":
            raise ValueError("SubstrateAgent needs a substrate-encoded genotype")
        self.genotype = genotype
        spec = genotype.substrate_spec
        self.substrate = paint_weights(genotype, build_substrate(spec))
        self.lookback = spec.chart_width
        self._contrib = None

    def start(self, closes) -> None:
        spec = self.genotype.substrate_spec
        charts = cached_charts(np.asarray(closes, dtype=float), spec.chart_width, spec.chart_height)
        self._contrib = self.substrate.chart_contributions(charts)
        self.substrate.reset()

    def act(self, t: int, internals) -> int:
        return signal_from_output(self.substrate.forward_precomputed(self._contrib[t], internals))


def make_agent(genotype: Genotype):
    if genotype.encoding == "substrate":
        return SubstrateAgent(genotype)
    return DirectAgent(genotype)


class MarketEvaluator:
    """Genotype -> fitness on one price segment; counts its own invocations."""

    def __init__(self, series: PriceSeries | Sequence[float], params: MarketParams = DEFAULT_PARAMS,
                 history: PriceSeries | Sequence[float] | None = None):
        self.series = series
        self.params = params
        self.history = history
        self.calls = 0

    def __call__(self, genotype: Genotype) -> float:
        self.calls += 1
        return evaluate_agent(make_agent(genotype), self.series, self.params,
                              history=self.history).fitness
