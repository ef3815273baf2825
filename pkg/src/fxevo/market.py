"""Forex account replay, fitness evaluation and the Buy & Hold / Max Possible baselines.

Spread model: buyers pay ``quote + spread``, sellers receive ``quote``.
Every position is opened with the same notional (``margin * leverage``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .pricefeed import PriceSeries

FLAT, LONG, SHORT = 0, 1, -1


@dataclass(frozen=True)
class MarketParams:
    spread: float = 0.00015
    start_balance: float = 300.0
    margin: float = 100.0
    leverage: float = 50.0
    ruin_floor: float = 100.0

    def __post_init__(self):
        for name in ("spread", "start_balance", "margin", "leverage", "ruin_floor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def notional(self) -> float:
        return self.margin * self.leverage


DEFAULT_PARAMS = MarketParams()


@dataclass(frozen=True, slots=True)
class TradeAccount:
    balance: float
    position: int = FLAT
    entry_price: float = 0.0
    units: float = 0.0

    @classmethod
    def fresh(cls, params: MarketParams = DEFAULT_PARAMS) -> "TradeAccount":
        return cls(params.start_balance)


def internals(acct: TradeAccount, price: float) -> tuple[float, float, float]:
    """``(Position, Entry, PercentageChange)``; the percentage is positive when the position is in profit."""
    if acct.position == FLAT:
        return (0.0, 0.0, 0.0)
    pct = 100.0 * acct.position * (price - acct.entry_price) / acct.entry_price
    return (float(acct.position), acct.entry_price, pct)


def position_pnl(acct: TradeAccount, price: float, params: MarketParams = DEFAULT_PARAMS) -> float:
    """Profit from closing the open position at ``price``."""
    if acct.position == LONG:
        return acct.units * (price - (acct.entry_price + params.spread))
    if acct.position == SHORT:
        return acct.units * (acct.entry_price - (price + params.spread))
    return 0.0


def _open(balance: float, direction: int, price: float, params: MarketParams) -> TradeAccount:
    if direction == LONG:
        units = params.notional / (price + params.spread)
    else:
        units = params.notional / price
    return TradeAccount(balance, direction, price, units)


def step(acct: TradeAccount, signal: int, price: float,
         params: MarketParams = DEFAULT_PARAMS) -> TradeAccount:
    if signal not in (SHORT, FLAT, LONG):
        raise ValueError(f"trade signal must be -1, 0 or 1, got {signal!r}")
    if signal == acct.position:
        return acct
    balance = acct.balance + position_pnl(acct, price, params)
    if signal == FLAT:
        return TradeAccount(balance)
    return _open(balance, signal, price, params)


def networth(acct: TradeAccount, price: float, params: MarketParams = DEFAULT_PARAMS) -> float:
    return acct.balance + position_pnl(acct, price, params)


class Agent(Protocol):
    """Anything that trades a replayed close series.

    ``lookback`` is the number of closes (ending at the current one) the
    agent needs. ``start`` receives the full close context and must reset
    any recurrent state; ``act`` returns a trade signal for index ``t``.
    """

    lookback: int

    def start(self, closes: np.ndarray) -> None: ...

    def act(self, t: int, internals: tuple[float, float, float]) -> int: ...


@dataclass
class EvalResult:
    fitness: float
    steps_survived: int
    trade_count: int
    ruined: bool
    log: list[tuple] | None = field(default=None, repr=False)


def _as_closes(series: PriceSeries | Sequence[float]) -> np.ndarray:
    if isinstance(series, PriceSeries):
        return series.as_array()
    return np.asarray(series, dtype=float)


def evaluate_agent(agent: Agent, series: PriceSeries | Sequence[float],
                   params: MarketParams = DEFAULT_PARAMS, *,
                   history: PriceSeries | Sequence[float] | None = None,
                   log: bool = False) -> EvalResult:
    """Replay ``series`` once; fitness is the networth after force-closing at the end.

    ``history`` supplies earlier closes so the agent can trade from the
    first point of ``series``; without it trading starts at the first index
    with ``lookback`` points of history.
    """
    closes = _as_closes(series)
    lookback = max(1, int(getattr(agent, "lookback", 1)))
    if history is not None:
        past = _as_closes(history)
        if len(past) < lookback - 1:
            raise ValueError(f"history too short: agent needs {lookback - 1} earlier closes")
        tail = past[len(past) - (lookback - 1):]
        context = np.concatenate([tail, closes])
        first = len(tail)
    else:
        context = closes
        first = lookback - 1
    if first >= len(context):
        raise ValueError(f"series of length {len(closes)} too short for lookback {lookback}")
    agent.start(context)
    acct = TradeAccount.fresh(params)
    floor = params.ruin_floor
    trades = steps = 0
    ruined = False
    rows: list[tuple] | None = [] if log else None
    prices = context.tolist()
    price = prices[first]
    for t in range(first, len(prices)):
        price = prices[t]
        signal = agent.act(t, internals(acct, price))
        before = acct.position
        acct = step(acct, signal, price, params)
        if acct.position != before and acct.position != FLAT:
            trades += 1
        steps += 1
        worth = networth(acct, price, params)
        if rows is not None:
            rows.append((t - first, signal, _action(before, acct.position), price, acct.balance, worth))
        if worth < floor:
            ruined = True
            break
    acct = step(acct, FLAT, price, params)
    return EvalResult(acct.balance, steps, trades, ruined, rows)


def _action(before: int, after: int) -> str:
    if before == after:
        return "hold"
    names = {LONG: "long", SHORT: "short"}
    if after == FLAT:
        return "close"
    if before == FLAT:
        return f"open_{names[after]}"
    return f"reverse_{names[after]}"


def write_trade_log(result: EvalResult, path: str | Path) -> None:
    if result.log is None:
        raise ValueError("evaluation was run without log=True")
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write("step\tsignal\taction\tprice\tbalance\tnetworth\n")
        for s, sig, action, price, bal, worth in result.log:
            fh.write(f"{s}\t{sig}\t{action}\t{price!r}\t{bal:.6f}\t{worth:.6f}\n")


def buy_and_hold(series: PriceSeries | Sequence[float], params: MarketParams = DEFAULT_PARAMS) -> float:
    closes = _as_closes(series)
    if len(closes) < 2:
        raise ValueError("buy and hold needs at least 2 prices")
    acct = step(TradeAccount.fresh(params), LONG, float(closes[0]), params)
    return step(acct, FLAT, float(closes[-1]), params).balance


def _trade_pnl(prices: np.ndarray, i: int, direction: int, params: MarketParams) -> np.ndarray:
    """Close-at-``j`` profit for ``j >= i`` of a position opened at ``prices[i]``."""
    p = prices[i]
    later = prices[i:]
    if direction == LONG:
        units = params.notional / (p + params.spread)
        return units * (later - (p + params.spread))
    units = params.notional / p
    return units * (p - (later + params.spread))


def max_possible(series: PriceSeries | Sequence[float], params: MarketParams = DEFAULT_PARAMS,
                 greedy: bool = False) -> float:
    """Best final networth over every signal sequence, with perfect lookahead.

    Dynamic programme over trade boundaries. ``closed[d][j]`` is the best
    balance right after a direction-``d`` position is closed at step ``j``;
    ``flat[j]`` is the best balance when flat after step ``j``. A position in
    direction ``d`` can open at step ``i`` from ``flat[i-1]`` or by reversing
    a ``-d`` position closed at ``i``; a same-direction reopen on one step is
    impossible since a repeated signal is a hold. Trades whose mark-to-market
    would breach the ruin floor are excluded since the replay would stop them.
    ``greedy=True`` instead trades each monotone leg whose profit beats the
    spread.
    """
    prices = _as_closes(series)
    n = len(prices)
    if n < 2:
        raise ValueError("max possible needs at least 2 prices")
    if greedy:
        return _greedy_legs(prices, params)
    floor = params.ruin_floor
    closed = {LONG: np.full(n, -np.inf), SHORT: np.full(n, -np.inf)}
    before = params.start_balance  # flat[i-1]
    for i in range(n - 1):
        for direction in (LONG, SHORT):
            base = max(before, closed[-direction][i])
            pnl = _trade_pnl(prices, i, direction, params)
            ok = base + np.minimum.accumulate(pnl) >= floor
            cand = np.where(ok, base + pnl, -np.inf)[1:]
            np.maximum(closed[direction][i + 1:], cand, out=closed[direction][i + 1:])
        before = max(before, closed[LONG][i], closed[SHORT][i])
    return float(max(before, closed[LONG][n - 1], closed[SHORT][n - 1]))


def _greedy_legs(prices: np.ndarray, params: MarketParams) -> float:
    balance = params.start_balance
    n = len(prices)
    i = 0
    while i < n - 1:
        j = i + 1
        while j < n - 1 and prices[j] == prices[i]:
            j += 1
        up = prices[j] > prices[i]
        while j < n - 1 and ((prices[j + 1] >= prices[j]) if up else (prices[j + 1] <= prices[j])):
            j += 1
        direction = LONG if up else SHORT
        gain = float(_trade_pnl(prices[i:j + 1], 0, direction, params)[-1])
        if gain > 0:
            balance += gain
        i = j
    return balance
