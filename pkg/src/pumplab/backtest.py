"""Vote-proportional trading strategy, insider-profit estimator and
pump-volume descriptive analytics.

Position arithmetic is exact decimal: a candidate whose vote clears the
threshold is bought for baseline_qty * vote BTC at the open one hour before
the announcement; a pumped position realizes invested * pump_gain * haircut,
an unpumped one realizes zero.  The headline report excludes transaction
fees; the fee drag at fee_rate per side is quantified separately so the
"fees are negligible" claim is checkable rather than assumed.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Iterable, Optional, Sequence, Union

from .errors import DataError
from .events import PumpEvent
from .marketdata import (
    HOUR,
    Aggressor,
    Candle,
    CandleStore,
    Tick,
    fmt_decimal,
    format_iso,
)

logger = logging.getLogger(__name__)

Numberish = Union[Decimal, float, int, str]

DEPTH_WINDOW = 15 * 60  # seconds of tick flow counted per event


def _dec(value: Numberish) -> Decimal:
    if isinstance(value, Decimal):
        return value
    # str() of a float is its shortest round-trip text, so 0.37 -> Decimal("0.37")
    return Decimal(str(value))


@dataclass
class StrategyConfig:
    threshold: float = 0.3
    baseline_qty: Decimal = Decimal("0.37")   # BTC per unit vote (the sizing constant)
    gain_haircut: Decimal = Decimal("0.5")    # realized fraction of the pump gain
    fee_rate: Decimal = Decimal("0.002")      # per side

    def __post_init__(self):
        self.baseline_qty = _dec(self.baseline_qty)
        self.gain_haircut = _dec(self.gain_haircut)
        self.fee_rate = _dec(self.fee_rate)
        if not 0 <= self.threshold <= 1:
            raise ValueError("threshold must be in [0, 1]")
        if not 0 < self.gain_haircut <= 1:
            raise ValueError("gain_haircut must be in (0, 1]")
        if not 0 <= self.fee_rate < 1:
            raise ValueError("fee_rate must be in [0, 1)")


@dataclass
class Position:
    coin: str
    event_time: int
    weight: Decimal          # the model vote
    invested: Decimal        # baseline_qty * weight, BTC
    pump_gain: Decimal       # (high - open) / open of the pump-hour candle
    assumed_gain: Decimal    # pump_gain * haircut
    gained: Decimal          # invested * assumed_gain, BTC
    was_pumped: bool


@dataclass
class BacktestReport:
    positions: list[Position]
    total_invested: Decimal
    total_gained: Decimal
    return_ratio: Optional[Decimal]   # None when nothing was traded
    fee_drag: Decimal                 # BTC lost to fees at fee_rate per side
    net_return_ratio: Optional[Decimal]
    skipped_unpriceable: list[tuple[str, str]] = field(default_factory=list)

    @property
    def no_trades(self) -> bool:
        return not self.positions


def pump_gain(candle: Candle) -> Decimal:
    """Price increase through the pump: (high - open) / open."""
    if candle.open <= 0:
        raise DataError(f"pump gain undefined for open={candle.open}")
    return (candle.high - candle.open) / candle.open


def post_pump_drop(candle: Candle) -> Decimal:
    """Price drop after the pump: (close - high) / close; always <= 0."""
    if candle.close <= 0:
        raise DataError(f"post-pump drop undefined for close={candle.close}")
    return (candle.close - candle.high) / candle.close


def run_strategy(voted_events: Sequence[tuple[PumpEvent, dict[str, Numberish]]],
                 candles: CandleStore,
                 cfg: StrategyConfig) -> BacktestReport:
    """Open one position per candidate whose vote clears cfg.threshold.

    A candidate above the threshold whose pump-hour candle is missing cannot
    be priced; it is excluded with a warning and listed in the report.
    """
    positions: list[Position] = []
    skipped: list[tuple[str, str]] = []
    for event, votes in sorted(voted_events, key=lambda p: (p[0].event_time, p[0].coin)):
        for coin in sorted(votes):
            vote = _dec(votes[coin])
            if float(vote) < cfg.threshold:
                continue
            series = candles.get(coin, event.exchange)
            candle = series.at(event.pump_hour) if series is not None else None
            if candle is None:
                skipped.append((format_iso(event.event_time), coin))
                logger.warning("unpriceable position skipped: %s at %s (no pump-hour candle)",
                               coin, format_iso(event.event_time))
                continue
            was_pumped = coin == event.coin
            pg = pump_gain(candle) if was_pumped else Decimal(0)
            invested = cfg.baseline_qty * vote
            ag = pg * cfg.gain_haircut
            positions.append(Position(
                coin=coin,
                event_time=event.event_time,
                weight=vote,
                invested=invested,
                pump_gain=pg,
                assumed_gain=ag,
                gained=invested * ag,
                was_pumped=was_pumped,
            ))
    total_invested = sum((p.invested for p in positions), Decimal(0))
    total_gained = sum((p.gained for p in positions), Decimal(0))
    # fees on the buy notional and on the (elevated) sell notional
    fee_drag = cfg.fee_rate * (2 * total_invested + total_gained)
    if total_invested > 0:
        return_ratio = total_gained / total_invested
        net_return = (total_gained - fee_drag) / total_invested
    else:
        return_ratio = None
        net_return = None
    return BacktestReport(positions, total_invested, total_gained,
                          return_ratio, fee_drag, net_return, skipped)


# --------------------------------------------------------------------------
# tick analytics

@dataclass
class AdminProfitEstimate:
    profit_btc: Decimal
    cost_basis_btc: Decimal
    return_ratio: Optional[Decimal]
    reference_price: Decimal
    peak_time: float


def estimate_admin_profit(ticks: Sequence[Tick], pump_time: float) -> AdminProfitEstimate:
    """Estimate the organizer's take from one pump's tick stream.

    The organizer is assumed to have bought at the last price strictly before
    the pump (or the first post-pump price when no earlier trade exists) and
    to be lifted by buy-aggressor trades until the price peak.
    """
    post = [t for t in ticks if t.timestamp > pump_time]
    if not post:
        raise DataError("no ticks after the pump time")
    pre = [t for t in ticks if t.timestamp < pump_time]
    p0 = pre[-1].price if pre else post[0].price

    peak_price = max(t.price for t in post)
    peak_time = min(t.timestamp for t in post if t.price == peak_price)

    profit = Decimal(0)
    cost = Decimal(0)
    for t in post:
        if t.timestamp > peak_time:
            break
        if t.aggressor is Aggressor.BUY:
            profit += t.quantity * (t.price - p0)
            cost += t.quantity * p0
    ratio = profit / cost if cost > 0 else None
    return AdminProfitEstimate(profit, cost, ratio, p0, peak_time)


@dataclass
class VolumeGap:
    buy_btc: Decimal
    sell_btc: Decimal
    buy_coin: Decimal
    sell_coin: Decimal


def buy_sell_volume_gap(ticks: Iterable[Tick],
                        window: tuple[float, float]) -> VolumeGap:
    """Notional and quantity totals by aggressor side within [start, end)."""
    start, end = window
    if end < start:
        raise ValueError("window end precedes start")
    gap = VolumeGap(Decimal(0), Decimal(0), Decimal(0), Decimal(0))
    for t in ticks:
        if not start <= t.timestamp < end:
            continue
        notional = t.quantity * t.price
        if t.aggressor is Aggressor.BUY:
            gap.buy_btc += notional
            gap.buy_coin += t.quantity
        else:
            gap.sell_btc += notional
            gap.sell_coin += t.quantity
    return gap


@dataclass
class PumpVolumeAggregate:
    per_exchange: dict[str, tuple[Decimal, Decimal]]  # exchange -> (pre, during)
    pre_pump_btc: Decimal
    pump_btc: Decimal
    skipped_events: int


def aggregate_pump_volume(events: Sequence[PumpEvent],
                          candles: CandleStore) -> PumpVolumeAggregate:
    """BTC volume in the 3 hours before vs the 3 hours from the pump hour."""
    per_exchange: dict[str, list[Decimal]] = {}
    skipped = 0
    for event in events:
        series = candles.get(event.coin, event.exchange)
        if series is None:
            skipped += 1
            continue
        ph = event.pump_hour
        pre = sum((c.volumeto for c in series.candles
                   if ph - 3 * HOUR <= c.timestamp < ph), Decimal(0))
        during = sum((c.volumeto for c in series.candles
                      if ph <= c.timestamp < ph + 3 * HOUR), Decimal(0))
        bucket = per_exchange.setdefault(event.exchange, [Decimal(0), Decimal(0)])
        bucket[0] += pre
        bucket[1] += during
    totals_pre = sum((v[0] for v in per_exchange.values()), Decimal(0))
    totals_during = sum((v[1] for v in per_exchange.values()), Decimal(0))
    return PumpVolumeAggregate(
        per_exchange={k: (v[0], v[1]) for k, v in sorted(per_exchange.items())},
        pre_pump_btc=totals_pre,
        pump_btc=totals_during,
        skipped_events=skipped,
    )


def estimate_market_depth(events: Sequence[PumpEvent],
                          ticks: dict[tuple[str, str], list[Tick]]) -> Decimal:
    """Mean buy-side (uptick) BTC flow per event over the first 15 minutes."""
    totals = []
    for event in events:
        stream = ticks.get((event.coin, event.exchange))
        if stream is None:
            continue
        start = float(event.event_time)
        flow = sum((t.quantity * t.price for t in stream
                    if start <= t.timestamp < start + DEPTH_WINDOW
                    and t.aggressor is Aggressor.BUY), Decimal(0))
        totals.append(flow)
    if not totals:
        raise DataError("no events with tick data")
    return sum(totals, Decimal(0)) / len(totals)


# --------------------------------------------------------------------------
# report files

BACKTEST_HEADER = "coin,date,pumped,weight,invested,pump_gain,assumed_gain,gained"


def serialize_backtest(report: BacktestReport) -> str:
    lines = [BACKTEST_HEADER]
    for p in report.positions:
        date = format_iso(p.event_time)[:10]
        lines.append(",".join([
            p.coin, date, "true" if p.was_pumped else "false",
            fmt_decimal(p.weight), fmt_decimal(p.invested),
            fmt_decimal(p.pump_gain), fmt_decimal(p.assumed_gain),
            fmt_decimal(p.gained),
        ]))
    lines.append(",".join([
        "TOTAL", "", "", "",
        fmt_decimal(report.total_invested), "", "",
        fmt_decimal(report.total_gained),
    ]))
    return "\n".join(lines) + "\n"


def backtest_summary(report: BacktestReport) -> str:
    summary = {
        "positions": len(report.positions),
        "no_trades": report.no_trades,
        "total_invested_btc": fmt_decimal(report.total_invested),
        "total_gained_btc": fmt_decimal(report.total_gained),
        "return_ratio": None if report.return_ratio is None else fmt_decimal(report.return_ratio),
        "fee_drag_btc": fmt_decimal(report.fee_drag),
        "net_return_ratio": None if report.net_return_ratio is None else fmt_decimal(report.net_return_ratio),
        "skipped_unpriceable": [list(s) for s in report.skipped_unpriceable],
    }
    return json.dumps(summary, indent=2) + "\n"
