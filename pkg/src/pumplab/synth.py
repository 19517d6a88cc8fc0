"""Deterministic synthetic market scenarios with planted pumps.

Baseline prices follow a geometric random walk; each planted event injects a
configurable insider-leak log-return into the hour before the announcement,
replaces the pump-hour candle with one aggregated from a generated tick
stream (buy-heavy up to the peak, sell-heavy after), and emits one to three
chained announcements.  All randomness flows from counter-based streams
keyed by (seed, purpose, index), so a rerun with the same seed reproduces
every file byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError
from .events import Announcement, serialize_announcements
from .marketdata import (
    HOUR,
    Aggressor,
    Candle,
    CandleSeries,
    CandleStore,
    CoinMeta,
    Tick,
    format_iso,
    parse_iso,
    serialize_candles,
    serialize_coin_meta,
    serialize_ticks,
)

_MASK64 = (1 << 64) - 1

_CHANNEL_POOL = (
    "alpha_signals", "moon_crew", "rocket_room", "whale_watch",
    "vip_gainz", "turbo_calls", "insider_lounge",
)


@dataclass
class SynthConfig:
    n_coins: int = 300
    hours: int = 720
    n_events: int = 45
    cap_range: tuple[float, float] = (1.0, 30_000.0)
    cap_shape: float = 1.5            # >1 skews caps small; keeps the median below 100 BTC
    prepump_signal: float = 0.12      # expected log-return leaked into the hour before
    signal_spread: float = 0.75       # per-event strength ~ U(1-spread, 1+spread) * signal
    leak_decay_hours: int = 1         # >1 ramps the leak over the preceding hours
    spike_range: tuple[float, float] = (1.5, 3.5)
    dump_retention: float = 0.1       # fraction of the spike kept at the pump-hour close
    pump_volume_multiple: float = 25.0  # pump-hour BTC volume vs realized 24h mean
    repeat_pump_prob: float = 0.3     # chance an event re-targets a previously pumped coin
    base_volume: float = 0.05         # BTC per hour scale of normal trading
    volume_noise_sigma: float = 1.0   # lognormal sigma of hourly volumes
    hourly_sigma: float = 0.02        # log-return std of the baseline walk
    gap_rate: float = 0.01
    zero_volume_rate: float = 0.15
    exchange: str = "synthex"
    start_time: int = parse_iso("2018-06-17T00:00:00Z")
    seed: int = 0

    def __post_init__(self):
        if self.n_coins < 1 or self.n_events < 1:
            raise ValueError("n_coins and n_events must be >= 1")
        if self.hours < 24:
            raise ValueError("need at least 24 hours of history")
        if self.spike_range[0] <= 1:
            raise ValueError("spike_multiple must exceed 1")
        if self.start_time % HOUR:
            raise ValueError("start_time must be hour-aligned")


@dataclass
class PlantSpec:
    coin: str
    exchange: str
    pump_hour: int
    event_time: int
    spike: float
    signal: float
    leak_decay_hours: int = 1
    dump_retention: float = 0.1
    volume_multiple: float = 25.0
    n_channels: int = 1


@dataclass
class GroundTruthEvent:
    coin: str
    exchange: str
    event_time: int
    pump_hour: int
    spike: float
    signal: float


@dataclass
class Scenario:
    config: SynthConfig
    coins: list[CoinMeta]
    candles: CandleStore
    ticks: dict[tuple[str, str], list[Tick]]
    announcements: list[Announcement]
    ground_truth: list[GroundTruthEvent]


def _stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    key = (seed & _MASK64) ^ (purpose << 56)
    return np.random.Generator(np.random.Philox(key=[key & _MASK64, index & _MASK64]))


def _ticker(index: int) -> str:
    letters = []
    for power in (2, 1, 0):
        letters.append(chr(65 + (index // 26 ** power) % 26))
    return "".join(letters)


def _qdec(value: float, places: int) -> Decimal:
    return Decimal(f"{value:.{places}f}")


def _tick_qty(rng: np.random.Generator) -> float:
    # heavy-tailed order size in coin units
    return float(10 ** rng.uniform(2.0, 4.5))


def gen_universe(cfg: SynthConfig, rng: Optional[np.random.Generator] = None) -> list[CoinMeta]:
    """Coin metadata with a small-cap-skewed market-cap distribution."""
    rng = rng or _stream(cfg.seed, 1)
    lo, hi = cfg.cap_range
    metas = []
    for i in range(cfg.n_coins):
        u = rng.uniform()
        cap = lo * (hi / lo) ** (u ** cfg.cap_shape)
        rating = int(rng.integers(0, 6))
        launch_offset = int(rng.uniform(30 * 24, 4 * 365 * 24)) * HOUR
        withdraw_fee = math.exp(rng.uniform(math.log(1e-4), math.log(10.0)))
        min_withdraw = withdraw_fee * rng.uniform(2, 20)
        max_withdraw = min_withdraw * 10 ** rng.uniform(2, 5)
        min_base_trade = rng.uniform(1e-5, 1e-3)
        metas.append(CoinMeta(
            coin=_ticker(i),
            cap_btc=_qdec(cap, 8),
            launch_time=cfg.start_time - launch_offset,
            rating=rating,
            withdraw_fee=_qdec(withdraw_fee, 8),
            min_withdraw=_qdec(min_withdraw, 8),
            max_withdraw=_qdec(max_withdraw, 8),
            min_base_trade=_qdec(min_base_trade, 8),
            listed_on=frozenset([cfg.exchange]),
        ))
    return metas


def gen_baseline_candles(coin: str, cfg: SynthConfig,
                         rng: np.random.Generator,
                         protected_hours: frozenset[int] = frozenset()) -> CandleSeries:
    """Geometric-random-walk hourly series; OHLC invariants hold by construction.

    Hours are dropped at gap_rate except protected ones (event neighborhoods),
    and a fraction of hours trade zero volume as flat candles.
    """
    price = math.exp(rng.uniform(math.log(2e-7), math.log(5e-5)))
    candles = []
    for h in range(cfg.hours):
        ts = cfg.start_time + h * HOUR
        zero_volume = rng.uniform() < cfg.zero_volume_rate
        drop = rng.uniform() < cfg.gap_rate and ts not in protected_hours
        if zero_volume:
            o = c = hi = lo2 = price
            vto = 0.0
        else:
            o = price
            r = rng.normal(0.0, cfg.hourly_sigma)
            c = o * math.exp(r)
            hi = max(o, c) * math.exp(abs(rng.normal(0.0, cfg.hourly_sigma / 2)))
            lo2 = min(o, c) * math.exp(-abs(rng.normal(0.0, cfg.hourly_sigma / 2)))
            vto = cfg.base_volume * math.exp(rng.normal(0.0, cfg.volume_noise_sigma))
            price = c
        if drop:
            continue
        mid = (o + c) / 2
        vfrom = vto / mid if mid > 0 else 0.0
        od, cd = _qdec(o, 12), _qdec(c, 12)
        hd = max(_qdec(hi, 12), od, cd)
        ld = min(_qdec(lo2, 12), od, cd)
        candles.append(Candle(ts, od, hd, ld, cd, _qdec(vfrom, 8), _qdec(vto, 8)))
    return CandleSeries(coin, cfg.exchange, candles)


def plant_pump(series: CandleSeries, spec: PlantSpec,
               rng: np.random.Generator) -> tuple[list[Tick], list[Announcement]]:
    """Inject one pump into `series` in place; emit its ticks and announcements.

    The pre-announcement hour absorbs the leak log-return (prices scaled by
    e^signal, volume doubled) when the signal is nonzero.  The pump-hour
    candle is rebuilt from the generated tick stream, so its volumes equal
    the tick aggregates exactly and its high is exactly open * spike.
    """
    planted = getattr(series, "_planted_hours", None)
    if planted is None:
        planted = set()
        series._planted_hours = planted
    if spec.pump_hour in planted:
        raise DataError(f"{series.coin}: pump already planted at {format_iso(spec.pump_hour)}")

    ts_list = series.timestamps()
    try:
        pump_idx = ts_list.index(spec.pump_hour)
    except ValueError:
        raise DataError(f"{series.coin}: no candle at pump hour {format_iso(spec.pump_hour)}") from None
    planted.add(spec.pump_hour)

    # realized hourly volume level before this event, for volume targeting
    history = [float(c.volumeto) for c in series.candles
               if spec.pump_hour - 24 * HOUR <= c.timestamp < spec.pump_hour]
    mean_volume = (sum(history) / len(history)) if history else 0.0
    if mean_volume <= 0:
        mean_volume = 0.05
    target_notional = spec.volume_multiple * mean_volume

    # leak into the hours before the announcement: the hourly return at lag j
    # gains b_j = signal * 0.5^(j-1), so the price level of the candle at lag
    # j is scaled by exp(sum of b_i for i >= j); lag 1 gains exactly `signal`
    has_prev = pump_idx > 0 and ts_list[pump_idx - 1] == spec.pump_hour - HOUR
    if spec.signal != 0.0:
        k = max(1, spec.leak_decay_hours)
        bumps = [spec.signal * 0.5 ** (lag - 1) for lag in range(1, k + 1)]
        for lag in range(1, k + 1):
            idx = pump_idx - lag
            if idx < 0 or ts_list[idx] != spec.pump_hour - lag * HOUR:
                continue
            level = sum(bumps[lag - 1:])
            prev = series.candles[idx]
            factor = Decimal(f"{math.exp(level):.12f}")
            volume_factor = 2 if lag == 1 else 1
            series.candles[idx] = Candle(
                prev.timestamp,
                prev.open * factor, prev.high * factor,
                prev.low * factor, prev.close * factor,
                prev.volumefrom * volume_factor, prev.volumeto * volume_factor,
            )

    anchor = series.candles[pump_idx - 1].close if has_prev else series.candles[pump_idx].open
    open_d = _qdec(float(anchor), 12)
    spike_d = Decimal(str(spec.spike))
    high_d = open_d * spike_d
    o = float(open_d)
    peak = float(high_d)
    close_target = o * (1.0 + (spec.spike - 1.0) * spec.dump_retention)

    raw: list[tuple[float, Decimal, float, Aggressor]] = []  # (time, price, raw qty, side)

    def emit(t: float, price_d: Decimal, qty: float, side: Aggressor) -> None:
        raw.append((round(t, 3), price_d, qty, side))

    def clamp_price(p: float) -> Decimal:
        d = _qdec(min(max(p, 0.0), peak), 12)
        return min(d, high_d)

    # faint pre-purchase trades when the announcement sits late in the hour
    if spec.event_time - spec.pump_hour >= 150:
        for _ in range(int(rng.integers(1, 4))):
            t = spec.event_time - rng.uniform(5, 110)
            emit(t, open_d, 0.02 * _tick_qty(rng), Aggressor.BUY)

    # buy wave: open to peak
    n_up = int(rng.integers(25, 61))
    up_duration = rng.uniform(20, 80)
    up_times = sorted(spec.event_time + 1 + rng.uniform(0, up_duration) for _ in range(n_up))
    for k in range(n_up):
        if k == 0:
            price_d = open_d
        elif k == n_up - 1:
            price_d = high_d
        else:
            frac = (k + 1) / n_up
            price_d = clamp_price(o * (peak / o) ** frac * math.exp(rng.normal(0, 0.005)))
        side = Aggressor.BUY if rng.uniform() < 0.85 else Aggressor.SELL
        emit(up_times[k], price_d, _tick_qty(rng), side)

    # dump: peak back toward the close target
    n_down = int(rng.integers(20, 51))
    down_duration = rng.uniform(120, 500)
    down_times = sorted(spec.event_time + 2 + up_duration + rng.uniform(0, down_duration)
                        for _ in range(n_down))
    for k in range(n_down):
        if k == n_down - 1:
            price_d = clamp_price(close_target)
        else:
            frac = (k + 1) / n_down
            price_d = clamp_price(peak * (close_target / peak) ** frac
                                  * math.exp(rng.normal(0, 0.005)))
        side = Aggressor.SELL if rng.uniform() < 0.75 else Aggressor.BUY
        emit(down_times[k], price_d, _tick_qty(rng), side)

    # scale quantities so the pump-hour notional hits the volume target
    notional = sum(q * float(p) for _, p, q, _ in raw)
    scale = target_notional / notional if notional > 0 else 1.0
    ticks = [Tick(t, p, _qdec(max(q * scale, 1e-6), 6), side)
             for t, p, q, side in raw]
    ticks.sort(key=lambda t: t.timestamp)

    # rebuild the pump-hour candle from the tick aggregates
    vfrom = sum((t.quantity for t in ticks), Decimal(0))
    vto = sum((t.quantity * t.price for t in ticks), Decimal(0))
    prices = [t.price for t in ticks]
    series.candles[pump_idx] = Candle(
        spec.pump_hour,
        ticks[0].price, max(prices), min(prices), ticks[-1].price,
        vfrom, vto,
    )
    series._arrays = None  # invalidate the cached float view

    n_channels = max(1, min(spec.n_channels, len(_CHANNEL_POOL)))
    order = rng.permutation(len(_CHANNEL_POOL))[:n_channels]
    announcements = []
    t = spec.event_time
    for i in range(n_channels):
        if i > 0:
            t += int(rng.integers(5, 171))
        views = None if rng.uniform() < 0.1 else int(rng.integers(18, 2001))
        announcements.append(Announcement(
            spec.coin, spec.exchange, _CHANNEL_POOL[order[i]], t, views))
    return ticks, announcements


def _plan_events(cfg: SynthConfig) -> list[PlantSpec]:
    rng = _stream(cfg.seed, 2)
    lo = min(80, max(1, cfg.hours // 3))
    hi = cfg.hours - 5
    if hi <= lo:
        lo = max(1, hi - 1)
    hours_pool = np.arange(lo, hi)
    if len(hours_pool) < cfg.n_events:
        raise DataError("history too short for the requested number of events")
    chosen = np.sort(rng.choice(hours_pool, size=cfg.n_events, replace=False))

    specs: list[PlantSpec] = []
    pumped_before: list[int] = []
    for h in chosen:
        if pumped_before and rng.uniform() < cfg.repeat_pump_prob:
            coin_idx = pumped_before[int(rng.integers(0, len(pumped_before)))]
        else:
            coin_idx = int(rng.integers(0, cfg.n_coins))
        pumped_before.append(coin_idx)
        pump_hour = cfg.start_time + int(h) * HOUR
        minute = 30 if rng.uniform() < 0.5 else 0
        jitter = int(rng.integers(1, 51))
        specs.append(PlantSpec(
            coin=_ticker(coin_idx),
            exchange=cfg.exchange,
            pump_hour=pump_hour,
            event_time=pump_hour + minute * 60 + jitter,
            spike=round(float(rng.uniform(*cfg.spike_range)), 4),
            signal=(cfg.prepump_signal
                    * float(rng.uniform(1 - cfg.signal_spread, 1 + cfg.signal_spread))
                    if cfg.prepump_signal else 0.0),
            leak_decay_hours=cfg.leak_decay_hours,
            dump_retention=cfg.dump_retention,
            volume_multiple=cfg.pump_volume_multiple,
            n_channels=int(rng.integers(1, 4)),
        ))
    return specs


def build_scenario(cfg: SynthConfig) -> Scenario:
    """Generate the full in-memory scenario for a config."""
    coins = gen_universe(cfg)
    specs = _plan_events(cfg)

    # protect event neighborhoods for EVERY coin, not just pumped ones;
    # otherwise gap patterns would correlate with the label
    protected: set[int] = set()
    for spec in specs:
        for h in range(spec.pump_hour - 80 * HOUR, spec.pump_hour + 5 * HOUR, HOUR):
            protected.add(h)
    protected_frozen = frozenset(protected)

    series_list = []
    by_coin: dict[str, CandleSeries] = {}
    for i, meta in enumerate(coins):
        rng = _stream(cfg.seed, 3, i)
        series = gen_baseline_candles(meta.coin, cfg, rng, protected_frozen)
        series_list.append(series)
        by_coin[meta.coin] = series

    ticks: dict[tuple[str, str], list[Tick]] = {}
    announcements: list[Announcement] = []
    truth: list[GroundTruthEvent] = []
    for k, spec in enumerate(specs):
        rng = _stream(cfg.seed, 4, k)
        event_ticks, event_announcements = plant_pump(by_coin[spec.coin], spec, rng)
        ticks.setdefault((spec.coin, spec.exchange), []).extend(event_ticks)
        announcements.extend(event_announcements)
        truth.append(GroundTruthEvent(spec.coin, spec.exchange, spec.event_time,
                                      spec.pump_hour, spec.spike, spec.signal))
    for stream in ticks.values():
        stream.sort(key=lambda t: t.timestamp)
    announcements.sort(key=lambda a: (a.announce_time, a.coin, a.channel))

    return Scenario(cfg, coins, CandleStore(series_list), ticks, announcements, truth)


def serialize_ground_truth(truth: list[GroundTruthEvent]) -> str:
    lines = []
    for e in truth:
        lines.append(json.dumps({
            "coin": e.coin,
            "exchange": e.exchange,
            "event_time": format_iso(e.event_time),
            "pump_hour": format_iso(e.pump_hour),
            "spike": e.spike,
            "signal": e.signal,
        }))
    return "\n".join(lines) + ("\n" if lines else "")


def gen_scenario(cfg: SynthConfig, out_dir: Path) -> Scenario:
    """Generate and write the scenario file set; same seed, same bytes."""
    scenario = build_scenario(cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "candles.csv").write_text(serialize_candles(scenario.candles.all()))
    (out_dir / "ticks.csv").write_text(serialize_ticks(scenario.ticks))
    (out_dir / "announcements.jsonl").write_text(serialize_announcements(scenario.announcements))
    (out_dir / "coins.jsonl").write_text(serialize_coin_meta(scenario.coins))
    (out_dir / "ground_truth.jsonl").write_text(serialize_ground_truth(scenario.ground_truth))
    return scenario
