"""Canonical market-data types, file ingestion, validation and window slicing.

Prices and volumes are carried as `Decimal`, parsed verbatim from the input
text so that Satoshi-scale quotes (1e-8 BTC) survive round-trips without
underflow or reformatting.  Timestamps are stored as integer epoch seconds
and rendered as ISO-8601 UTC.  Hourly candles are keyed by their hour-start
instant; gaps are reported, never imputed, at this layer.
"""

from __future__ import annotations

import io
import csv
import json
from bisect import bisect_left
from dataclasses import dataclass, field
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from enum import Enum
from typing import IO, Iterable, Optional, Union

import numpy as np

from .errors import CsvFormatError, DataError

HOUR = 3600

CANDLE_CSV_HEADER = [
    "coin", "exchange", "timestamp",
    "open", "high", "low", "close",
    "volumefrom", "volumeto",
]
TICK_CSV_HEADER = ["coin", "exchange", "timestamp", "price", "quantity", "aggressor"]


# --------------------------------------------------------------------------
# time helpers

def parse_iso(text: str) -> int:
    """Parse an ISO-8601 UTC instant (`...Z`) to epoch seconds."""
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"bad timestamp {text!r}: {exc}") from None
    return int(dt.timestamp())


def parse_iso_ms(text: str) -> float:
    """Parse an ISO-8601 UTC instant to epoch seconds with sub-second precision."""
    try:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError as exc:
        raise DataError(f"bad timestamp {text!r}: {exc}") from None
    return dt.timestamp()


def format_iso(epoch: int) -> str:
    return datetime.fromtimestamp(int(epoch), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def format_iso_ms(epoch: float) -> str:
    dt = datetime.fromtimestamp(round(epoch * 1000) / 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{dt.microsecond // 1000:03d}Z"


def truncate_to_hour(epoch: Union[int, float]) -> int:
    return int(epoch) // HOUR * HOUR


def fmt_decimal(value: Decimal) -> str:
    """Positional (non-scientific) text for a Decimal, digits preserved."""
    return format(value, "f")


def _parse_decimal(token: str, line_no: int, column: str) -> Decimal:
    try:
        value = Decimal(token)
    except InvalidOperation:
        raise CsvFormatError(line_no, f"field {column!r}: not a decimal number: {token!r}") from None
    if not value.is_finite():
        raise CsvFormatError(line_no, f"field {column!r}: non-finite value {token!r}")
    return value


# --------------------------------------------------------------------------
# domain types

class Aggressor(Enum):
    BUY = "buy"
    SELL = "sell"


@dataclass(frozen=True)
class Candle:
    """One hourly OHLCV bar; prices in BTC per coin, timestamp at hour start."""

    timestamp: int
    open: Decimal
    high: Decimal
    low: Decimal
    close: Decimal
    volumefrom: Decimal  # traded quantity in coin units
    volumeto: Decimal    # traded quantity in BTC

    def check(self) -> Optional[str]:
        """Return a description of the first violated invariant, or None."""
        if self.timestamp % HOUR != 0:
            return "timestamp not aligned to a full hour"
        if not (self.low <= self.open <= self.high):
            return "open outside [low, high]"
        if not (self.low <= self.close <= self.high):
            return "close outside [low, high]"
        if self.volumefrom < 0 or self.volumeto < 0:
            return "negative volume"
        return None


@dataclass
class CandleSeries:
    """Time-ordered hourly candles for one (coin, exchange) market."""

    coin: str
    exchange: str
    candles: list[Candle] = field(default_factory=list)
    _arrays: Optional[dict] = field(default=None, repr=False, compare=False)

    def key(self) -> tuple[str, str]:
        return (self.coin, self.exchange)

    def timestamps(self) -> list[int]:
        return [c.timestamp for c in self.candles]

    def at(self, timestamp: int) -> Optional[Candle]:
        ts = self.timestamps()
        i = bisect_left(ts, timestamp)
        if i < len(ts) and ts[i] == timestamp:
            return self.candles[i]
        return None

    def arrays(self) -> dict:
        """Float views of the series for numeric feature code (built once)."""
        if self._arrays is None:
            self._arrays = {
                "ts": np.array([c.timestamp for c in self.candles], dtype=np.int64),
                "open": np.array([float(c.open) for c in self.candles]),
                "high": np.array([float(c.high) for c in self.candles]),
                "low": np.array([float(c.low) for c in self.candles]),
                "close": np.array([float(c.close) for c in self.candles]),
                "volumefrom": np.array([float(c.volumefrom) for c in self.candles]),
                "volumeto": np.array([float(c.volumeto) for c in self.candles]),
            }
        return self._arrays


@dataclass(frozen=True)
class Tick:
    """One trade, millisecond precision; aggressor is the order-initiating side."""

    timestamp: float
    price: Decimal
    quantity: Decimal
    aggressor: Aggressor


@dataclass
class CoinMeta:
    """Static per-coin attributes used as model features."""

    coin: str
    cap_btc: Decimal
    launch_time: int
    rating: int
    withdraw_fee: Decimal
    min_withdraw: Decimal
    max_withdraw: Decimal
    min_base_trade: Decimal
    listed_on: frozenset[str] = frozenset()


@dataclass
class Gap:
    start: int      # first missing hour
    length: int     # number of consecutive missing hours


@dataclass
class ValidationReport:
    coin: str
    exchange: str
    candle_count: int
    span_hours: int
    gaps: list[Gap]
    zero_volume_runs: list[int]
    invariant_breaches: list[str]

    @property
    def missing_hours(self) -> int:
        return sum(g.length for g in self.gaps)


# --------------------------------------------------------------------------
# candle CSV

def parse_candles(source: Union[IO, str, bytes]) -> list[CandleSeries]:
    """Parse candle CSV into per-(coin, exchange) series, each time-sorted.

    Raises CsvFormatError naming the offending line for malformed rows,
    OHLC-ordering violations and duplicate (coin, exchange, timestamp) keys.
    """
    reader = csv.reader(_as_text_lines(source))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty candle file: header row required") from None
    if [h.strip() for h in header] != CANDLE_CSV_HEADER:
        raise CsvFormatError(1, f"bad header {header!r}, expected {CANDLE_CSV_HEADER!r}")

    groups: dict[tuple[str, str], dict[int, Candle]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CANDLE_CSV_HEADER):
            raise CsvFormatError(line_no, f"expected {len(CANDLE_CSV_HEADER)} fields, got {len(row)}")
        coin, exchange = row[0].strip(), row[1].strip()
        if not coin or not exchange:
            raise CsvFormatError(line_no, "field 'coin'/'exchange': must be non-empty")
        try:
            ts = parse_iso(row[2].strip())
        except DataError as exc:
            raise CsvFormatError(line_no, f"field 'timestamp': {exc}") from None
        values = [_parse_decimal(row[i].strip(), line_no, CANDLE_CSV_HEADER[i]) for i in range(3, 9)]
        candle = Candle(ts, *values)
        breach = candle.check()
        if breach is not None:
            raise CsvFormatError(line_no, f"{coin}/{exchange}: {breach}")
        bucket = groups.setdefault((coin, exchange), {})
        if ts in bucket:
            raise CsvFormatError(line_no, f"duplicate candle for {coin}/{exchange} at {format_iso(ts)}")
        bucket[ts] = candle

    series = []
    for (coin, exchange), bucket in groups.items():
        candles = [bucket[ts] for ts in sorted(bucket)]
        series.append(CandleSeries(coin, exchange, candles))
    series.sort(key=lambda s: s.key())
    return series


def serialize_candles(series: Iterable[CandleSeries]) -> str:
    """Inverse of parse_candles; bit-exact on decimal text for parsed input."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CANDLE_CSV_HEADER)
    for s in series:
        for c in s.candles:
            writer.writerow([
                s.coin, s.exchange, format_iso(c.timestamp),
                fmt_decimal(c.open), fmt_decimal(c.high),
                fmt_decimal(c.low), fmt_decimal(c.close),
                fmt_decimal(c.volumefrom), fmt_decimal(c.volumeto),
            ])
    return out.getvalue()


def _as_text_lines(source: Union[IO, str, bytes]) -> Iterable[str]:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    first = source.read()
    if isinstance(first, bytes):
        first = first.decode("utf-8")
    return io.StringIO(first)


# --------------------------------------------------------------------------
# tick CSV

def parse_ticks(source: Union[IO, str, bytes]) -> dict[tuple[str, str], list[Tick]]:
    """Parse tick CSV grouped by (coin, exchange), each list time-sorted."""
    reader = csv.reader(_as_text_lines(source))
    try:
        header = next(reader)
    except StopIteration:
        raise DataError("empty tick file: header row required") from None
    if [h.strip() for h in header] != TICK_CSV_HEADER:
        raise CsvFormatError(1, f"bad header {header!r}, expected {TICK_CSV_HEADER!r}")

    groups: dict[tuple[str, str], list[Tick]] = {}
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(TICK_CSV_HEADER):
            raise CsvFormatError(line_no, f"expected {len(TICK_CSV_HEADER)} fields, got {len(row)}")
        coin, exchange = row[0].strip(), row[1].strip()
        try:
            ts = parse_iso_ms(row[2].strip())
        except DataError as exc:
            raise CsvFormatError(line_no, f"field 'timestamp': {exc}") from None
        price = _parse_decimal(row[3].strip(), line_no, "price")
        quantity = _parse_decimal(row[4].strip(), line_no, "quantity")
        if price <= 0 or quantity <= 0:
            raise CsvFormatError(line_no, "price and quantity must be positive")
        side = row[5].strip().lower()
        if side not in ("buy", "sell"):
            raise CsvFormatError(line_no, f"field 'aggressor': expected buy|sell, got {row[5]!r}")
        groups.setdefault((coin, exchange), []).append(
            Tick(ts, price, quantity, Aggressor(side)))
    for ticks in groups.values():
        ticks.sort(key=lambda t: t.timestamp)
    return groups


def serialize_ticks(groups: dict[tuple[str, str], list[Tick]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TICK_CSV_HEADER)
    for (coin, exchange) in sorted(groups):
        for t in groups[(coin, exchange)]:
            writer.writerow([
                coin, exchange, format_iso_ms(t.timestamp),
                fmt_decimal(t.price), fmt_decimal(t.quantity), t.aggressor.value,
            ])
    return out.getvalue()


# --------------------------------------------------------------------------
# coin metadata JSON Lines

def parse_coin_meta(source: Union[IO, str, bytes]) -> list[CoinMeta]:
    text = source if isinstance(source, str) else (
        source.decode("utf-8") if isinstance(source, bytes) else source.read())
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    metas = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CsvFormatError(line_no, f"bad JSON: {exc}") from None
        try:
            meta = CoinMeta(
                coin=obj["coin"],
                cap_btc=Decimal(str(obj["cap_btc"])),
                launch_time=parse_iso(obj["launch_time"]),
                rating=int(obj["rating"]),
                withdraw_fee=Decimal(str(obj["withdraw_fee"])),
                min_withdraw=Decimal(str(obj["min_withdraw"])),
                max_withdraw=Decimal(str(obj["max_withdraw"])),
                min_base_trade=Decimal(str(obj["min_base_trade"])),
                listed_on=frozenset(obj.get("listed_on", [])),
            )
        except (KeyError, ValueError, InvalidOperation) as exc:
            raise CsvFormatError(line_no, f"bad coin metadata: {exc}") from None
        if meta.cap_btc < 0:
            raise CsvFormatError(line_no, f"{meta.coin}: negative market cap")
        if not 0 <= meta.rating <= 5:
            raise CsvFormatError(line_no, f"{meta.coin}: rating outside 0..5")
        metas.append(meta)
    return metas


def serialize_coin_meta(metas: Iterable[CoinMeta]) -> str:
    lines = []
    for m in metas:
        lines.append(json.dumps({
            "coin": m.coin,
            "cap_btc": fmt_decimal(m.cap_btc),
            "launch_time": format_iso(m.launch_time),
            "rating": m.rating,
            "withdraw_fee": fmt_decimal(m.withdraw_fee),
            "min_withdraw": fmt_decimal(m.min_withdraw),
            "max_withdraw": fmt_decimal(m.max_withdraw),
            "min_base_trade": fmt_decimal(m.min_base_trade),
            "listed_on": sorted(m.listed_on),
        }, sort_keys=False))
    return "\n".join(lines) + ("\n" if lines else "")


# --------------------------------------------------------------------------
# validation and slicing

def validate_series(series: CandleSeries) -> ValidationReport:
    """Enumerate missing hours, zero-volume runs and invariant breaches.

    Reporting only: the series is never mutated and nothing is raised.
    """
    gaps: list[Gap] = []
    zero_runs: list[int] = []
    breaches: list[str] = []
    candles = series.candles
    if not candles:
        return ValidationReport(series.coin, series.exchange, 0, 0, [], [], [])

    span_hours = (candles[-1].timestamp - candles[0].timestamp) // HOUR + 1
    run = 0
    prev_ts = None
    for c in candles:
        breach = c.check()
        if breach is not None:
            breaches.append(f"{format_iso(c.timestamp)}: {breach}")
        if prev_ts is not None:
            if c.timestamp <= prev_ts:
                breaches.append(f"{format_iso(c.timestamp)}: timestamps not strictly increasing")
            elif c.timestamp - prev_ts > HOUR:
                missing = (c.timestamp - prev_ts) // HOUR - 1
                gaps.append(Gap(prev_ts + HOUR, missing))
        prev_ts = c.timestamp
        if c.volumeto == 0:
            run += 1
        elif run:
            zero_runs.append(run)
            run = 0
    if run:
        zero_runs.append(run)
    return ValidationReport(series.coin, series.exchange, len(candles),
                            span_hours, gaps, zero_runs, breaches)


def window_slice(series: CandleSeries, end: int, hours: int) -> list[Candle]:
    """Candles with timestamp in [end - hours, end), in order.

    Left-closed, right-open: the candle at `end` itself is never included.
    Missing hours are simply absent, so the result may be shorter than
    `hours`.  An empty result is valid.
    """
    if end % HOUR != 0:
        raise ValueError(f"window end must be hour-aligned, got {end}")
    if hours <= 0:
        raise ValueError("hours must be positive")
    ts = series.timestamps()
    lo = bisect_left(ts, end - hours * HOUR)
    hi = bisect_left(ts, end)
    return series.candles[lo:hi]


class CandleStore:
    """Lookup of CandleSeries by (coin, exchange)."""

    def __init__(self, series: Iterable[CandleSeries] = ()):
        self._by_key: dict[tuple[str, str], CandleSeries] = {}
        for s in series:
            if s.key() in self._by_key:
                raise DataError(f"duplicate series for {s.key()}")
            self._by_key[s.key()] = s

    def get(self, coin: str, exchange: str) -> Optional[CandleSeries]:
        return self._by_key.get((coin, exchange))

    def all(self) -> list[CandleSeries]:
        return [self._by_key[k] for k in sorted(self._by_key)]

    def __len__(self) -> int:
        return len(self._by_key)
