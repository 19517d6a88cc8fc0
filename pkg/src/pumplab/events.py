"""Announcement deduplication, plausibility checks and pump history counts.

Raw coin-announcement records arrive one per broadcasting channel.  Several
channels co-organize the same pump, so announcements for the same coin on
the same exchange are chained into a single event while each successive
announcement follows the previous one by at most MERGE_WINDOW seconds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Union

from .errors import CsvFormatError, DataError
from .marketdata import (
    HOUR,
    CandleSeries,
    format_iso,
    parse_iso,
    truncate_to_hour,
)

MERGE_WINDOW = 180  # seconds between successive announcements of one event
HALF_HOUR = 1800


@dataclass(frozen=True)
class Announcement:
    coin: str
    exchange: str
    channel: str
    announce_time: int
    views: Optional[int] = None


@dataclass
class PumpEvent:
    """A deduplicated pump: earliest announcement wins the event time."""

    coin: str
    exchange: str
    event_time: int
    channels: frozenset[str]
    views_total: Optional[int] = None

    @property
    def pump_hour(self) -> int:
        return truncate_to_hour(self.event_time)


@dataclass
class PlausibilityConfig:
    time_tolerance: int = 120       # seconds from the nearest :00 / :30 mark
    volume_multiple: float = 5.0    # pump-hour volume vs 24h mean
    price_multiple: float = 1.05    # pump-hour high vs open


@dataclass
class PlausibilityVerdict:
    time_plausible: bool
    volume_spike: bool
    price_spike: bool
    accepted: bool
    notes: str = ""


def dedup_events(announcements: Iterable[Announcement]) -> list[PumpEvent]:
    """Chain same-coin, same-exchange announcements into unique pump events.

    Chaining is successive-link: each announcement extends the open event of
    its (coin, exchange) group when it follows the previous member by at most
    MERGE_WINDOW seconds, so A-B at 2 min and B-C at 2 min form one event.
    """
    ordered = sorted(announcements, key=lambda a: (a.announce_time, a.coin, a.exchange, a.channel))
    open_groups: dict[tuple[str, str], list[Announcement]] = {}
    events: list[PumpEvent] = []

    def close(group: list[Announcement]) -> None:
        views = [a.views for a in group if a.views is not None]
        events.append(PumpEvent(
            coin=group[0].coin,
            exchange=group[0].exchange,
            event_time=group[0].announce_time,
            channels=frozenset(a.channel for a in group),
            views_total=sum(views) if views else None,
        ))

    for a in ordered:
        key = (a.coin, a.exchange)
        group = open_groups.get(key)
        if group is not None and a.announce_time - group[-1].announce_time <= MERGE_WINDOW:
            group.append(a)
        else:
            if group is not None:
                close(group)
            open_groups[key] = [a]
    for key in sorted(open_groups):
        close(open_groups[key])
    events.sort(key=lambda e: (e.event_time, e.coin, e.exchange))
    return events


def seconds_from_mark(epoch: int) -> int:
    """Distance in seconds to the nearest :00 or :30 wall-clock mark."""
    offset = epoch % HALF_HOUR
    return min(offset, HALF_HOUR - offset)


def plausibility_check(event: PumpEvent, series: CandleSeries,
                       cfg: Optional[PlausibilityConfig] = None) -> PlausibilityVerdict:
    """Validate that an event looks like a real pump on the given market.

    accepted requires a plausible announcement time plus at least one of a
    volume spike or a price spike in the pump-hour candle.  A missing
    pump-hour candle yields a rejected verdict with a note, not an error.
    """
    cfg = cfg or PlausibilityConfig()
    notes = []
    time_plausible = seconds_from_mark(event.event_time) <= cfg.time_tolerance
    if not time_plausible:
        notes.append("announcement time far from a :00/:30 mark")

    pump_candle = series.at(event.pump_hour)
    if pump_candle is None:
        notes.append("no pump-hour candle")
        return PlausibilityVerdict(time_plausible, False, False, False, "; ".join(notes))

    history = [c for c in series.candles
               if event.pump_hour - 24 * HOUR <= c.timestamp < event.pump_hour]
    if history:
        mean_volume = sum(float(c.volumeto) for c in history) / len(history)
        volume_spike = float(pump_candle.volumeto) >= cfg.volume_multiple * mean_volume
    else:
        # no history to compare against: treat the spike test as passed
        volume_spike = True
        notes.append("no 24h volume history; spike undefined, treated as true")

    price_spike = (pump_candle.open > 0
                   and float(pump_candle.high) >= cfg.price_multiple * float(pump_candle.open))
    accepted = time_plausible and (volume_spike or price_spike)
    if not (volume_spike or price_spike):
        notes.append("no significant volume or price increase in pump hour")
    return PlausibilityVerdict(time_plausible, volume_spike, price_spike, accepted, "; ".join(notes))


def count_prior_pumps(events: Iterable[PumpEvent], coin: str, exchange: str,
                      before: int) -> int:
    """Pumps of `coin` on `exchange` strictly before `before` (epoch seconds)."""
    return sum(1 for e in events
               if e.coin == coin and e.exchange == exchange and e.event_time < before)


# --------------------------------------------------------------------------
# JSON Lines serialization

def parse_announcements(source: Union[IO, str, bytes]) -> list[Announcement]:
    text = source if isinstance(source, str) else (
        source.decode("utf-8") if isinstance(source, bytes) else source.read())
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    out = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CsvFormatError(line_no, f"bad JSON: {exc}") from None
        try:
            coin, exchange = obj["coin"], obj["exchange"]
            if not coin or not exchange:
                raise DataError("coin and exchange must be non-empty")
            views = obj.get("views")
            out.append(Announcement(
                coin=coin,
                exchange=exchange,
                channel=obj["channel"],
                announce_time=parse_iso(obj["announce_time"]),
                views=None if views is None else int(views),
            ))
        except (KeyError, ValueError, DataError) as exc:
            raise CsvFormatError(line_no, f"bad announcement: {exc}") from None
    return out


def serialize_announcements(announcements: Iterable[Announcement]) -> str:
    lines = []
    for a in announcements:
        lines.append(json.dumps({
            "coin": a.coin,
            "exchange": a.exchange,
            "channel": a.channel,
            "announce_time": format_iso(a.announce_time),
            "views": a.views,
        }))
    return "\n".join(lines) + ("\n" if lines else "")


def serialize_events(events: Iterable[PumpEvent]) -> str:
    lines = []
    for e in events:
        lines.append(json.dumps({
            "coin": e.coin,
            "exchange": e.exchange,
            "event_time": format_iso(e.event_time),
            "channels": sorted(e.channels),
            "views_total": e.views_total,
            "pump_hour": format_iso(e.pump_hour),
        }))
    return "\n".join(lines) + ("\n" if lines else "")
