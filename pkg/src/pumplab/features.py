"""Pre-pump feature extraction and labeled dataset assembly.

Every (event, candidate coin) pair yields one observation carrying the 54
predictors listed below.  All market features are computed over windows
that end one hour before the pump hour, so nothing from the pump itself
leaks in.  Returns are anchored on open prices at the window endpoints,
consistent with `lastprice` being the open one hour before the pump.
Missing inputs produce missing features (NaN), never errors; imputation is
a model-layer concern.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CsvFormatError, DataError
from .events import PumpEvent, count_prior_pumps
from .marketdata import (
    HOUR,
    CandleSeries,
    CandleStore,
    CoinMeta,
    format_iso,
    parse_iso,
)

logger = logging.getLogger(__name__)

RETURN_HORIZONS = (1, 3, 12, 24, 36, 48, 60, 72)
VOLA_HORIZONS = (3, 12, 24, 36, 48, 60, 72)

FEATURE_NAMES: tuple[str, ...] = (
    ("caps",)
    + tuple(f"return{x}h" for x in RETURN_HORIZONS)
    + tuple(f"volumefrom{x}h" for x in RETURN_HORIZONS)
    + tuple(f"volumeto{x}h" for x in RETURN_HORIZONS)
    + tuple(f"returnvola{y}h" for y in VOLA_HORIZONS)
    + tuple(f"volumefromvola{y}h" for y in VOLA_HORIZONS)
    + tuple(f"volumetovola{y}h" for y in VOLA_HORIZONS)
    + ("lastprice", "age", "pumpedtimes", "rating",
       "WithdrawFee", "MinWithdraw", "MaxWithdraw", "MinBaseTrade")
)
N_FEATURES = len(FEATURE_NAMES)
assert N_FEATURES == 54

_INDEX = {name: i for i, name in enumerate(FEATURE_NAMES)}


class VolumeBase(Enum):
    COIN = "coin"
    BTC = "btc"


class VolaKind(Enum):
    RETURN = "return"
    VOLUME_FROM = "volumefrom"
    VOLUME_TO = "volumeto"


class SplitTag(Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    TEST = "test"
    UNSPLIT = "unsplit"


@dataclass
class FeatureVector:
    """The 54 predictors for one (event, coin) observation; NaN = missing."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} features, got {self.values.shape}")

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def get(self, name: str) -> float:
        return float(self.values[_INDEX[name]])

    def as_dict(self) -> dict[str, float]:
        return {name: float(v) for name, v in zip(FEATURE_NAMES, self.values)}


@dataclass
class Observation:
    event_id: str
    coin: str
    event_time: int
    features: FeatureVector
    label: bool


@dataclass
class Dataset:
    observations: list[Observation]
    feature_names: tuple[str, ...] = FEATURE_NAMES
    split_tag: SplitTag = SplitTag.UNSPLIT

    def __len__(self) -> int:
        return len(self.observations)

    @property
    def n_positive(self) -> int:
        return sum(1 for o in self.observations if o.label)

    def to_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, y) with X float64 (NaN where missing) and y boolean."""
        X = np.empty((len(self.observations), N_FEATURES))
        y = np.empty(len(self.observations), dtype=bool)
        for i, obs in enumerate(self.observations):
            X[i] = obs.features.values
            y[i] = obs.label
        return X, y


@dataclass
class DatasetBuildReport:
    candidate_counts: dict[str, int] = field(default_factory=dict)  # event_id -> universe size
    dropped_events: list[str] = field(default_factory=list)         # pumped coin had no candles


# --------------------------------------------------------------------------
# window operations

def _open_at(series: CandleSeries, ts: int) -> Optional[float]:
    arr = series.arrays()
    i = np.searchsorted(arr["ts"], ts)
    if i < len(arr["ts"]) and arr["ts"][i] == ts:
        return float(arr["open"][i])
    return None


def _window(series: CandleSeries, start: int, end: int) -> slice:
    arr = series.arrays()
    lo = int(np.searchsorted(arr["ts"], start))
    hi = int(np.searchsorted(arr["ts"], end))
    return slice(lo, hi)


def log_return(series: CandleSeries, x: int, t0: int) -> Optional[float]:
    """x-hour log return ending one hour before the pump hour `t0`.

    ln(open(t0-1h) / open(t0-(x+1)h)); missing when either endpoint candle
    is absent or either open is non-positive.
    """
    if x not in RETURN_HORIZONS:
        raise ValueError(f"unsupported return horizon {x}")
    if t0 % HOUR != 0:
        raise ValueError("t0 must be hour-aligned")
    near = _open_at(series, t0 - HOUR)
    far = _open_at(series, t0 - (x + 1) * HOUR)
    if near is None or far is None or near <= 0 or far <= 0:
        return None
    return math.log(near / far)


def window_volume(series: CandleSeries, x: int, t0: int,
                  base: VolumeBase) -> Optional[float]:
    """Total traded volume over [t0-(x+1)h, t0-1h); missing only if no candles."""
    if x not in RETURN_HORIZONS:
        raise ValueError(f"unsupported volume horizon {x}")
    if t0 % HOUR != 0:
        raise ValueError("t0 must be hour-aligned")
    sl = _window(series, t0 - (x + 1) * HOUR, t0 - HOUR)
    if sl.start == sl.stop:
        return None
    key = "volumefrom" if base is VolumeBase.COIN else "volumeto"
    return float(series.arrays()[key][sl].sum())


def window_volatility(series: CandleSeries, y: int, t0: int,
                      kind: VolaKind) -> Optional[float]:
    """Sample standard deviation (n-1 divisor) over [t0-(y+1)h, t0-1h).

    kind=RETURN uses hourly log returns between consecutive present candles
    (open to open); the volume kinds use the raw hourly volumes.  Missing if
    fewer than two usable points remain.
    """
    if y not in VOLA_HORIZONS:
        raise ValueError(f"unsupported volatility horizon {y}")
    if t0 % HOUR != 0:
        raise ValueError("t0 must be hour-aligned")
    sl = _window(series, t0 - (y + 1) * HOUR, t0 - HOUR)
    arr = series.arrays()
    if kind is VolaKind.RETURN:
        opens = arr["open"][sl]
        if len(opens) < 2:
            return None
        valid = opens > 0
        pair_ok = valid[:-1] & valid[1:]
        if pair_ok.sum() < 2:
            return None
        rets = np.log(opens[1:][pair_ok] / opens[:-1][pair_ok])
        return float(np.std(rets, ddof=1))
    key = "volumefrom" if kind is VolaKind.VOLUME_FROM else "volumeto"
    vols = arr[key][sl]
    if len(vols) < 2:
        return None
    return float(np.std(vols, ddof=1))


# --------------------------------------------------------------------------
# feature vector and dataset assembly

_EMPTY = CandleSeries("", "")


def build_feature_vector(coin: CoinMeta, event: PumpEvent,
                         series: Optional[CandleSeries],
                         history: Sequence[PumpEvent]) -> FeatureVector:
    """Populate all 54 features for one candidate coin at one event."""
    s = series if series is not None else _EMPTY
    t0 = event.pump_hour
    values = np.full(N_FEATURES, np.nan)

    values[_INDEX["caps"]] = float(coin.cap_btc)
    for x in RETURN_HORIZONS:
        r = log_return(s, x, t0)
        values[_INDEX[f"return{x}h"]] = np.nan if r is None else r
        vf = window_volume(s, x, t0, VolumeBase.COIN)
        values[_INDEX[f"volumefrom{x}h"]] = np.nan if vf is None else vf
        vt = window_volume(s, x, t0, VolumeBase.BTC)
        values[_INDEX[f"volumeto{x}h"]] = np.nan if vt is None else vt
    for y in VOLA_HORIZONS:
        rv = window_volatility(s, y, t0, VolaKind.RETURN)
        values[_INDEX[f"returnvola{y}h"]] = np.nan if rv is None else rv
        fv = window_volatility(s, y, t0, VolaKind.VOLUME_FROM)
        values[_INDEX[f"volumefromvola{y}h"]] = np.nan if fv is None else fv
        tv = window_volatility(s, y, t0, VolaKind.VOLUME_TO)
        values[_INDEX[f"volumetovola{y}h"]] = np.nan if tv is None else tv

    last = _open_at(s, t0 - HOUR)
    values[_INDEX["lastprice"]] = np.nan if last is None else last
    values[_INDEX["age"]] = (t0 - coin.launch_time) / HOUR
    values[_INDEX["pumpedtimes"]] = count_prior_pumps(
        history, coin.coin, event.exchange, event.event_time)
    values[_INDEX["rating"]] = float(coin.rating)
    values[_INDEX["WithdrawFee"]] = float(coin.withdraw_fee)
    values[_INDEX["MinWithdraw"]] = float(coin.min_withdraw)
    values[_INDEX["MaxWithdraw"]] = float(coin.max_withdraw)
    values[_INDEX["MinBaseTrade"]] = float(coin.min_base_trade)
    return FeatureVector(values)


def event_id_of(event: PumpEvent) -> str:
    return f"{format_iso(event.event_time)}/{event.exchange}/{event.coin}"


def event_time_from_id(event_id: str) -> int:
    return parse_iso(event_id.split("/", 1)[0])


def build_dataset(events: Sequence[PumpEvent],
                  universe: Sequence[Sequence[CoinMeta]],
                  data: CandleStore,
                  history: Optional[Sequence[PumpEvent]] = None) -> Dataset:
    """One observation per (event, candidate coin); label true for the pumped coin.

    Candidates with partial data are kept with missing features set.  An event
    whose pumped coin has no candle series at all loses that observation (it
    cannot be priced or featurized) and is logged in the build report.
    """
    if len(universe) != len(events):
        raise DataError(f"universe lists ({len(universe)}) must match events ({len(events)})")
    history = events if history is None else history
    report = DatasetBuildReport()
    observations: list[Observation] = []
    for event, metas in sorted(zip(events, universe),
                               key=lambda p: (p[0].event_time, p[0].exchange, p[0].coin)):
        eid = event_id_of(event)
        report.candidate_counts[eid] = len(metas)
        for meta in sorted(metas, key=lambda m: m.coin):
            series = data.get(meta.coin, event.exchange)
            label = meta.coin == event.coin
            if label and series is None:
                report.dropped_events.append(eid)
                logger.warning("event %s: pumped coin has no candle data; observation dropped", eid)
                continue
            fv = build_feature_vector(meta, event, series, history)
            observations.append(Observation(eid, meta.coin, event.event_time, fv, label))
    ds = Dataset(observations)
    ds.build_report = report
    return ds


def chrono_split(dataset: Dataset, boundaries: tuple[int, int]) -> tuple[Dataset, Dataset, Dataset]:
    """Partition observations by event time into train / validation / test.

    Events land in train when event_time < boundaries[0], in validation when
    < boundaries[1], in test otherwise.  Any empty split is an error since it
    cannot support training or evaluation.
    """
    b1, b2 = boundaries
    if b1 >= b2:
        raise DataError(f"split boundaries must be increasing, got {b1} >= {b2}")
    parts: tuple[list[Observation], list[Observation], list[Observation]] = ([], [], [])
    for obs in dataset.observations:
        if obs.event_time < b1:
            parts[0].append(obs)
        elif obs.event_time < b2:
            parts[1].append(obs)
        else:
            parts[2].append(obs)
    tags = (SplitTag.TRAIN, SplitTag.VALIDATION, SplitTag.TEST)
    for part, tag in zip(parts, tags):
        if not part:
            raise DataError(f"empty {tag.value} split: adjust boundaries")
    return tuple(Dataset(part, dataset.feature_names, tag)  # type: ignore[return-value]
                 for part, tag in zip(parts, tags))


# --------------------------------------------------------------------------
# dataset CSV

DATASET_HEADER = ["event_id", "coin", "label", *FEATURE_NAMES]


def serialize_dataset(dataset: Dataset) -> str:
    lines = [",".join(DATASET_HEADER)]
    for obs in dataset.observations:
        cells = [obs.event_id, obs.coin, "1" if obs.label else "0"]
        for v in obs.features.values:
            cells.append("" if math.isnan(v) else repr(float(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def parse_dataset(text: str) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty dataset file")
    header = lines[0].split(",")
    if header != DATASET_HEADER:
        raise CsvFormatError(1, "dataset header does not match the fixed feature order")
    observations = []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(DATASET_HEADER):
            raise CsvFormatError(line_no, f"expected {len(DATASET_HEADER)} fields, got {len(cells)}")
        try:
            event_time = event_time_from_id(cells[0])
        except DataError:
            raise CsvFormatError(line_no, f"event_id {cells[0]!r} does not start with a timestamp") from None
        if cells[2] not in ("0", "1"):
            raise CsvFormatError(line_no, f"label must be 0 or 1, got {cells[2]!r}")
        values = np.full(N_FEATURES, np.nan)
        for j, cell in enumerate(cells[3:]):
            if cell != "":
                try:
                    values[j] = float(cell)
                except ValueError:
                    raise CsvFormatError(line_no, f"bad number {cell!r} in {FEATURE_NAMES[j]}") from None
        observations.append(Observation(cells[0], cells[1], event_time,
                                        FeatureVector(values), cells[2] == "1"))
    return Dataset(observations)
