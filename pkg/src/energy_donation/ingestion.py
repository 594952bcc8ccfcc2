"""Hourly readings in and out, synthetic readings, and the monthly money
schedules (peer balance credits and external fund deposits)."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from decimal import ROUND_HALF_UP, Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Optional, Sequence, TextIO, Union

import numpy as np

from .errors import ConfigError, IngestionError
from .model import Cents, CentsPerKwh, Wh, round_half_up

COLUMNS = ("timestamp", "peer_id", "production_kwh", "consumption_kwh")
HOUR = timedelta(hours=1)


@dataclass
class ReadingSeries:
    """Dense per-peer hourly production and consumption, in Wh."""

    timestamps: list[datetime]
    production: dict[int, list[Wh]]
    consumption: dict[int, list[Wh]]

    def __post_init__(self):
        n = len(self.timestamps)
        if set(self.production) != set(self.consumption):
            raise IngestionError("production and consumption cover different peers")
        for peer in self.production:
            if len(self.production[peer]) != n or len(self.consumption[peer]) != n:
                raise IngestionError(f"peer {peer} does not cover every timestep")

    @property
    def peers(self) -> list[int]:
        return sorted(self.production)

    def __len__(self) -> int:
        return len(self.timestamps)

    def net(self, peer: int, t: int) -> int:
        return self.production[peer][t] - self.consumption[peer][t]

    def need(self, peer: int, t: int) -> Wh:
        return max(0, self.consumption[peer][t] - self.production[peer][t])

    def surplus(self, peer: int, t: int) -> Wh:
        return max(0, self.production[peer][t] - self.consumption[peer][t])

    def is_prosumer(self, peer: int) -> bool:
        return any(self.production[peer])

    def month_keys(self) -> list[tuple[int, int]]:
        """Distinct calendar months in order of appearance."""
        keys: list[tuple[int, int]] = []
        for ts in self.timestamps:
            k = (ts.year, ts.month)
            if not keys or keys[-1] != k:
                keys.append(k)
        return keys


def _wh(text: str, row: int, column: str) -> Wh:
    try:
        kwh = Decimal(text.strip())
    except InvalidOperation:
        raise IngestionError(f"row {row}: {column} is not a number: {text!r}") from None
    if not kwh.is_finite() or kwh < 0:
        raise IngestionError(f"row {row}: {column} must be a non-negative number, got {text!r}")
    return int((kwh * 1000).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def _timestamp(text: str, row: int) -> datetime:
    try:
        ts = datetime.fromisoformat(text.strip())
    except ValueError:
        raise IngestionError(f"row {row}: bad timestamp {text!r}") from None
    if ts.minute or ts.second or ts.microsecond:
        raise IngestionError(f"row {row}: timestamp {text!r} is not on the hour")
    return ts


def parse_readings(
    source: Union[str, Path, TextIO], column_mapping: Optional[Mapping[str, str]] = None
) -> ReadingSeries:
    """Read ``timestamp,peer_id,production_kwh,consumption_kwh`` rows.

    ``column_mapping`` maps the canonical column names above to the names
    used by the file, for datasets with their own headers.
    """
    if isinstance(source, (str, Path)):
        try:
            with open(source, newline="") as fh:
                return parse_readings(fh, column_mapping)
        except OSError as exc:
            raise IngestionError(f"cannot read readings file {source}: {exc.strerror}") from None

    names = {c: (column_mapping or {}).get(c, c) for c in COLUMNS}
    reader = csv.DictReader(source)
    missing = [names[c] for c in COLUMNS if names[c] not in (reader.fieldnames or [])]
    if missing:
        raise IngestionError(f"readings header lacks columns: {', '.join(missing)}")

    cells: dict[tuple[int, datetime], tuple[Wh, Wh]] = {}
    for row_no, row in enumerate(reader, start=2):
        if None in row or None in row.values():
            raise IngestionError(f"row {row_no}: wrong number of fields")
        try:
            peer = int(row[names["peer_id"]])
        except ValueError:
            raise IngestionError(f"row {row_no}: bad peer_id {row[names['peer_id']]!r}") from None
        ts = _timestamp(row[names["timestamp"]], row_no)
        key = (peer, ts)
        if key in cells:
            raise IngestionError(f"row {row_no}: duplicate reading for peer {peer} at {ts.isoformat()}")
        cells[key] = (
            _wh(row[names["production_kwh"]], row_no, "production_kwh"),
            _wh(row[names["consumption_kwh"]], row_no, "consumption_kwh"),
        )
    if not cells:
        raise IngestionError("readings file has no data rows")

    peers = sorted({p for p, _ in cells})
    start = min(ts for _, ts in cells)
    end = max(ts for _, ts in cells)
    timestamps = []
    ts = start
    while ts <= end:
        timestamps.append(ts)
        ts += HOUR
    production: dict[int, list[Wh]] = {}
    consumption: dict[int, list[Wh]] = {}
    for peer in peers:
        prod, cons = [], []
        for ts in timestamps:
            cell = cells.get((peer, ts))
            if cell is None:
                raise IngestionError(f"coverage gap: peer {peer} has no reading at {ts.isoformat()}")
            prod.append(cell[0])
            cons.append(cell[1])
        production[peer] = prod
        consumption[peer] = cons
    return ReadingSeries(timestamps, production, consumption)


def _kwh_text(wh: Wh) -> str:
    return f"{wh // 1000}.{wh % 1000:03d}"


def write_readings(series: ReadingSeries, dest: Union[str, Path, TextIO]) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            write_readings(series, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(COLUMNS)
    for t, ts in enumerate(series.timestamps):
        stamp = ts.isoformat(timespec="minutes")
        for peer in series.peers:
            w.writerow([stamp, peer, _kwh_text(series.production[peer][t]),
                        _kwh_text(series.consumption[peer][t])])


def readings_to_csv(series: ReadingSeries) -> str:
    buf = io.StringIO()
    write_readings(series, buf)
    return buf.getvalue()


# -- synthetic data -----------------------------------------------------------

@dataclass
class SyntheticConfig:
    peer_count: int
    months: int
    seed: int
    start: str = "2021-09-01"
    prosumer_fraction: float = 0.6
    pv_capacity_kw: float = 5.0
    base_load_kw: float = 0.8
    diurnal_amplitude: float = 0.8
    noise_scale: float = 0.15

    def __post_init__(self):
        if self.peer_count < 2:
            raise ConfigError(f"peer_count must be at least 2, got {self.peer_count}")
        if self.months < 1:
            raise ConfigError(f"months must be at least 1, got {self.months}")
        if not 0 <= self.prosumer_fraction <= 1:
            raise ConfigError("prosumer_fraction must lie in [0, 1]")
        if min(self.pv_capacity_kw, self.base_load_kw, self.diurnal_amplitude, self.noise_scale) < 0:
            raise ConfigError("synthetic scale parameters must be non-negative")
        try:
            first = datetime.fromisoformat(self.start)
        except ValueError:
            raise ConfigError(f"bad synthetic start date {self.start!r}") from None
        if first.day != 1 or first.hour or first.minute:
            raise ConfigError("synthetic start must be midnight on the first of a month")

    @classmethod
    def from_dict(cls, data: Mapping) -> "SyntheticConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown synthetic keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(f"synthetic config: {exc}") from None


def month_hours(start: datetime, months: int) -> list[datetime]:
    y, m = start.year, start.month + months
    y, m = y + (m - 1) // 12, (m - 1) % 12 + 1
    end = datetime(y, m, 1)
    n = int((end - start) / HOUR)
    return [start + i * HOUR for i in range(n)]


def generate_synthetic(config: SyntheticConfig) -> ReadingSeries:
    """Seeded household-like load and rooftop-PV profiles.

    Consumers never produce. Prosumers produce between 06:00 and 18:00 with a
    half-sine daily shape scaled by a per-day cloudiness factor.
    """
    rng = np.random.default_rng(config.seed)
    timestamps = month_hours(datetime.fromisoformat(config.start), config.months)
    n = len(timestamps)
    hour = np.array([ts.hour for ts in timestamps], dtype=float)
    day = np.arange(n) // 24
    n_days = int(day[-1]) + 1

    n_prosumers = int(config.prosumer_fraction * config.peer_count + 0.5)
    prosumers = set(int(i) for i in rng.permutation(config.peer_count)[:n_prosumers])

    load_shape = 1 + config.diurnal_amplitude * (
        np.exp(-((hour - 8) ** 2) / 4) + 1.5 * np.exp(-((hour - 19) ** 2) / 6)
    )
    sun = np.clip(np.sin(np.pi * (hour - 6) / 12), 0, None)

    production: dict[int, list[Wh]] = {}
    consumption: dict[int, list[Wh]] = {}
    for i in range(config.peer_count):
        base = config.base_load_kw * rng.uniform(0.5, 1.5)
        load = base * load_shape * (1 + config.noise_scale * rng.standard_normal(n))
        if i in prosumers:
            capacity = config.pv_capacity_kw * rng.uniform(0.5, 1.5)
            cloud = rng.uniform(0.3, 1.0, n_days)[day]
            gen = capacity * sun * cloud * (1 + config.noise_scale * rng.standard_normal(n))
        else:
            gen = np.zeros(n)
        peer_id = i + 1
        production[peer_id] = _to_wh(gen)
        consumption[peer_id] = _to_wh(load)
    return ReadingSeries(timestamps, production, consumption)


def _to_wh(kw: np.ndarray) -> list[Wh]:
    return [int(v) for v in np.floor(np.clip(kw, 0, None) * 1000 + 0.5)]


# -- prices and money schedules -------------------------------------------------

def load_utility_prices(spec: Union[int, str, Path], timestamps: Sequence[datetime]) -> list[CentsPerKwh]:
    """A constant price, or a CSV ``timestamp,price_cents_per_kwh`` covering every hour."""
    if isinstance(spec, bool):
        raise ConfigError("utility price must be an integer or a CSV path")
    if isinstance(spec, int):
        if spec < 0:
            raise ConfigError("utility price must be non-negative")
        return [spec] * len(timestamps)
    path = Path(spec)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read utility price file {path}: {exc.strerror}") from None
    prices: dict[datetime, int] = {}
    for row_no, row in enumerate(rows, start=2):
        try:
            ts = _timestamp(row["timestamp"], row_no)
            price = int(row["price_cents_per_kwh"])
        except (KeyError, TypeError, ValueError, IngestionError) as exc:
            raise ConfigError(f"{path} row {row_no}: {exc}") from None
        if price < 0:
            raise ConfigError(f"{path} row {row_no}: negative price")
        prices[ts] = price
    missing = [ts for ts in timestamps if ts not in prices]
    if missing:
        raise ConfigError(f"{path} has no utility price for {missing[0].isoformat()}")
    return [prices[ts] for ts in timestamps]


def as_fraction(value) -> Fraction:
    if isinstance(value, float):
        value = repr(value)
    try:
        return Fraction(value)
    except (TypeError, ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {value!r}") from None


@dataclass
class BalanceSchedule:
    percentage: Fraction
    months: list[tuple[int, int]]
    credits: dict[int, list[Cents]] = field(default_factory=dict)

    def credit(self, peer: int, month: int) -> Cents:
        return self.credits[peer][month]

    def monthly_totals(self) -> list[Cents]:
        return [sum(c[m] for c in self.credits.values()) for m in range(len(self.months))]


@dataclass
class DonationSchedule:
    months: list[tuple[int, int]]
    deposit: Cents

    def total(self) -> Cents:
        return self.deposit * len(self.months)


def build_balance_schedule(
    readings: ReadingSeries, utility_prices: Sequence[CentsPerKwh], percentage
) -> BalanceSchedule:
    """Monthly credit = percentage of what the peer's hourly need would cost at grid price."""
    pct = as_fraction(percentage)
    if pct <= 0:
        raise ConfigError("balance percentage must be positive")
    months = readings.month_keys()
    index = {k: i for i, k in enumerate(months)}
    step_month = [index[(ts.year, ts.month)] for ts in readings.timestamps]
    credits: dict[int, list[Cents]] = {}
    for peer in readings.peers:
        # Wh * cents/kWh accumulates in milli-cents
        owed = [0] * len(months)
        prod, cons = readings.production[peer], readings.consumption[peer]
        for t, m in enumerate(step_month):
            need = cons[t] - prod[t]
            if need > 0:
                owed[m] += need * utility_prices[t]
        credits[peer] = [round_half_up(pct.numerator * o, pct.denominator * 1000) for o in owed]
    return BalanceSchedule(pct, months, credits)


def build_donation_schedule(balances: BalanceSchedule) -> DonationSchedule:
    """Constant monthly fund deposit: the mean of the community's monthly credits."""
    if not balances.months:
        raise ConfigError("donation schedule needs at least one month")
    totals = balances.monthly_totals()
    return DonationSchedule(list(balances.months), round_half_up(sum(totals), len(totals)))
