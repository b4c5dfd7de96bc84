"""Charge-session ingestion, cleansing, profile inference and exogenous series.

Also hosts the deterministic synthetic fleet/price/weather generators used by
tests and desk-scale sweeps in place of the charger dataset.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Iterable, Optional

import numpy as np

MAX_SESSION_HOURS = 168.0
P_MAX_FLOOR_KW = 7.0
E_MAX_FLOOR_KWH = 16.0
DEFAULT_ETA = 0.9


@dataclass(frozen=True)
class ChargeSession:
    charger_id: str
    plug_in: datetime
    plug_out: datetime
    energy_kwh: float

    @property
    def duration_h(self) -> float:
        return (self.plug_out - self.plug_in).total_seconds() / 3600.0


@dataclass(frozen=True)
class EvProfile:
    charger_id: str
    p_max: float
    e_max: float
    eta: float = DEFAULT_ETA


@dataclass(frozen=True)
class RowError:
    line: int
    message: str


@dataclass
class ParseResult:
    sessions: list
    errors: list
    n_rows: int


DEFAULT_SCHEMA = {
    "charger_id": "charger_id",
    "plug_in": "plug_in",
    "plug_out": "plug_out",
    "energy_kwh": "energy_kwh",
}


class DataError(Exception):
    """Input data is missing, malformed or does not cover the requested span."""


def _text_stream(raw) -> io.TextIOBase:
    if isinstance(raw, (bytes, bytearray)):
        return io.StringIO(raw.decode("utf-8-sig"))
    if isinstance(raw, (str, os.PathLike)) and os.path.exists(raw):
        return open(raw, encoding="utf-8-sig", newline="")
    if isinstance(raw, str):
        return io.StringIO(raw)
    if hasattr(raw, "read"):
        data = raw.read()
        return io.StringIO(data.decode("utf-8-sig") if isinstance(data, bytes) else data)
    raise TypeError(f"cannot read sessions from {type(raw).__name__}")


def parse_sessions(raw, schema: Optional[dict] = None) -> ParseResult:
    """Parse a sessions CSV into :class:`ChargeSession` records.

    ``raw`` may be bytes, text, a path or a file object. Malformed rows never
    abort the parse; they are collected as :class:`RowError` with the 1-based
    file line number (the header is line 1).
    """
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    with _text_stream(raw) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return ParseResult([], [], 0)
        missing = [c for c in schema.values() if c not in reader.fieldnames]
        if missing:
            raise DataError(f"sessions header lacks column(s): {', '.join(missing)}")
        sessions, errors = [], []
        n_rows = 0
        for n_rows, row in enumerate(reader, start=1):
            line = reader.line_num
            try:
                cid = (row[schema["charger_id"]] or "").strip()
                if not cid:
                    raise ValueError("empty charger_id")
                t_in = datetime.fromisoformat(row[schema["plug_in"]].strip())
                t_out = datetime.fromisoformat(row[schema["plug_out"]].strip())
                energy = float(row[schema["energy_kwh"]])
                if not math.isfinite(energy) or energy < 0:
                    raise ValueError(f"energy_kwh must be a non-negative number, got {energy}")
                if t_out <= t_in:
                    raise ValueError("plug_out is not after plug_in")
            except (ValueError, TypeError, AttributeError) as exc:
                errors.append(RowError(line, str(exc)))
                continue
            sessions.append(ChargeSession(cid, t_in, t_out, energy))
    return ParseResult(sessions, errors, n_rows)


def write_sessions_csv(sessions: Iterable[ChargeSession], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["charger_id", "plug_in", "plug_out", "energy_kwh"])
        for s in sessions:
            w.writerow([s.charger_id, s.plug_in.isoformat(), s.plug_out.isoformat(),
                        repr(float(s.energy_kwh))])


def cleanse_sessions(sessions: Iterable[ChargeSession]):
    """Drop over-long sessions and every member of an overlapping pair.

    Returns ``(kept, dropped)`` where ``kept`` is sorted by
    ``(charger_id, plug_in)`` and ``dropped`` holds ``(session, reason)``.
    A session lasting exactly 168 h is kept. Sessions that merely touch
    (one plugs out as the next plugs in) do not overlap.
    """
    dropped = []
    by_charger: dict = {}
    for s in sessions:
        if s.plug_out <= s.plug_in or s.energy_kwh < 0:
            dropped.append((s, "invalid"))
        elif s.duration_h > MAX_SESSION_HOURS:
            dropped.append((s, "duration>168h"))
        else:
            by_charger.setdefault(s.charger_id, []).append(s)

    kept = []
    for cid in sorted(by_charger):
        group = sorted(by_charger[cid], key=lambda s: (s.plug_in, s.plug_out, s.energy_kwh))
        overlap = [False] * len(group)
        latest_end, latest_idx = None, -1
        for i, s in enumerate(group):
            if latest_end is not None and s.plug_in < latest_end:
                overlap[i] = True
                overlap[latest_idx] = True
            if latest_end is None or s.plug_out > latest_end:
                latest_end, latest_idx = s.plug_out, i
        for s, bad in zip(group, overlap):
            if bad:
                dropped.append((s, "overlap"))
            else:
                kept.append(s)
    return kept, dropped


def infer_profiles(sessions: Iterable[ChargeSession], eta: float = DEFAULT_ETA,
                   p_floor: float = P_MAX_FLOOR_KW, e_floor: float = E_MAX_FLOOR_KWH) -> dict:
    """Per-charger rated power and battery size from the observed sessions.

    Rated power is the highest mean charging power seen at the charger and
    capacity the largest single-session energy, each floored (7 kW, 16 kWh
    by default) for chargers that never showed their limits.
    """
    if not 0 < eta <= 1:
        raise ValueError("eta must lie in (0, 1]")
    p_seen: dict = {}
    e_seen: dict = {}
    for s in sessions:
        p = s.energy_kwh / s.duration_h
        p_seen[s.charger_id] = max(p_seen.get(s.charger_id, 0.0), p)
        e_seen[s.charger_id] = max(e_seen.get(s.charger_id, 0.0), s.energy_kwh)
    return {cid: EvProfile(cid, max(p_seen[cid], p_floor), max(e_seen[cid], e_floor), eta)
            for cid in sorted(p_seen)}


# --------------------------------------------------------------------------
# exogenous series


@dataclass(frozen=True)
class ReserveTariff:
    """Built-in time-of-day reserve tariff in GBP/MW per settlement."""

    day_price: float = 1.41
    night_price: float = 0.31
    day_start_h: float = 7.0
    day_end_h: float = 23.0
    neg_fraction: float = 0.3

    def positive(self, ts: datetime) -> float:
        h = ts.hour + ts.minute / 60.0
        return self.day_price if self.day_start_h <= h < self.day_end_h else self.night_price

    def prices(self, ts: datetime) -> tuple:
        pos = self.positive(ts)
        return pos, self.neg_fraction * pos


@dataclass
class ExogenousSeries:
    start: datetime
    dt_h: float
    wholesale_price: np.ndarray  # GBP/kWh per settlement
    reserve_price_pos: np.ndarray  # GBP/MW per settlement
    reserve_price_neg: np.ndarray
    dates: list = field(default_factory=list)
    temp_c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    precip_mm: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bank_holiday: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def mean_price(self) -> float:
        return float(np.mean(self.wholesale_price))

    @property
    def day_of_week(self) -> np.ndarray:
        return np.array([d.weekday() for d in self.dates], dtype=int)

    @property
    def n(self) -> int:
        return self.wholesale_price.size

    def day_index(self, d: date) -> int:
        return (d - self.dates[0]).days


def _settlement_times(start: datetime, n: int, dt_h: float):
    return [start + timedelta(hours=dt_h * k) for k in range(n)]


def load_exogenous(price_csv, weather_csv, span_start: datetime, span_end: datetime,
                   tariff: Optional[ReserveTariff] = None, dt_h: float = 0.5) -> ExogenousSeries:
    """Load wholesale prices and daily weather covering ``[span_start, span_end)``.

    Reserve prices come from the built-in time-of-day tariff (negative reserve
    at a fixed fraction of positive). Raises :class:`DataError` naming the
    first missing settlement or day.
    """
    tariff = tariff or ReserveTariff()
    n = int(round((span_end - span_start).total_seconds() / 3600.0 / dt_h))
    if n < 1:
        raise DataError("empty simulation span")
    prices = {}
    with _text_stream(price_csv) as fh:
        for i, row in enumerate(csv.DictReader(fh), start=2):
            try:
                prices[datetime.fromisoformat(row["timestamp"].strip())] = float(row["gbp_per_kwh"])
            except (KeyError, ValueError, AttributeError) as exc:
                raise DataError(f"price file line {i}: {exc}") from None
    times = _settlement_times(span_start, n, dt_h)
    wholesale = np.empty(n)
    for k, ts in enumerate(times):
        if ts not in prices:
            raise DataError(f"price series has a gap at {ts.isoformat()}")
        wholesale[k] = prices[ts]
    pos = np.array([tariff.positive(ts) for ts in times])

    weather = {}
    with _text_stream(weather_csv) as fh:
        for i, row in enumerate(csv.DictReader(fh), start=2):
            try:
                weather[date.fromisoformat(row["date"].strip())] = (
                    float(row["temp_c"]), float(row["precip_mm"]), int(float(row["bank_holiday"])))
            except (KeyError, ValueError, AttributeError) as exc:
                raise DataError(f"weather file line {i}: {exc}") from None
    dates = []
    d = span_start.date()
    last = (span_end - timedelta(microseconds=1)).date()
    while d <= last:
        if d not in weather:
            raise DataError(f"weather series has a gap at {d.isoformat()}")
        dates.append(d)
        d += timedelta(days=1)
    w = np.array([weather[d] for d in dates], dtype=float)
    return ExogenousSeries(span_start, dt_h, wholesale, pos, tariff.neg_fraction * pos,
                           dates, w[:, 0], w[:, 1], w[:, 2].astype(int))


def write_prices_csv(start: datetime, prices, path, dt_h: float = 0.5) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "gbp_per_kwh"])
        for ts, p in zip(_settlement_times(start, len(prices), dt_h), prices):
            w.writerow([ts.isoformat(), repr(float(p))])


def write_weather_csv(dates, temp_c, precip_mm, bank_holiday, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "temp_c", "precip_mm", "bank_holiday"])
        for d, t, p, b in zip(dates, temp_c, precip_mm, bank_holiday):
            w.writerow([d.isoformat(), repr(float(t)), repr(float(p)), int(b)])


# --------------------------------------------------------------------------
# synthetic data


def _nth_weekday(year: int, month: int, weekday: int, n: int) -> date:
    d = date(year, month, 1)
    d += timedelta(days=(weekday - d.weekday()) % 7)
    return d + timedelta(weeks=n - 1)


def _last_weekday(year: int, month: int, weekday: int) -> date:
    d = date(year + (month == 12), month % 12 + 1, 1) - timedelta(days=1)
    return d - timedelta(days=(d.weekday() - weekday) % 7)


def bank_holidays(year: int) -> set:
    """Fixed-rule England bank holidays (Easter-dependent days omitted)."""
    return {
        date(year, 1, 1), _nth_weekday(year, 5, 0, 1), _last_weekday(year, 5, 0),
        _last_weekday(year, 8, 0), date(year, 12, 25), date(year, 12, 26),
    }


@dataclass(frozen=True)
class SyntheticWeather:
    dates: list
    temp_c: np.ndarray
    precip_mm: np.ndarray
    bank_holiday: np.ndarray


def synthetic_weather(seed: int, start: date, days: int) -> SyntheticWeather:
    """Seasonal temperature with AR(1) anomalies and intermittent rainfall."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x57])))
    dates = [start + timedelta(days=i) for i in range(days)]
    doy = np.array([d.timetuple().tm_yday for d in dates], dtype=float)
    seasonal = 10.5 - 6.0 * np.cos(2 * np.pi * (doy - 20.0) / 365.25)
    anomaly = np.empty(days)
    a = 0.0
    for i in range(days):
        a = 0.7 * a + rng.normal(0.0, 2.0)
        anomaly[i] = a
    wet = rng.random(days) < 0.45
    precip = np.where(wet, rng.exponential(4.0, days), 0.0)
    holidays = set()
    for y in {d.year for d in dates}:
        holidays |= bank_holidays(y)
    bank = np.array([int(d in holidays) for d in dates])
    return SyntheticWeather(dates, np.round(seasonal + anomaly, 2), np.round(precip, 2), bank)


@dataclass(frozen=True)
class FleetArchetype:
    """Behavioural parameters of the synthetic domestic-charging population."""

    plug_prob_weekday: tuple = (0.55, 0.9)
    weekend_plug_factor: float = 0.8
    rain_plug_boost: float = 0.05
    arrival_mean_h: float = 18.0
    arrival_habit_sd_h: float = 1.0
    arrival_daily_sd_h: float = 1.2
    departure_mean_h: float = 7.5
    departure_habit_sd_h: float = 0.7
    departure_daily_sd_h: float = 0.8
    weekend_arrival_shift_h: float = -2.0
    weekend_departure_shift_h: float = 1.5
    daily_kwh_log_mean: float = 2.0
    daily_kwh_log_sd: float = 0.35
    daily_kwh_noise_sd: float = 0.25
    temp_sensitivity: float = 0.025
    temp_reference_c: float = 12.0
    weekend_drive_factor: float = 0.8
    topup_prob: float = 0.08
    charger_kw: tuple = (7.0, 7.4, 11.0)
    charger_weights: tuple = (0.7, 0.15, 0.15)
    battery_kwh: tuple = (40.0, 50.0, 60.0, 77.0)
    min_session_h: float = 2.0


def _ev_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xEF, index])))


def _minute(t: datetime) -> datetime:
    return (t + timedelta(seconds=30)).replace(second=0, microsecond=0)


def generate_synthetic_fleet(seed: int, n_ev: int, days: int,
                             params: Optional[FleetArchetype] = None,
                             start: date = date(2023, 1, 2),
                             weather: Optional[SyntheticWeather] = None) -> list:
    """Deterministic domestic charging sessions for ``n_ev`` chargers.

    Each EV draws from its own seed stream, so the first ``k`` vehicles of a
    larger fleet are identical to a fleet of size ``k``. Evening arrivals and
    morning departures dominate; energy tracks the driving accumulated since
    the last charge, which grows in cold weather and shrinks at weekends.
    """
    if n_ev <= 0 or days <= 0:
        return []
    params = params or FleetArchetype()
    weather = weather or synthetic_weather(seed, start, days)
    temp = weather.temp_c
    precip = weather.precip_mm
    offdays = np.array([d.weekday() >= 5 or bool(b)
                        for d, b in zip(weather.dates, weather.bank_holiday)])
    base = datetime.combine(start, datetime.min.time())
    sessions = []
    for i in range(n_ev):
        rng = _ev_rng(seed, i)
        cid = f"EV{i:05d}"
        p_kw = float(rng.choice(params.charger_kw, p=params.charger_weights))
        battery = float(rng.choice(params.battery_kwh))
        p_plug = rng.uniform(*params.plug_prob_weekday)
        arr_mean = params.arrival_mean_h + rng.normal(0, params.arrival_habit_sd_h)
        dep_mean = params.departure_mean_h + rng.normal(0, params.departure_habit_sd_h)
        drive_mean = float(np.exp(rng.normal(params.daily_kwh_log_mean, params.daily_kwh_log_sd)))
        pending = drive_mean * rng.uniform(0.5, 1.5)
        last_out = base - timedelta(hours=1)
        for d in range(days):
            off = offdays[d]
            factor = 1.0 + params.temp_sensitivity * (params.temp_reference_c - temp[d])
            drive = drive_mean * max(factor, 0.3) * (params.weekend_drive_factor if off else 1.0)
            pending += drive * float(np.exp(rng.normal(0, params.daily_kwh_noise_sd)))
            day0 = base + timedelta(days=d)

            # draws happen unconditionally so the stream layout never depends on outcomes
            u_topup, topup_at, topup_len = rng.random(), rng.uniform(10.0, 14.0), rng.uniform(1.0, 2.5)
            u_plug = rng.random()
            arr = arr_mean + rng.normal(0, params.arrival_daily_sd_h)
            dep = dep_mean + rng.normal(0, params.departure_daily_sd_h)
            if off:
                arr += params.weekend_arrival_shift_h * abs(rng.normal(1.0, 0.5))
                dep += params.weekend_departure_shift_h
            else:
                rng.normal(1.0, 0.5)

            if u_topup < params.topup_prob:
                t_in = _minute(day0 + timedelta(hours=topup_at))
                t_out = _minute(t_in + timedelta(hours=topup_len))
                if t_in > last_out:
                    e = float(round(min(0.95 * p_kw * (t_out - t_in).total_seconds() / 3600.0,
                                        pending, 0.9 * battery), 3))
                    if e > 0.5:
                        sessions.append(ChargeSession(cid, t_in, t_out, e))
                        pending -= e
                        last_out = t_out

            prob = p_plug * (params.weekend_plug_factor if off else 1.0)
            prob += params.rain_plug_boost * (precip[d] > 5.0)
            if u_plug >= min(prob, 0.98):
                continue
            t_in = _minute(day0 + timedelta(hours=float(np.clip(arr, 12.0, 23.5))))
            t_out = _minute(day0 + timedelta(hours=24.0 + float(np.clip(dep, 4.0, 11.5))))
            if t_in <= last_out or (t_out - t_in).total_seconds() < params.min_session_h * 3600:
                continue
            hours = (t_out - t_in).total_seconds() / 3600.0
            e = float(round(min(pending, 0.9 * battery, 0.95 * p_kw * hours), 3))
            if e <= 0:
                continue
            sessions.append(ChargeSession(cid, t_in, t_out, e))
            pending -= e
            last_out = t_out
    return sessions


def synthetic_prices(seed: int, start: datetime, days: int, dt_h: float = 0.5) -> np.ndarray:
    """Wholesale GBP/kWh per settlement with a cheap night and an evening peak."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x9C])))
    per_day = int(round(24 / dt_h))
    hours = np.arange(per_day) * dt_h
    shape = (0.045
             + 0.020 * ((hours >= 6.5) & (hours < 16.0))
             + 0.060 * ((hours >= 16.0) & (hours < 20.0))
             + 0.020 * ((hours >= 20.0) & (hours < 23.0))
             - 0.010 * ((hours >= 1.0) & (hours < 5.0)))
    level = 1.0 + 0.15 * rng.standard_normal(days)
    noise = 0.006 * rng.standard_normal((days, per_day))
    prices = shape[None, :] * level[:, None] + noise
    return np.round(prices.ravel(), 5)


def synthetic_exogenous(seed: int, start: date, days: int,
                        tariff: Optional[ReserveTariff] = None, dt_h: float = 0.5,
                        weather: Optional[SyntheticWeather] = None) -> ExogenousSeries:
    tariff = tariff or ReserveTariff()
    weather = weather or synthetic_weather(seed, start, days)
    t0 = datetime.combine(start, datetime.min.time())
    wholesale = synthetic_prices(seed, t0, days, dt_h)
    pos = np.array([tariff.positive(ts) for ts in _settlement_times(t0, wholesale.size, dt_h)])
    return ExogenousSeries(t0, dt_h, wholesale, pos, tariff.neg_fraction * pos,
                           list(weather.dates), weather.temp_c, weather.precip_mm,
                           weather.bank_holiday)
