"""Individual flexibility windows and the fleet's aggregate envelope.

Energies are vehicle-side and relative: every EV contributes zero at its
arrival and its flexible energy once its flexible window has closed, so the
aggregate boundaries are cumulative net-charge curves. The final slice of
each session (the slow, high-SOC tail charged at half power right before
plug-out) is removed from the flexible window and reported as fixed load.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Optional, Union

import numpy as np

from .fleet_data import ChargeSession, EvProfile

DEFAULT_FLOOR_FRACTION = 0.2
DEFAULT_TAIL_FRACTION = 0.2
_FIT_TOL = 1e-9


@dataclass(frozen=True)
class SettlementGrid:
    start: datetime
    dt: float = 0.5
    n: int = 48

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("settlement duration must be positive")
        if self.n < 1:
            raise ValueError("grid needs at least one settlement")

    def index_of(self, ts: datetime) -> float:
        """Fractional grid position of ``ts`` (0 at ``start``)."""
        return (ts - self.start).total_seconds() / 3600.0 / self.dt


@dataclass(frozen=True)
class FlexibleWindow:
    charger_id: str
    t_a: float
    t_flex_end: float
    t_d: float
    flex_energy_kwh: float
    tail_energy_kwh: float
    e_floor_rel_kwh: float
    p_max: float
    eta: float


@dataclass(frozen=True)
class Inflexible:
    """Session too short for flexibility: direct charge at full power from arrival."""

    charger_id: str
    t_a: float
    t_d: float
    t_end: float  # grid position where direct charging stops (capped at plug-out)
    energy_kwh: float
    p_max: float
    eta: float


def flexible_window(profile: EvProfile, session: ChargeSession, grid: SettlementGrid,
                    floor_fraction: float = DEFAULT_FLOOR_FRACTION,
                    tail_fraction: float = DEFAULT_TAIL_FRACTION) -> Union[FlexibleWindow, Inflexible]:
    """Split a session into a flexible window and a half-power SOC tail.

    The tail ``min(tail_fraction * e_max, energy)`` is charged at ``p_max/2``
    immediately before plug-out; what remains must fit into the time left at
    full power, otherwise the session is classified :class:`Inflexible`.
    """
    eta, p_max, e_max = profile.eta, profile.p_max, profile.e_max
    dt = grid.dt
    t_a = grid.index_of(session.plug_in)
    t_d = grid.index_of(session.plug_out)
    energy = float(session.energy_kwh)
    tail = min(tail_fraction * e_max, energy)
    tail_hours = tail / (eta * p_max / 2.0)
    t_flex_end = t_d - tail_hours / dt
    flex = energy - tail
    if t_flex_end < t_a or flex > eta * p_max * (t_flex_end - t_a) * dt * (1 + _FIT_TOL):
        t_end = min(t_a + energy / (eta * p_max) / dt, t_d)
        return Inflexible(session.charger_id, t_a, t_d, t_end, energy, p_max, eta)
    e_arrival = e_max - energy
    e_floor_rel = min(floor_fraction * e_max - e_arrival, 0.0)
    return FlexibleWindow(session.charger_id, t_a, t_flex_end, t_d, flex, tail,
                          e_floor_rel, p_max, eta)


def _instant_bounds(win: FlexibleWindow, idx: np.ndarray, dt: float):
    """Upper/lower relative energy at grid instants ``idx``."""
    charge_rate = win.eta * win.p_max * dt
    since = idx - win.t_a
    until = win.t_flex_end - idx
    u = np.minimum(charge_rate * since, win.flex_energy_kwh)
    l = np.maximum(np.maximum(win.e_floor_rel_kwh, -win.p_max * dt * since),
                   win.flex_energy_kwh - charge_rate * until)
    l = np.minimum(l, u)
    before = idx <= win.t_a
    after = idx > win.t_flex_end
    u = np.where(before, 0.0, np.where(after, win.flex_energy_kwh, u))
    l = np.where(before, 0.0, np.where(after, win.flex_energy_kwh, l))
    return u, l


def _overlap(lo: float, hi: float, idx: np.ndarray) -> np.ndarray:
    """Fraction of each settlement ``[k, k+1)`` covered by ``[lo, hi)``."""
    return np.clip(np.minimum(idx + 1.0, hi) - np.maximum(idx, lo), 0.0, 1.0)


def individual_boundaries(win: FlexibleWindow, grid: SettlementGrid):
    """Per-EV ``(u, l, pb)`` over the whole grid.

    ``u`` and ``l`` are energies at the grid instants (start of each
    settlement); ``pb`` is the settlement's power bound, prorated where the
    flexible window covers only part of it.
    """
    idx = np.arange(grid.n, dtype=float)
    u, l = _instant_bounds(win, idx, grid.dt)
    pb = win.p_max * _overlap(win.t_a, win.t_flex_end, idx)
    return u, l, pb


@dataclass
class AggregateEnvelope:
    e_upper: np.ndarray
    e_lower: np.ndarray
    p_bound: np.ndarray
    tail_load: np.ndarray
    n_connected: np.ndarray

    @property
    def e_diff(self) -> np.ndarray:
        return self.e_upper - self.e_lower

    @property
    def n(self) -> int:
        return self.e_upper.size

    @classmethod
    def zeros(cls, n: int) -> "AggregateEnvelope":
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64))

    def __add__(self, other: "AggregateEnvelope") -> "AggregateEnvelope":
        return AggregateEnvelope(self.e_upper + other.e_upper, self.e_lower + other.e_lower,
                                 self.p_bound + other.p_bound, self.tail_load + other.tail_load,
                                 self.n_connected + other.n_connected)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["settlement", "e_upper", "e_lower", "p_bound", "tail_load", "n_connected"])
            for t in range(self.n):
                w.writerow([t, repr(float(self.e_upper[t])), repr(float(self.e_lower[t])),
                            repr(float(self.p_bound[t])), repr(float(self.tail_load[t])),
                            int(self.n_connected[t])])

    @classmethod
    def from_csv(cls, path) -> "AggregateEnvelope":
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        return cls(col("e_upper"), col("e_lower"), col("p_bound"), col("tail_load"),
                   col("n_connected").astype(np.int64))


def aggregate_envelope(windows: Iterable[Union[FlexibleWindow, Inflexible]],
                       grid: SettlementGrid) -> AggregateEnvelope:
    """Pointwise sum of the individual boundaries of ``windows``.

    Contributions are accumulated window by window in input order, so the
    result is bit-identical to summing :func:`individual_boundaries` arrays
    in that order. Tails and inflexible sessions only feed ``tail_load``.
    """
    n, dt = grid.n, grid.dt
    env = AggregateEnvelope.zeros(n)
    for win in windows:
        if isinstance(win, Inflexible):
            _add_fixed_load(env.tail_load, win.t_a, win.t_end, win.p_max, n)
            continue
        k0 = max(0, math.floor(win.t_a) + 1)
        k1 = min(n, math.floor(win.t_flex_end) + 1)
        if k1 > k0:
            u, l = _instant_bounds(win, np.arange(k0, k1, dtype=float), dt)
            env.e_upper[k0:k1] += u
            env.e_lower[k0:k1] += l
        k_after = max(k1, k0)
        if k_after < n and win.flex_energy_kwh != 0.0:
            env.e_upper[k_after:] += win.flex_energy_kwh
            env.e_lower[k_after:] += win.flex_energy_kwh
        s0 = max(0, math.floor(win.t_a))
        s1 = min(n, math.ceil(win.t_flex_end))
        if s1 > s0:
            cover = _overlap(win.t_a, win.t_flex_end, np.arange(s0, s1, dtype=float))
            env.p_bound[s0:s1] += win.p_max * cover
            env.n_connected[s0:s1] += (cover > 0)
        _add_fixed_load(env.tail_load, win.t_flex_end, win.t_d, win.p_max / 2.0, n)
    return env


def _add_fixed_load(load: np.ndarray, lo: float, hi: float, power: float, n: int) -> None:
    s0 = max(0, math.floor(lo))
    s1 = min(n, math.ceil(hi))
    if s1 > s0 and hi > lo:
        load[s0:s1] += power * _overlap(lo, hi, np.arange(s0, s1, dtype=float))


def build_windows(sessions: Iterable[ChargeSession], profiles: dict, grid: SettlementGrid,
                  floor_fraction: float = DEFAULT_FLOOR_FRACTION,
                  tail_fraction: float = DEFAULT_TAIL_FRACTION) -> list:
    """Windows for every session whose charger has a profile, in input order."""
    return [flexible_window(profiles[s.charger_id], s, grid, floor_fraction, tail_fraction)
            for s in sessions if s.charger_id in profiles]


def charge_on_arrival(windows: Iterable[Union[FlexibleWindow, Inflexible]],
                      grid: SettlementGrid) -> np.ndarray:
    """Grid-side kW per settlement if every session charges at full power on arrival.

    Charging stops once the session's energy (flexible part plus tail) is in
    the battery or the EV plugs out, whichever comes first.
    """
    load = np.zeros(grid.n)
    for win in windows:
        if isinstance(win, Inflexible):
            energy = win.energy_kwh
        else:
            energy = win.flex_energy_kwh + win.tail_energy_kwh
        hours = energy / (win.eta * win.p_max)
        _add_fixed_load(load, win.t_a, min(win.t_a + hours / grid.dt, win.t_d), win.p_max, grid.n)
    return load


def fleet_envelope(sessions: Iterable[ChargeSession], profiles: dict, grid: SettlementGrid,
                   floor_fraction: float = DEFAULT_FLOOR_FRACTION,
                   tail_fraction: float = DEFAULT_TAIL_FRACTION,
                   windows: Optional[list] = None):
    """Convenience wrapper returning ``(envelope, windows)``."""
    if windows is None:
        windows = build_windows(sessions, profiles, grid, floor_fraction, tail_fraction)
    return aggregate_envelope(windows, grid), windows
