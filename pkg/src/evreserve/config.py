"""TOML run configuration mapped onto the simulation dataclasses.

Every section and key is checked against the dataclass it feeds; anything
unknown is rejected so typos never silently fall back to defaults.

Example::

    [simulation]
    n_days = 100
    n_ev = 400
    seed = 42

    [market]
    omega = 0.5
    c_pen = 52.0

    [sweep]
    fleet_sizes = [100, 400, 1000]
    omegas = [0.0, 0.5, 1.0]
    benchmarks = ["perfect_foresight", "deterministic", "uncontrolled"]
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import date

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .fleet_data import FleetArchetype, ReserveTariff
from .optimizer import MarketParams
from .smpc import ALGORITHMS, SimulationConfig, _jsonable

BENCHMARKS = ("perfect_foresight", "deterministic", "uncontrolled")


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class SweepSpec:
    fleet_sizes: tuple = (50, 100, 250, 500, 1000)
    omegas: tuple = (0.0, 0.5, 1.0)
    benchmarks: tuple = BENCHMARKS
    seeds: tuple = ()  # empty: the simulation seed only

    def __post_init__(self):
        if any(int(n) < 1 for n in self.fleet_sizes):
            raise ConfigError("fleet sizes must be positive")
        if any(not 0.0 <= float(o) <= 1.0 for o in self.omegas):
            raise ConfigError("omegas must lie in [0, 1]")
        bad = [b for b in self.benchmarks if b not in BENCHMARKS]
        if bad:
            raise ConfigError(f"unknown benchmark(s): {', '.join(bad)}")


@dataclass(frozen=True)
class RunConfig:
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    sweep: SweepSpec = field(default_factory=SweepSpec)

    def digest(self) -> str:
        blob = json.dumps(_jsonable(asdict(self)), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


_SIM_KEYS = {"start", "n_days", "train_fraction", "eval_days", "seed", "n_ev", "scenario_mode",
             "algorithm", "lp_engine", "gap_tol", "node_limit", "time_limit", "forecast_only",
             "dispatch_rule"}
_DATA_KEYS = {"sessions_csv", "prices_csv", "weather_csv"}
_FLEET_KEYS = {"eta", "floor_fraction", "tail_fraction"}


def _check(section: str, table: dict, allowed) -> None:
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def _table(raw: dict, section: str) -> dict:
    table = raw.get(section, {})
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    return dict(table)


def _names(cls) -> set:
    return {f.name for f in fields(cls)}


def from_dict(raw: dict, base_dir: str = ".") -> RunConfig:
    sections = {"simulation", "data", "fleet", "tariff", "market", "archetype", "sweep"}
    _check("top level", raw, sections)
    sim = _table(raw, "simulation")
    _check("simulation", sim, _SIM_KEYS)
    data = _table(raw, "data")
    _check("data", data, _DATA_KEYS)
    fleet = _table(raw, "fleet")
    _check("fleet", fleet, _FLEET_KEYS)
    tariff = _table(raw, "tariff")
    _check("tariff", tariff, _names(ReserveTariff))
    market = _table(raw, "market")
    _check("market", market, _names(MarketParams))
    arche = _table(raw, "archetype")
    _check("archetype", arche, _names(FleetArchetype))
    sweep = _table(raw, "sweep")
    _check("sweep", sweep, _names(SweepSpec))

    if "start" in sim and not isinstance(sim["start"], date):
        try:
            sim["start"] = date.fromisoformat(str(sim["start"]))
        except ValueError as exc:
            raise ConfigError(f"[simulation] start: {exc}") from None
    for k in _DATA_KEYS:
        if k in data and data[k]:
            p = str(data[k])
            data[k] = p if os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))
    for k in ("charger_kw", "charger_weights", "battery_kwh", "plug_prob_weekday"):
        if k in arche:
            arche[k] = tuple(arche[k])
    for k in ("fleet_sizes", "omegas", "benchmarks", "seeds"):
        if k in sweep:
            sweep[k] = tuple(sweep[k])
    try:
        cfg = SimulationConfig(**sim, **data, **fleet, tariff=ReserveTariff(**tariff),
                               market=MarketParams(eta=fleet.get("eta", 0.9), **market),
                               archetype=FleetArchetype(**arche))
        spec = SweepSpec(**sweep)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {cfg.algorithm!r}")
    return RunConfig(cfg, spec)


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_dict(raw, os.path.dirname(os.path.abspath(path)))


def with_overrides(cfg: RunConfig, seed=None, fleet_sizes=None, omegas=None, benchmarks=None,
                   cvar_denominator=None, shared_penalty_variable=None) -> RunConfig:
    sim = cfg.simulation
    market = sim.market
    if cvar_denominator is not None:
        market = replace(market, cvar_denominator=cvar_denominator)
    if shared_penalty_variable:
        market = replace(market, shared_penalty_variable=True)
    sim = replace(sim, market=market, **({"seed": seed} if seed is not None else {}))
    sweep = cfg.sweep
    try:
        if fleet_sizes is not None:
            sweep = replace(sweep, fleet_sizes=tuple(fleet_sizes))
        if omegas is not None:
            sweep = replace(sweep, omegas=tuple(omegas))
        if benchmarks is not None:
            sweep = replace(sweep, benchmarks=tuple(benchmarks))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(sim, sweep)
