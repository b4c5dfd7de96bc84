"""Rolling-horizon simulation of the two-stage scheme and its benchmarks.

The clock advances one settlement at a time over the evaluation days. At
the auction settlement a stage-1 MILP fixes the next delivery day's reserve;
every settlement a stage-2 LP re-plans charging with commitments fixed and
only its first settlement is dispatched. Dispatch is then realised against
the true envelope: it is clamped to what the real fleet can do, reserve
capability is checked against the realised state and any shortfall is
charged at the penalty rate.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from datetime import date, datetime, timedelta
from typing import Optional

import numpy as np

from .aggregation import (DEFAULT_FLOOR_FRACTION, DEFAULT_TAIL_FRACTION, AggregateEnvelope,
                          SettlementGrid, aggregate_envelope, build_windows, charge_on_arrival)
from .fleet_data import (DEFAULT_ETA, FleetArchetype, ReserveTariff, cleanse_sessions,
                         generate_synthetic_fleet, infer_profiles, load_exogenous,
                         parse_sessions, synthetic_exogenous, synthetic_weather, DataError)
from .forecast import (SCENARIO_PROBS, DayFeatures, ScenarioSet, fit_models, forecast_errors,
                       generate_scenarios, pooled_nrmse, realized_scenario)
from .optimizer import (KW_PER_MW, MarketParams, PriceSlice, build_stage1,
                        build_stage2, solve_stage, stage1_windows, to_plan)

ALGORITHMS = ("smpc", "perfect_foresight", "deterministic", "uncontrolled")
DISPATCH_RULES = ("expected", "shared")
BOUNDARIES = ("eu", "ed", "pb")
PAD_DAYS = 2
_SHORTFALL_TOL = 1e-6


@dataclass(frozen=True)
class SimulationConfig:
    start: date = date(2023, 1, 2)
    n_days: int = 100
    train_fraction: float = 0.7
    eval_days: Optional[int] = None  # cap on evaluated days after the training split
    seed: int = 42
    n_ev: int = 100
    sessions_csv: Optional[str] = None
    prices_csv: Optional[str] = None
    weather_csv: Optional[str] = None
    archetype: FleetArchetype = field(default_factory=FleetArchetype)
    tariff: ReserveTariff = field(default_factory=ReserveTariff)
    market: MarketParams = field(default_factory=MarketParams)
    eta: float = DEFAULT_ETA
    floor_fraction: float = DEFAULT_FLOOR_FRACTION
    tail_fraction: float = DEFAULT_TAIL_FRACTION
    scenario_mode: str = "joint"
    algorithm: str = "smpc"
    lp_engine: str = "highs"
    gap_tol: float = 1e-6
    node_limit: int = 5000
    time_limit: Optional[float] = None
    forecast_only: bool = False
    # expected: scenarios decouple in stage 2 and the probability-weighted first
    # settlement is dispatched; shared: one first-settlement decision for all scenarios
    dispatch_rule: str = "expected"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.dispatch_rule not in DISPATCH_RULES:
            raise ValueError(f"unknown dispatch rule {self.dispatch_rule!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.n_days < 3:
            raise ValueError("need at least 3 days (training plus one delivery day)")
        if self.n_ev < 0:
            raise ValueError("n_ev must be non-negative")

    @property
    def n_train(self) -> int:
        return max(2, int(math.floor(self.n_days * self.train_fraction)))

    @property
    def eval_range(self):
        first = self.n_train
        last = self.n_days if self.eval_days is None else min(self.n_days, first + self.eval_days)
        if last <= first:
            raise ValueError("simulation window must cover at least one full day")
        return first, last

    def fleet_key(self) -> tuple:
        """Fields that determine the prepared data (fleet, prices, models)."""
        return (self.start, self.n_days, self.train_fraction, self.seed, self.n_ev,
                self.sessions_csv, self.prices_csv, self.weather_csv, self.archetype, self.tariff,
                self.eta, self.floor_fraction, self.tail_fraction, self.market.dt)

    def digest(self) -> str:
        blob = json.dumps(_jsonable(asdict(self)), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (date, datetime)):
        return obj.isoformat()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


@dataclass
class RunData:
    grid: SettlementGrid
    envelope: AggregateEnvelope
    windows: list
    exo: object
    features: DayFeatures
    models: dict
    n_ev: int
    c_bar: float


def prepare_data(cfg: SimulationConfig) -> RunData:
    """Fleet, envelope, exogenous series and fitted models for a configuration."""
    per_day = int(round(24 / cfg.market.dt))
    span_days = cfg.n_days + PAD_DAYS
    t_start = datetime.combine(cfg.start, datetime.min.time())
    t_end = t_start + timedelta(days=span_days)
    if cfg.sessions_csv:
        parsed = parse_sessions(cfg.sessions_csv)
        if not parsed.sessions:
            raise DataError(f"no valid sessions in {cfg.sessions_csv}")
        kept, _ = cleanse_sessions(parsed.sessions)
        profiles = infer_profiles(kept, eta=cfg.eta)
        sessions = [s for s in kept if s.plug_out > t_start and s.plug_in < t_end]
        n_ev = len({s.charger_id for s in sessions})
    else:
        weather = synthetic_weather(cfg.seed, cfg.start, span_days)
        sessions = generate_synthetic_fleet(cfg.seed, cfg.n_ev, cfg.n_days, cfg.archetype,
                                            cfg.start, weather)
        sessions, _ = cleanse_sessions(sessions)
        profiles = infer_profiles(sessions, eta=cfg.eta)
        n_ev = cfg.n_ev
    if cfg.prices_csv or cfg.weather_csv:
        if not (cfg.prices_csv and cfg.weather_csv):
            raise DataError("prices_csv and weather_csv must be given together")
        exo = load_exogenous(cfg.prices_csv, cfg.weather_csv, t_start, t_end, cfg.tariff, cfg.market.dt)
    else:
        exo = synthetic_exogenous(cfg.seed, cfg.start, span_days, cfg.tariff, cfg.market.dt)
    grid = SettlementGrid(t_start, cfg.market.dt, per_day * span_days + 1)
    windows = build_windows(sessions, profiles, grid, cfg.floor_fraction, cfg.tail_fraction)
    env = aggregate_envelope(windows, grid)
    features = DayFeatures.from_exogenous(exo)
    # day 0 lacks vehicles that arrived before the span starts, so it is left out
    models = fit_models(env, features, np.arange(1, cfg.n_train), per_day)
    first, last = cfg.eval_range
    c_bar = float(np.mean(exo.wholesale_price[first * per_day:last * per_day]))
    return RunData(grid, env, windows, exo, features, models, n_ev, c_bar)


@dataclass
class SimulationLog:
    algorithm: str
    omega: float
    n_ev: int
    start_settlement: int
    rows: list = field(default_factory=list)  # per-settlement dicts
    nrmse_rows: list = field(default_factory=list)  # (day, stage, boundary, value)
    plans: list = field(default_factory=list)
    clamp_events: int = 0
    solver_limit_hits: int = 0
    a_credit: float = 0.0
    topup_kwh: float = 0.0  # grid energy to lift the final state to the upper boundary
    c_bar: float = 0.0
    config_digest: str = ""
    seed: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def totals(self) -> dict:
        c_cha = float(math.fsum(r["wholesale_gbp"] for r in self.rows))
        c_pen = float(math.fsum(r["penalty_gbp"] for r in self.rows))
        r_res = float(math.fsum(r["reserve_gbp"] for r in self.rows))
        energy = float(math.fsum(r["energy_kwh"] for r in self.rows))
        grid_energy = float(math.fsum(r["grid_energy_kwh"] for r in self.rows))
        eff = (c_cha + c_pen - r_res) / grid_energy if grid_energy > 0 else float("nan")
        # variant that buys the final gap to the upper boundary at the mean price, so
        # every algorithm pays for the same delivered energy as charge-on-arrival
        topup = self.topup_kwh * self.c_bar
        denom = grid_energy + self.topup_kwh
        eff_top = (c_cha + c_pen - r_res + topup) / denom if denom > 0 else float("nan")
        return {"c_cha_gbp": c_cha, "c_pen_gbp": c_pen, "r_res_gbp": r_res,
                "a_credit_gbp": self.a_credit, "energy_kwh": energy,
                "grid_energy_kwh": grid_energy, "effective_cost_gbp_per_kwh": eff,
                "topup_kwh": self.topup_kwh, "topup_gbp": topup,
                "effective_cost_topped_up_gbp_per_kwh": eff_top}

    def daily_loss(self, per_day: int = 48) -> np.ndarray:
        """Realised loss (wholesale + penalty - reserve revenue) per simulated day."""
        loss = self.column("wholesale_gbp") + self.column("penalty_gbp") - self.column("reserve_gbp")
        n = loss.size // per_day
        return loss[:n * per_day].reshape(n, per_day).sum(axis=1)

    def nrmse(self, stage: int, boundary: str) -> float:
        vals = [v for (_, s, b, v) in self.nrmse_rows if s == stage and b == boundary
                and math.isfinite(v)]
        return float(np.mean(vals)) if vals else float("nan")


DISPATCH_COLUMNS = ("settlement", "timestamp", "e_upper", "e_lower", "p_bound", "tail_load",
                    "n_connected", "energy", "p_g2v", "p_v2g", "net_power", "p_pr_g", "p_nr_g",
                    "dp_pen_pr", "dp_pen_nr", "pr_ok", "nr_ok", "penalty_gbp", "wholesale_gbp",
                    "reserve_gbp", "energy_kwh", "grid_energy_kwh", "clamp_kwh")


def write_log(log: SimulationLog, out_dir, per_day: int = 48) -> None:
    """Write ``dispatch.csv``, ``daily_nrmse.csv``, ``costs.csv`` and ``manifest.json``."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "dispatch.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DISPATCH_COLUMNS)
        for r in log.rows:
            w.writerow([_fmt(r[c]) for c in DISPATCH_COLUMNS])
    with open(os.path.join(out_dir, "daily_nrmse.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day", "stage", "boundary", "nrmse"])
        for day, stage, b, v in log.nrmse_rows:
            w.writerow([day, stage, b, _fmt(v)])
    tot = log.totals
    with open(os.path.join(out_dir, "costs.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        keys = ["algorithm", "omega", "n_ev"] + list(tot) + ["clamp_events", "solver_limit_hits"]
        w.writerow(keys)
        w.writerow([log.algorithm, _fmt(log.omega), log.n_ev] + [_fmt(v) for v in tot.values()]
                   + [log.clamp_events, log.solver_limit_hits])
    manifest = {"config_sha256": log.config_digest, "seed": log.seed, "algorithm": log.algorithm,
                "omega": log.omega, "n_ev": log.n_ev, "settlements": len(log.rows),
                "files": sorted(["dispatch.csv", "daily_nrmse.csv", "costs.csv"])}
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


# --------------------------------------------------------------------------
# realisation


def realize_dispatch(g: float, v: float, energy: float, env: AggregateEnvelope, t: int,
                     eta: float, dt: float):
    """Make planned ``(g, v)`` physical for the realised envelope at settlement ``t``.

    Returns ``(g, v, energy_after, clamp_kwh)`` where ``clamp_kwh`` is the
    absolute energy adjustment (0 when the plan was already feasible).
    """
    pb = float(env.p_bound[t])
    g, v = max(g, 0.0), max(v, 0.0)
    load = g + v / eta
    scaled = False
    if load > pb + 1e-9:
        f = pb / load if load > 0 else 0.0
        g, v = g * f, v * f
        scaled = True
    planned = energy + (eta * g - v / eta) * dt
    lo = max(float(env.e_lower[t + 1]), energy - pb * dt)
    hi = min(float(env.e_upper[t + 1]), energy + eta * pb * dt)
    target = min(max(planned, lo), hi)
    adj = abs(target - planned)
    if adj > 1e-9:
        if target >= energy:
            g, v = (target - energy) / (eta * dt), 0.0
        else:
            g, v = 0.0, (energy - target) * eta / dt
    else:
        target = planned
        adj = 0.0
    if scaled and adj == 0.0:
        adj = 1e-12  # record the power scaling as an event without an energy change
    return g, v, target, adj


def capability_shortfall(pr: float, nr: float, base: float, energy: float, lower: float,
                         upper: float, pb: float, market: MarketParams):
    """Smallest penalty slacks making the reserve rows hold for the realised state."""
    eta, dtr = market.eta, market.dt_r
    dpr = dnr = 0.0
    if pr > 0:
        prv = (pr - base) / eta
        dpr = max(0.0, eta * (lower - energy + prv * dtr) / dtr, eta * (prv - pb))
    if nr > 0:
        nrv = (nr + base) * eta
        dnr = max(0.0, (energy + nrv * eta * dtr - upper) / (eta * dtr), nrv / eta - pb)
    dpr = 0.0 if dpr < _SHORTFALL_TOL else dpr
    dnr = 0.0 if dnr < _SHORTFALL_TOL else dnr
    if market.shared_penalty_variable:
        d = max(dpr, dnr)
        return d, d, d
    return dpr, dnr, dpr + dnr


# --------------------------------------------------------------------------
# driver


def _scenarios(cfg: SimulationConfig, data: RunData, t: int, horizon: int) -> ScenarioSet:
    if cfg.algorithm == "perfect_foresight":
        return realized_scenario(data.envelope, t, horizon)
    per_day = int(round(24 / cfg.market.dt))
    scen = generate_scenarios(data.models, data.features, data.envelope, t, horizon,
                              SCENARIO_PROBS, cfg.scenario_mode, per_day)
    if cfg.algorithm == "deterministic":
        return scen.central()
    return scen


def run_simulation(cfg: SimulationConfig, data: Optional[RunData] = None) -> SimulationLog:
    """Simulate ``cfg.algorithm`` over the evaluation days."""
    data = data or prepare_data(cfg)
    if cfg.algorithm == "uncontrolled":
        return _run_uncontrolled(cfg, data)
    market = cfg.market
    if cfg.algorithm != "smpc":
        market = replace(market, omega=0.0)
    market2 = replace(market, nonanticipative=cfg.dispatch_rule == "shared")
    per_day = int(round(24 / market.dt))
    env, exo = data.envelope, data.exo
    first, last = cfg.eval_range
    t_start, t_end = first * per_day, last * per_day
    n_total = env.n - 1
    commit_pr = np.zeros(n_total)
    commit_nr = np.zeros(n_total)
    net_hist = np.zeros(n_total)
    energy = float(env.e_upper[t_start])
    log = SimulationLog(cfg.algorithm, market.omega, data.n_ev, t_start,
                        config_digest=cfg.digest(), seed=cfg.seed, c_bar=data.c_bar)
    acc = {}  # (day, stage, boundary) -> list of error triples

    def track(day, stage, scen):
        for b, trip in forecast_errors(scen, env).items():
            acc.setdefault((day, stage, b), []).append(trip)

    for t in range(t_start, t_end):
        day, k = divmod(t, per_day)
        trailing = net_hist[t - market.z:t] if t - market.z >= 0 else np.zeros(market.z)
        if k == market.auction_settlement:
            h1 = min(market.stage1_len, n_total - t)
            scen1 = _scenarios(cfg, data, t, h1)
            if cfg.algorithm != "perfect_foresight":
                track(day, 1, scen1)
            if not cfg.forecast_only:
                prices = PriceSlice.from_series(exo, t, h1, data.c_bar)
                sp1 = build_stage1(scen1, prices, market, energy, trailing,
                                   commit_pr[t:t + h1], commit_nr[t:t + h1],
                                   stage1_windows(t, market, h1))
                sol1 = solve_stage(sp1, cfg.lp_engine, cfg.gap_tol, cfg.node_limit,
                                   cfg.time_limit)
                if sol1.status != "optimal":
                    log.solver_limit_hits += 1
                plan = to_plan(sol1, sp1)
                for ws, a, b in zip(plan.window_starts, plan.p_pr, plan.p_nr):
                    commit_pr[ws:ws + plan.window_len] = a
                    commit_nr[ws:ws + plan.window_len] = b
                log.plans.append(plan)
        h2 = min(market.stage2_len, n_total - t)
        scen2 = _scenarios(cfg, data, t, h2)
        if cfg.algorithm != "perfect_foresight":
            track(day, 2, scen2)
        if cfg.forecast_only:
            continue
        prices = PriceSlice.from_series(exo, t, h2, data.c_bar)
        sp2 = build_stage2(scen2, prices, market2, energy, trailing, commit_pr[t:t + h2],
                           commit_nr[t:t + h2])
        sol2 = solve_stage(sp2, cfg.lp_engine)
        probs = sp2.scenarios.probs
        g0, v0 = float(probs @ sol2.p_g2v[:, 0]), float(probs @ sol2.p_v2g[:, 0])
        g, v, e_next, adj = realize_dispatch(g0, v0, energy, env, t, market.eta, market.dt)
        if adj > 0:
            log.clamp_events += 1
        net = g - v
        net_hist[t] = net
        base = float(np.mean(trailing))
        dpr, dnr, short = capability_shortfall(commit_pr[t], commit_nr[t], base, e_next,
                                               float(env.e_lower[t + 1]), float(env.e_upper[t + 1]),
                                               float(env.p_bound[t]), market)
        tail = float(env.tail_load[t])
        row = {
            "settlement": t,
            "timestamp": (data.grid.start + timedelta(hours=market.dt * t)).isoformat(),
            "e_upper": float(env.e_upper[t + 1]), "e_lower": float(env.e_lower[t + 1]),
            "p_bound": float(env.p_bound[t]), "tail_load": tail,
            "n_connected": int(env.n_connected[t]), "energy": e_next,
            "p_g2v": g, "p_v2g": v, "net_power": net,
            "p_pr_g": float(commit_pr[t]), "p_nr_g": float(commit_nr[t]),
            "dp_pen_pr": dpr, "dp_pen_nr": dnr,
            "pr_ok": bool(commit_pr[t] <= 0 or dpr == 0.0), "nr_ok": bool(commit_nr[t] <= 0 or dnr == 0.0),
            "penalty_gbp": market.c_pen * short / KW_PER_MW,
            "wholesale_gbp": float(exo.wholesale_price[t]) * (net + tail) * market.dt,
            "reserve_gbp": (float(exo.reserve_price_pos[t]) * commit_pr[t]
                            + float(exo.reserve_price_neg[t]) * commit_nr[t]) / KW_PER_MW,
            "energy_kwh": (e_next - energy) + market.eta * tail * market.dt,
            "grid_energy_kwh": ((e_next - energy) / market.eta + tail * market.dt),
            "clamp_kwh": adj,
        }
        log.rows.append(row)
        energy = e_next
    if not cfg.forecast_only and log.rows:
        log.a_credit = (energy - float(env.e_lower[t_end])) * data.c_bar
        log.topup_kwh = max(0.0, float(env.e_upper[t_end]) - energy) / market.eta
    for (day, stage, b), trips in sorted(acc.items()):
        log.nrmse_rows.append((day, stage, b, pooled_nrmse(trips)))
    return log


def _run_uncontrolled(cfg: SimulationConfig, data: RunData) -> SimulationLog:
    market = cfg.market
    per_day = int(round(24 / market.dt))
    first, last = cfg.eval_range
    t_start, t_end = first * per_day, last * per_day
    load = charge_on_arrival(data.windows, data.grid)
    env, exo = data.envelope, data.exo
    log = SimulationLog("uncontrolled", 0.0, data.n_ev, t_start, config_digest=cfg.digest(),
                        seed=cfg.seed)
    for t in range(t_start, t_end):
        p = float(load[t])
        log.rows.append({
            "settlement": t,
            "timestamp": (data.grid.start + timedelta(hours=market.dt * t)).isoformat(),
            "e_upper": float(env.e_upper[t + 1]), "e_lower": float(env.e_lower[t + 1]),
            "p_bound": float(env.p_bound[t]), "tail_load": float(env.tail_load[t]),
            "n_connected": int(env.n_connected[t]), "energy": float("nan"),
            "p_g2v": p, "p_v2g": 0.0, "net_power": p, "p_pr_g": 0.0, "p_nr_g": 0.0,
            "dp_pen_pr": 0.0, "dp_pen_nr": 0.0, "pr_ok": True, "nr_ok": True,
            "penalty_gbp": 0.0, "wholesale_gbp": float(exo.wholesale_price[t]) * p * market.dt,
            "reserve_gbp": 0.0, "energy_kwh": market.eta * p * market.dt,
            "grid_energy_kwh": p * market.dt, "clamp_kwh": 0.0,
        })
    return log


def run_benchmark(kind: str, cfg: SimulationConfig, data: Optional[RunData] = None) -> SimulationLog:
    if kind not in ("perfect_foresight", "deterministic", "uncontrolled"):
        raise ValueError(f"unknown benchmark {kind!r}")
    return run_simulation(replace(cfg, algorithm=kind), data)
