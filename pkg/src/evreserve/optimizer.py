"""Two-stage stochastic reserve bidding and dispatch programs.

Stage 1 (at the auction) chooses a reserve commitment per 2-hour service
window together with per-scenario charging plans; it is a MILP because each
window carries activation binaries, and it trades expected loss against
CVaR. Stage 2 (every settlement) re-plans charging with the commitments
fixed; it is an LP minimising expected cost.

Units: powers in kW, energies in kWh (vehicle side), wholesale prices in
GBP/kWh, reserve prices and the penalty rate in GBP/MW per settlement (the
kW -> MW conversion happens at cost assembly).

Scenario energy bounds apply at the END of each settlement, so ``e[s, h]``
is the vehicle-side cumulative net charge after settlement ``h``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .forecast import ScenarioSet
from .milp_kernel import (GAP_LIMIT, GE, LE, OPTIMAL, TIME_LIMIT, EQ, LpProblem,
                          dumps, solve_lp, solve_milp)

KW_PER_MW = 1000.0


class OptimizationError(RuntimeError):
    """A stage program returned no usable solution."""


class SolverLimitError(OptimizationError):
    """Branch-and-bound stopped on a node/time limit without an incumbent."""


@dataclass(frozen=True)
class MarketParams:
    dt: float = 0.5
    dt_r: float = 0.45
    z: int = 2
    per_day: int = 48
    auction_settlement: int = 28  # 14:00
    delivery_start: int = 46  # 23:00
    window_len: int = 4
    n_windows: int = 12
    stage1_len: int = 66
    stage2_len: int = 18
    c_pen: float = 52.0
    omega: float = 0.5
    alpha: float = 0.1
    eta: float = 0.9
    cvar_denominator: str = "standard"
    shared_penalty_variable: bool = False
    m1_factor: float = 2.0
    m2_factor: float = 4.0
    big_m: str = "row"
    nonanticipative: bool = True

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0.0 < self.dt_r <= self.dt:
            raise ValueError("dt_r must lie in (0, dt]")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must lie in (0, 1]")
        if self.m1_factor <= 0 or self.m2_factor <= 0:
            raise ValueError("big-M factors must be positive")
        if self.cvar_denominator not in ("standard", "paper"):
            raise ValueError("cvar_denominator must be 'standard' or 'paper'")
        if self.big_m not in ("row", "global"):
            raise ValueError("big_m must be 'row' or 'global'")
        if self.big_m == "row" and self.m2_factor < 4.0:
            raise ValueError("row-wise big-M needs m2_factor >= 4 to stay valid")
        if self.z < 1 or self.window_len < 1:
            raise ValueError("z and window_len must be positive")

    @property
    def cvar_weight(self) -> float:
        """Tail weight on the expected excess loss in the CVaR row."""
        if self.cvar_denominator == "paper":
            return 1.0 / (1.0 + self.alpha)
        return 1.0 / self.alpha


@dataclass
class PriceSlice:
    """Prices over a planning horizon."""

    c_e: np.ndarray  # GBP/kWh
    c_pr: np.ndarray  # GBP/MW per settlement
    c_nr: np.ndarray
    c_bar: float  # GBP/kWh valuation of energy left at the horizon end

    def __post_init__(self):
        self.c_e = np.asarray(self.c_e, dtype=float)
        self.c_pr = np.asarray(self.c_pr, dtype=float)
        self.c_nr = np.asarray(self.c_nr, dtype=float)

    @classmethod
    def from_series(cls, exo, t0: int, horizon: int, c_bar: Optional[float] = None) -> "PriceSlice":
        sl = slice(t0, t0 + horizon)
        if t0 + horizon > exo.n:
            raise ValueError("price series shorter than the planning horizon")
        return cls(exo.wholesale_price[sl], exo.reserve_price_pos[sl], exo.reserve_price_neg[sl],
                   exo.mean_price if c_bar is None else c_bar)


@dataclass
class ReservePlan:
    """Committed reserve per service window (global settlement indices)."""

    window_starts: np.ndarray
    p_pr: np.ndarray  # kW grid side
    p_nr: np.ndarray
    b_pr: np.ndarray
    b_nr: np.ndarray
    window_len: int = 4

    def expand(self, t0: int, n: int):
        """Per-settlement ``(p_pr, p_nr)`` over global settlements ``t0..t0+n-1``."""
        pr = np.zeros(n)
        nr = np.zeros(n)
        for ws, a, b in zip(self.window_starts, self.p_pr, self.p_nr):
            lo = max(int(ws), t0)
            hi = min(int(ws) + self.window_len, t0 + n)
            if hi > lo:
                pr[lo - t0:hi - t0] = a
                nr[lo - t0:hi - t0] = b
        return pr, nr

    @classmethod
    def empty(cls, window_len: int = 4) -> "ReservePlan":
        z = np.zeros(0)
        return cls(np.zeros(0, dtype=int), z, z, z, z, window_len)


@dataclass
class Layout:
    S: int
    H: int
    g: np.ndarray
    v: np.ndarray
    e: np.ndarray
    dpr: np.ndarray  # -1 where absent
    dnr: np.ndarray
    ppr: np.ndarray  # per window
    pnr: np.ndarray
    bpr: np.ndarray
    bnr: np.ndarray
    win_of: np.ndarray  # horizon offset -> window index or -1
    var: int
    cvar: int
    w: np.ndarray


@dataclass
class StageProblem:
    stage: int
    problem: LpProblem
    layout: Layout
    scenarios: ScenarioSet  # after reachability repair
    prices: PriceSlice
    market: MarketParams
    e0: float
    fixed_pr: np.ndarray
    fixed_nr: np.ndarray
    window_offsets: np.ndarray
    m1: float
    m2: float
    loss_const: np.ndarray  # constant part of each scenario loss
    trailing: np.ndarray  # net grid power of the z settlements before the horizon


@dataclass
class StageSolution:
    status: str
    objective: float
    p_g2v: np.ndarray  # (S, H) kW grid side
    p_v2g: np.ndarray
    e_ev: np.ndarray  # (S, H) kWh after each settlement
    dp_pen_pr: np.ndarray
    dp_pen_nr: np.ndarray
    p_pr_v: np.ndarray  # (S, H) kW vehicle side, zero where inactive
    p_nr_v: np.ndarray
    p_pr_g: np.ndarray  # (H,) committed/decided grid-side reserve per settlement
    p_nr_g: np.ndarray
    window_pr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    window_nr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    window_bpr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    window_bnr: np.ndarray = field(default_factory=lambda: np.zeros(0))
    c_cha: np.ndarray = field(default_factory=lambda: np.zeros(0))
    c_pen: np.ndarray = field(default_factory=lambda: np.zeros(0))
    a_credit: np.ndarray = field(default_factory=lambda: np.zeros(0))
    r_res: float = 0.0
    var: float = 0.0
    cvar: float = 0.0
    w: np.ndarray = field(default_factory=lambda: np.zeros(0))
    probs: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nodes: int = 0
    gap: float = 0.0

    @property
    def losses(self) -> np.ndarray:
        return self.c_cha + self.c_pen - self.a_credit - self.r_res

    @property
    def expected_loss(self) -> float:
        return float(self.probs @ self.losses)

    @property
    def first_net_power(self) -> float:
        """Grid-side net power of the (non-anticipative) first settlement."""
        return float(self.p_g2v[0, 0] - self.p_v2g[0, 0])


# --------------------------------------------------------------------------
# helpers


def evaluate_cvar(losses, probs, alpha: float, denominator: str = "standard"):
    """Discrete ``(VaR, CVaR)`` of a loss distribution.

    VaR is the smallest loss whose cumulative probability reaches
    ``1 - alpha``; CVaR adds the probability-weighted excess over VaR scaled
    by ``1/alpha`` (or by ``1/(1+alpha)`` for ``denominator="paper"``).
    """
    losses = np.asarray(losses, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if losses.shape != probs.shape or losses.size == 0:
        raise ValueError("losses and probs must be equal-length and non-empty")
    if abs(float(probs.sum()) - 1.0) > 1e-9:
        raise ValueError("probabilities must sum to 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    order = np.argsort(losses, kind="stable")
    cum = np.cumsum(probs[order])
    k = int(np.searchsorted(cum, 1.0 - alpha - 1e-12, side="left"))
    var = float(losses[order][min(k, losses.size - 1)])
    weight = 1.0 / (1.0 + alpha) if denominator == "paper" else 1.0 / alpha
    cvar = var + weight * float(probs @ np.maximum(losses - var, 0.0))
    return var, cvar


def repair_reachability(scen: ScenarioSet, e0: float, eta: float, dt: float,
                        nonanticipative: bool = True) -> ScenarioSet:
    """Lower each scenario's energy floor to what is reachable from ``e0``.

    Forecast boundaries can ask for more energy than the forecast power
    boundary can deliver. The forward pass bounds the reachable maximum, the
    backward pass lowers floors that could only be met by exceeding the
    power boundary later; floors never rise. When the first settlement is
    shared across scenarios, its reachable maximum uses the tightest
    scenario so one common first step is feasible everywhere.
    """
    S, H = scen.e_upper.shape
    u = scen.e_upper
    pb = scen.p_bound
    lo = scen.e_lower.copy()
    first_cap = None
    if nonanticipative and S > 1:
        first_cap = min(float(np.min(u[:, 0])), e0 + eta * float(np.min(pb[:, 0])) * dt)
    for s in range(S):
        hi = np.empty(H)
        prev = e0
        for h in range(H):
            hi[h] = min(u[s, h], prev + eta * pb[s, h] * dt)
            if h == 0 and first_cap is not None:
                hi[h] = min(hi[h], first_cap)
            hi[h] = max(hi[h], min(prev, u[s, h]))
            prev = hi[h]
        need = lo[s, H - 1]
        lo[s, H - 1] = min(need, hi[H - 1])
        for h in range(H - 2, -1, -1):
            need = max(lo[s, h], lo[s, h + 1] - eta * pb[s, h + 1] * dt)
            lo[s, h] = min(need, hi[h])
    return ScenarioSet(scen.t0, scen.probs, scen.e_upper, lo, scen.p_bound, scen.bands)


def stage1_windows(t0: int, market: MarketParams, horizon: Optional[int] = None) -> np.ndarray:
    """Horizon offsets of the next delivery day's service windows for an auction at ``t0``."""
    horizon = market.stage1_len if horizon is None else horizon
    day_start = (t0 // market.per_day) * market.per_day
    first = day_start + market.delivery_start - t0
    offs = first + market.window_len * np.arange(market.n_windows)
    return offs[(offs >= 0) & (offs + market.window_len <= horizon)]


class _Builder:
    def __init__(self):
        self.n = 0
        self.lb: list = []
        self.ub: list = []
        self.integ: list = []
        self.names: list = []
        self.r: list = []
        self.k: list = []
        self.v: list = []
        self.sense: list = []
        self.rhs: list = []
        self.rnames: list = []

    def var(self, name, lb=0.0, ub=np.inf, integer=False) -> int:
        self.lb.append(lb)
        self.ub.append(ub)
        self.integ.append(integer)
        self.names.append(name)
        self.n += 1
        return self.n - 1

    def row(self, name, terms, sense, rhs):
        i = len(self.rhs)
        acc: dict = {}
        for j, c in terms:
            acc[j] = acc.get(j, 0.0) + c
        for j, c in acc.items():
            if c != 0.0:
                self.r.append(i)
                self.k.append(j)
                self.v.append(c)
        self.sense.append(sense)
        self.rhs.append(float(rhs))
        self.rnames.append(name)


def build_stage(scen: ScenarioSet, prices: PriceSlice, market: MarketParams, e0: float,
                trailing_dispatch, fixed_pr=None, fixed_nr=None, window_offsets=None,
                stage: int = 1) -> StageProblem:
    """Assemble a stage program over the scenario horizon.

    ``window_offsets`` lists the horizon offsets where free service windows
    start (stage 1); every other settlement uses ``fixed_pr``/``fixed_nr``
    and carries reserve rows only where that commitment is positive.
    """
    S, H = scen.e_upper.shape
    if H < 1 or S < 1:
        raise ValueError("empty scenario set")
    for arr in (scen.e_upper, scen.e_lower, scen.p_bound):
        if not np.all(np.isfinite(arr)):
            raise ValueError("scenario envelope must be finite")
    if prices.c_e.size < H or prices.c_pr.size < H or prices.c_nr.size < H:
        raise ValueError("price slice shorter than the scenario horizon")
    z = market.z
    trailing = np.zeros(z) if trailing_dispatch is None else np.asarray(trailing_dispatch, float)
    if trailing.size != z:
        raise ValueError(f"trailing dispatch must have {z} entries")
    fixed_pr = np.zeros(H) if fixed_pr is None else np.asarray(fixed_pr, float)[:H]
    fixed_nr = np.zeros(H) if fixed_nr is None else np.asarray(fixed_nr, float)[:H]
    offs = np.zeros(0, dtype=int) if window_offsets is None else np.asarray(window_offsets, int)
    if offs.size and (offs.min() < 0 or offs.max() + market.window_len > H):
        raise ValueError("scenario horizon shorter than the service windows")

    scen = repair_reachability(scen, e0, market.eta, market.dt, market.nonanticipative)
    eta, dt, dtr = market.eta, market.dt, market.dt_r
    win_of = np.full(H, -1)
    for w, o in enumerate(offs):
        win_of[o:o + market.window_len] = w

    max_p = max(float(np.max(scen.p_bound)), float(np.max(np.abs(trailing))),
                float(np.max(fixed_pr, initial=0.0)), float(np.max(fixed_nr, initial=0.0)))
    max_p = max_p if max_p > 0 else 1.0
    m1 = market.m1_factor * max_p
    m2 = market.m2_factor * max_p

    b = _Builder()
    g = np.empty((S, H), dtype=int)
    v = np.empty((S, H), dtype=int)
    e = np.empty((S, H), dtype=int)
    for s in range(S):
        for h in range(H):
            if h == 0 and s > 0 and market.nonanticipative:
                g[s, h] = g[0, 0]
                v[s, h] = v[0, 0]
            else:
                g[s, h] = b.var(f"g_{s}_{h}")
                v[s, h] = b.var(f"v_{s}_{h}")
            e[s, h] = b.var(f"e_{s}_{h}", scen.e_lower[s, h], scen.e_upper[s, h])

    W = offs.size
    ppr = np.array([b.var(f"ppr_{w}", 0.0, m1) for w in range(W)], dtype=int)
    pnr = np.array([b.var(f"pnr_{w}", 0.0, m1) for w in range(W)], dtype=int)
    bpr = np.array([b.var(f"bpr_{w}", 0.0, 1.0, True) for w in range(W)], dtype=int)
    bnr = np.array([b.var(f"bnr_{w}", 0.0, 1.0, True) for w in range(W)], dtype=int)

    act_pr = (win_of >= 0) | (fixed_pr > 0)
    act_nr = (win_of >= 0) | (fixed_nr > 0)
    dpr = np.full((S, H), -1)
    dnr = np.full((S, H), -1)
    for s in range(S):
        for h in range(H):
            if market.shared_penalty_variable:
                if act_pr[h] or act_nr[h]:
                    dpr[s, h] = dnr[s, h] = b.var(f"dp_{s}_{h}")
            else:
                if act_pr[h]:
                    dpr[s, h] = b.var(f"dpr_{s}_{h}")
                if act_nr[h]:
                    dnr[s, h] = b.var(f"dnr_{s}_{h}")

    if market.cvar_denominator == "paper":
        l_max = (float(np.sum(np.abs(prices.c_e[:H]))) * max_p * (1 + 1 / eta) * dt
                 + float(np.sum(prices.c_pr[:H] + prices.c_nr[:H])) * m1 / KW_PER_MW
                 + abs(prices.c_bar) * float(np.max(scen.e_upper) - np.min(scen.e_lower) + abs(e0))
                 + 1.0)
        var = b.var("var", -l_max, np.inf)
    else:
        var = b.var("var", -np.inf, np.inf)
    cvar = b.var("cvar", -np.inf, np.inf)
    wv = np.array([b.var(f"w_{s}") for s in range(S)], dtype=int)

    # dynamics and power boundary
    for s in range(S):
        for h in range(H):
            terms = [(e[s, h], 1.0), (g[s, h], -eta * dt), (v[s, h], dt / eta)]
            if h == 0:
                rhs = e0
            else:
                terms.append((e[s, h - 1], -1.0))
                rhs = 0.0
            b.row(f"dyn_{s}_{h}", terms, EQ, rhs)
            if h == 0 and s > 0 and market.nonanticipative:
                if scen.p_bound[s, 0] >= scen.p_bound[0, 0]:
                    continue
            b.row(f"pb_{s}_{h}", [(g[s, h], 1.0), (v[s, h], 1.0 / eta)], LE, scen.p_bound[s, h])

    # reserve rows
    def baseline_terms(s, h, scale):
        """Terms and constant of ``scale * mean net power over the z settlements before h``."""
        terms, const = [], 0.0
        for j in range(h - z, h):
            if j < 0:
                const += scale * trailing[z + j] / z
            else:
                terms.append((g[s, j], scale / z))
                terms.append((v[s, j], -scale / z))
        return terms, const

    def row_m2(s, h):
        """Big-M per reserve row: (15), (16), (17), (18).

        Globally ``M2`` everywhere. Row-wise, each value is the smallest
        relaxation that keeps the row slack for every feasible baseline when
        the window is inactive, scaled by ``m2_factor / 4``.
        """
        if market.big_m == "global":
            return m2, m2, m2, m2
        base_hi = base_lo = 0.0
        for j in range(h - z, h):
            if j < 0:
                base_hi += trailing[z + j] / z
                base_lo += trailing[z + j] / z
            else:
                base_hi += scen.p_bound[s, j] / z
                base_lo -= eta * scen.p_bound[s, j] / z
        f = market.m2_factor / 4.0
        pb_sh = scen.p_bound[s, h]
        return (f * max(0.0, -base_lo * dtr / eta) + 1e-9,
                f * max(0.0, base_hi * eta * eta * dtr) + 1e-9,
                f * max(0.0, -base_lo / eta - pb_sh) + 1e-9,
                f * max(0.0, base_hi - pb_sh) + 1e-9)

    for s in range(S):
        for h in range(H):
            u_sh, l_sh, pb_sh = scen.e_upper[s, h], scen.e_lower[s, h], scen.p_bound[s, h]
            w = win_of[h]
            m15, m16, m17, m18 = row_m2(s, h) if w >= 0 else (0.0, 0.0, 0.0, 0.0)
            if act_pr[h]:
                # (15) e - (PRv - dpr/eta) dtr >= l - (1-b) M2 with PRv = (Ppr - base)/eta
                bt, bc = baseline_terms(s, h, dtr / eta)
                terms = [(e[s, h], 1.0), (dpr[s, h], dtr / eta)] + bt
                rhs = l_sh - bc
                if w >= 0:
                    terms += [(ppr[w], -dtr / eta), (bpr[w], -m15)]
                    rhs -= m15
                else:
                    rhs += fixed_pr[h] * dtr / eta
                b.row(f"epr_{s}_{h}", terms, GE, rhs)
                # (17) PRv - dpr/eta <= pb + (1-b) M2
                bt, bc = baseline_terms(s, h, -1.0 / eta)
                terms = [(dpr[s, h], -1.0 / eta)] + bt
                rhs = pb_sh - bc
                if w >= 0:
                    terms += [(ppr[w], 1.0 / eta), (bpr[w], m17)]
                    rhs += m17
                else:
                    rhs -= fixed_pr[h] / eta
                b.row(f"ppr_{s}_{h}", terms, LE, rhs)
            if act_nr[h]:
                # (16) e + (NRv*eta - dnr*eta) dtr <= u + (1-b) M2 with NRv = (Pnr + base)*eta
                bt, bc = baseline_terms(s, h, eta * eta * dtr)
                terms = [(e[s, h], 1.0), (dnr[s, h], -eta * dtr)] + bt
                rhs = u_sh - bc
                if w >= 0:
                    terms += [(pnr[w], eta * eta * dtr), (bnr[w], m16)]
                    rhs += m16
                else:
                    rhs -= fixed_nr[h] * eta * eta * dtr
                b.row(f"enr_{s}_{h}", terms, LE, rhs)
                # (18) NRv/eta - dnr <= pb + (1-b) M2
                bt, bc = baseline_terms(s, h, 1.0)
                terms = [(dnr[s, h], -1.0)] + bt
                rhs = pb_sh - bc
                if w >= 0:
                    terms += [(pnr[w], 1.0), (bnr[w], m18)]
                    rhs += m18
                else:
                    rhs -= fixed_nr[h]
                b.row(f"pnr_{s}_{h}", terms, LE, rhs)

    for w in range(W):
        b.row(f"mpr_{w}", [(ppr[w], 1.0), (bpr[w], -m1)], LE, 0.0)
        b.row(f"mnr_{w}", [(pnr[w], 1.0), (bnr[w], -m1)], LE, 0.0)

    # scenario loss = lin_s . x + const_s
    pen = market.c_pen / KW_PER_MW
    rev_terms = []
    for w, o in enumerate(offs):
        sl = slice(o, o + market.window_len)
        rev_terms.append((ppr[w], float(np.sum(prices.c_pr[sl])) / KW_PER_MW))
        rev_terms.append((pnr[w], float(np.sum(prices.c_nr[sl])) / KW_PER_MW))
    loss_terms = []
    loss_const = np.zeros(S)
    for s in range(S):
        terms = []
        for h in range(H):
            terms.append((g[s, h], prices.c_e[h] * dt))
            terms.append((v[s, h], -prices.c_e[h] * dt))
        pen_vars = set(int(j) for j in dpr[s] if j >= 0) | set(int(j) for j in dnr[s] if j >= 0)
        terms += [(j, pen) for j in sorted(pen_vars)]
        terms.append((e[s, H - 1], -prices.c_bar))
        loss_const[s] = prices.c_bar * scen.e_lower[s, H - 1]
        if stage == 1:
            terms += [(j, -c) for j, c in rev_terms]
        loss_terms.append(terms)

    probs = scen.probs
    c = np.zeros(b.n)
    if stage == 1:
        omega = market.omega
        for s in range(S):
            for j, coef in loss_terms[s]:
                c[j] += (1.0 - omega) * probs[s] * coef
        c[cvar] += omega
        offset = (1.0 - omega) * float(probs @ loss_const)
        for s in range(S):
            # w_s >= loss_s - var
            b.row(f"tail_{s}", [(wv[s], 1.0), (var, 1.0)] + [(j, -cf) for j, cf in loss_terms[s]],
                  GE, loss_const[s])
        b.row("cvar", [(cvar, 1.0), (var, -1.0)] + [(wv[s], -market.cvar_weight * probs[s])
                                                     for s in range(S)], GE, 0.0)
    else:
        for s in range(S):
            for j, coef in loss_terms[s]:
                c[j] += probs[s] * coef
        offset = float(probs @ loss_const)
        # CVaR columns are inert in stage 2
        b.lb[var] = b.ub[var] = 0.0
        b.lb[cvar] = b.ub[cvar] = 0.0
        for s in range(S):
            b.ub[wv[s]] = 0.0

    problem = LpProblem(c, b.r, b.k, b.v, b.sense, b.rhs, b.lb, b.ub, b.integ, False, offset,
                        b.names, b.rnames)
    layout = Layout(S, H, g, v, e, dpr, dnr, ppr, pnr, bpr, bnr, win_of, var, cvar, wv)
    return StageProblem(stage, problem, layout, scen, prices, market, float(e0), fixed_pr,
                        fixed_nr, offs, m1, m2, loss_const, trailing)


def build_stage1(scen: ScenarioSet, prices: PriceSlice, market: MarketParams, e0: float,
                 trailing_dispatch, fixed_pr=None, fixed_nr=None,
                 window_offsets=None) -> StageProblem:
    """Reserve-bidding MILP with CVaR over the auction horizon."""
    if window_offsets is None:
        if scen.horizon < market.stage1_len:
            raise ValueError(f"stage 1 needs {market.stage1_len} settlements, got {scen.horizon}")
        window_offsets = stage1_windows(scen.t0, market, scen.horizon)
    return build_stage(scen, prices, market, e0, trailing_dispatch, fixed_pr, fixed_nr,
                       window_offsets, stage=1)


def build_stage2(scen: ScenarioSet, prices: PriceSlice, market: MarketParams, e0: float,
                 trailing_dispatch, plan_pr=None, plan_nr=None) -> StageProblem:
    """Dispatch LP with commitments fixed; reserve rows only where commitment is positive."""
    return build_stage(scen, prices, market, e0, trailing_dispatch, plan_pr, plan_nr, None, stage=2)


def solve_stage(sp: StageProblem, lp_engine: str = "highs", gap_tol: float = 1e-6,
                node_limit: int = 100_000, time_limit: Optional[float] = None,
                check_tol: float = 1e-6) -> StageSolution:
    if sp.problem.integrality.any():
        raw = solve_milp(sp.problem, gap_tol=gap_tol, node_limit=node_limit,
                         time_limit=time_limit, lp_engine=lp_engine)
    else:
        raw = solve_lp(sp.problem, engine=lp_engine)
    return extract_solution(raw, sp, check_tol)


def extract_solution(raw, sp: StageProblem, check_tol: float = 1e-6) -> StageSolution:
    """Map solver output back to named quantities and audit the objective."""
    status = raw.status
    if raw.x is None or status not in (OPTIMAL, GAP_LIMIT, TIME_LIMIT):
        if status in (GAP_LIMIT, TIME_LIMIT):
            raise SolverLimitError(f"stage {sp.stage}: {status} without an incumbent")
        raise OptimizationError(
            f"stage {sp.stage} solve returned {status}; every reserve row carries a penalty "
            "slack and the scenario floors are reachability-repaired, so check the scenario "
            "envelope (e_lower <= e_upper, p_bound >= 0) and the anchor e0")
    x = raw.x
    L = sp.layout
    m = sp.market
    S, H = L.S, L.H
    take = lambda idx: np.where(idx >= 0, x[np.maximum(idx, 0)], 0.0)  # noqa: E731
    g, v, e = x[L.g], x[L.v], x[L.e]
    dpr, dnr = take(L.dpr), take(L.dnr)
    wpr, wnr = x[L.ppr], x[L.pnr]
    wbpr, wbnr = np.round(x[L.bpr]), np.round(x[L.bnr])

    pr_g = sp.fixed_pr.copy()
    nr_g = sp.fixed_nr.copy()
    for w, o in enumerate(sp.window_offsets):
        pr_g[o:o + m.window_len] = wpr[w]
        nr_g[o:o + m.window_len] = wnr[w]

    net = g - v
    base = np.zeros((S, H))
    trailing = sp.trailing
    for h in range(H):
        for j in range(h - m.z, h):
            base[:, h] += (trailing[m.z + j] if j < 0 else net[:, j]) / m.z
    act_pr = np.zeros(H, dtype=bool)
    act_nr = np.zeros(H, dtype=bool)
    for h in range(H):
        w = L.win_of[h]
        act_pr[h] = wbpr[w] > 0.5 if w >= 0 else sp.fixed_pr[h] > 0
        act_nr[h] = wbnr[w] > 0.5 if w >= 0 else sp.fixed_nr[h] > 0
    p_pr_v = np.where(act_pr, (pr_g - base) / m.eta, 0.0)
    p_nr_v = np.where(act_nr, (nr_g + base) * m.eta, 0.0)

    prices = sp.prices
    c_cha = (net * prices.c_e[None, :H]).sum(axis=1) * m.dt
    if m.shared_penalty_variable:
        c_pen = dpr.sum(axis=1) * m.c_pen / KW_PER_MW
    else:
        c_pen = (dpr + dnr).sum(axis=1) * m.c_pen / KW_PER_MW
    a_credit = (e[:, H - 1] - sp.scenarios.e_lower[:, H - 1]) * prices.c_bar
    r_res = 0.0
    if sp.stage == 1:
        for w, o in enumerate(sp.window_offsets):
            sl = slice(o, o + m.window_len)
            r_res += (float(np.sum(prices.c_pr[sl])) * wpr[w]
                      + float(np.sum(prices.c_nr[sl])) * wnr[w]) / KW_PER_MW
    probs = sp.scenarios.probs
    losses = c_cha + c_pen - a_credit - r_res
    if sp.stage == 1:
        recomputed = (1.0 - m.omega) * float(probs @ losses) + m.omega * float(x[L.cvar])
    else:
        recomputed = float(probs @ losses)
    objective = sp.problem.objective_value(x)
    if abs(recomputed - objective) > check_tol * max(1.0, abs(objective)):
        raise OptimizationError(f"objective audit failed: components {recomputed!r} "
                                f"vs solver {objective!r}")
    return StageSolution(status, objective, g, v, e, dpr, dnr if not m.shared_penalty_variable
                         else dpr, p_pr_v, p_nr_v, pr_g, nr_g, wpr, wnr, wbpr, wbnr, c_cha,
                         c_pen, a_credit, r_res, float(x[L.var]), float(x[L.cvar]), x[L.w],
                         probs.copy(), getattr(raw, "nodes", 0), getattr(raw, "gap", 0.0))


def to_plan(sol: StageSolution, sp: StageProblem, tol: float = 1e-7) -> ReservePlan:
    """Commitment of a stage-1 solution in global settlement indices.

    Activation flags are normalised to ``p > tol`` so the plan's binaries
    agree with the rule stage 2 uses to switch reserve rows on.
    """
    pr = np.where(sol.window_pr > tol, sol.window_pr, 0.0)
    nr = np.where(sol.window_nr > tol, sol.window_nr, 0.0)
    return ReservePlan(sp.scenarios.t0 + sp.window_offsets, pr, nr, (pr > 0).astype(float),
                       (nr > 0).astype(float), sp.market.window_len)


def dump_lp(sp: StageProblem, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(sp.problem))
