"""Per-settlement-of-day regression models and banded scenario paths.

Three daily-frame targets are modelled, one OLS fit per settlement of day:

* ``E_upper``: growth of the upper boundary since midnight, evaluated at the
  end of each settlement (the absolute upper boundary is cumulative and
  unbounded, so only its within-day increment is stationary);
* ``E_diff``: gap between upper and lower boundary at the end of each settlement;
* ``P_bound``: power boundary of each settlement.

Regressors per day: intercept, E_diff at the day's first instant, temperature,
precipitation, bank holiday, and six day-of-week dummies (Monday is the
reference category), 11 coefficients in total.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .aggregation import AggregateEnvelope

TARGETS = ("E_upper", "E_diff", "P_bound")
N_COEF = 11
SCENARIO_PROBS = (0.01, 0.10, 0.78, 0.10, 0.01)
CENTRAL = 2


class ForecastError(ValueError):
    """Not enough data to fit, or missing features at prediction time."""


def band_offsets(probs=SCENARIO_PROBS) -> np.ndarray:
    """Conditional mean of a standard normal within each cumulative-probability band.

    Mirror-symmetric band layouts get exactly antisymmetric offsets (and an
    exact zero in the middle) by evaluating only the upper half.
    """
    probs = np.asarray(probs, dtype=float)
    edges = np.concatenate([[0.0], np.cumsum(probs)])
    edges[-1] = 1.0
    lo, hi = edges[:-1], edges[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (norm.pdf(norm.ppf(lo)) - norm.pdf(norm.ppf(hi))) / (hi - lo)
    if np.allclose(probs, probs[::-1], rtol=0, atol=1e-15):
        n = probs.size
        for b in range(n // 2):
            z[b] = -z[n - 1 - b]
        if n % 2:
            z[n // 2] = 0.0
    return z


def design_matrix(ed0, temp, precip, holiday, dow) -> np.ndarray:
    """One regressor row per day, 11 columns."""
    ed0 = np.atleast_1d(np.asarray(ed0, dtype=float))
    dow = np.atleast_1d(np.asarray(dow, dtype=int))
    X = np.zeros((ed0.size, N_COEF))
    X[:, 0] = 1.0
    X[:, 1] = ed0
    X[:, 2] = temp
    X[:, 3] = precip
    X[:, 4] = holiday
    for j in range(1, 7):
        X[:, 4 + j] = dow == j
    if not np.all(np.isfinite(X)):
        raise ForecastError("regressors must be finite")
    return X


@dataclass
class MlrModel:
    target: str
    beta: np.ndarray  # (k, 11)
    sigma: np.ndarray  # (k,)

    @property
    def n_slots(self) -> int:
        return self.sigma.size

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Point forecasts for design rows ``X`` -> (days, slots)."""
        return np.atleast_2d(X) @ self.beta.T


def fit_mlr(X: np.ndarray, Y: np.ndarray, target: str) -> MlrModel:
    """Least-squares fit per settlement of day (column of ``Y``).

    Rank-deficient designs resolve to the minimum-norm solution. The
    residual sigma is the sample standard deviation (ddof=1) of the in-sample
    residuals. Columns of ``X`` that are identically zero carry no
    information and do not count towards the required number of rows.
    """
    if target not in TARGETS:
        raise ForecastError(f"unknown target {target!r}")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if X.shape[0] != Y.shape[0]:
        raise ForecastError("design and target row counts differ")
    need = max(int(np.count_nonzero(np.any(X != 0.0, axis=0))), 2)
    beta = np.zeros((Y.shape[1], X.shape[1]))
    sigma = np.zeros(Y.shape[1])
    for k in range(Y.shape[1]):
        ok = np.isfinite(Y[:, k])
        if ok.sum() < need:
            raise ForecastError(f"{target}: settlement of day {k} has {int(ok.sum())} "
                                f"training rows, needs {need}")
        coef, *_ = np.linalg.lstsq(X[ok], Y[ok, k], rcond=None)
        beta[k] = coef
        resid = Y[ok, k] - X[ok] @ coef
        sigma[k] = float(np.std(resid, ddof=1))
    return MlrModel(target, beta, sigma)


def save_models(models: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["target", "settlement_of_day"] + [f"beta{j}" for j in range(N_COEF)] + ["sigma"])
        for name in TARGETS:
            if name not in models:
                continue
            m = models[name]
            for k in range(m.n_slots):
                w.writerow([name, k] + [repr(float(b)) for b in m.beta[k]] + [repr(float(m.sigma[k]))])


def load_models(path) -> dict:
    rows: dict = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(r["target"], []).append(r)
    out = {}
    for name, rs in rows.items():
        rs.sort(key=lambda r: int(r["settlement_of_day"]))
        beta = np.array([[float(r[f"beta{j}"]) for j in range(N_COEF)] for r in rs])
        sigma = np.array([float(r["sigma"]) for r in rs])
        out[name] = MlrModel(name, beta, sigma)
    return out


# --------------------------------------------------------------------------
# daily-frame targets from realized envelopes


@dataclass(frozen=True)
class DayFeatures:
    """Exogenous regressors for every day of a span (day 0 at grid start)."""

    temp: np.ndarray
    precip: np.ndarray
    holiday: np.ndarray
    dow: np.ndarray

    @property
    def n_days(self) -> int:
        return self.temp.size

    @classmethod
    def from_exogenous(cls, exo) -> "DayFeatures":
        return cls(np.asarray(exo.temp_c, float), np.asarray(exo.precip_mm, float),
                   np.asarray(exo.bank_holiday, float), np.asarray(exo.day_of_week, int))

    def rows(self, days, ed0) -> np.ndarray:
        days = np.asarray(days, dtype=int)
        if days.size and (days.min() < 0 or days.max() >= self.n_days):
            raise ForecastError(f"no features for day {int(days.max())}")
        return design_matrix(ed0, self.temp[days], self.precip[days], self.holiday[days],
                             self.dow[days])


def daily_targets(env: AggregateEnvelope, days, per_day: int = 48) -> dict:
    """Realized daily-frame targets for each day in ``days``.

    Returns a dict with ``E_upper``, ``E_diff``, ``P_bound`` arrays of shape
    (len(days), per_day) and ``ed0`` (E_diff at each day's first instant).
    Energy targets are taken at the end of each settlement.
    """
    days = np.asarray(days, dtype=int)
    if days.size and env.n < per_day * (days.max() + 1) + 1:
        raise ForecastError("envelope too short for requested days")
    ed = env.e_diff
    k = np.arange(per_day)
    out = {"E_upper": np.empty((days.size, per_day)), "E_diff": np.empty((days.size, per_day)),
           "P_bound": np.empty((days.size, per_day)), "ed0": np.empty(days.size)}
    for i, d in enumerate(days):
        s = per_day * d
        out["E_upper"][i] = env.e_upper[s + k + 1] - env.e_upper[s]
        out["E_diff"][i] = ed[s + k + 1]
        out["P_bound"][i] = env.p_bound[s + k]
        out["ed0"][i] = ed[s]
    return out


def fit_models(env: AggregateEnvelope, features: DayFeatures, train_days,
               per_day: int = 48) -> dict:
    tg = daily_targets(env, train_days, per_day)
    X = features.rows(train_days, tg["ed0"])
    return {name: fit_mlr(X, tg[name], name) for name in TARGETS}


# --------------------------------------------------------------------------
# point forecasts and scenarios


@dataclass
class PointForecast:
    """Daily-frame point forecasts for consecutive days starting at ``first_day``."""

    first_day: int
    e_upper: np.ndarray  # (days, per_day) growth since midnight
    e_diff: np.ndarray
    p_bound: np.ndarray

    @property
    def e_lower(self) -> np.ndarray:
        return self.e_upper - np.maximum(self.e_diff, 0.0)


def predict_boundaries(models: dict, features: DayFeatures, first_day: int, n_days: int,
                       ed0_first: float) -> PointForecast:
    """Roll the three models forward day by day.

    ``ed0_first`` is the realized E_diff at the start of ``first_day``; later
    days take the previous day's final predicted E_diff as their initial
    condition.
    """
    for name in TARGETS:
        if name not in models:
            raise ForecastError(f"missing model for {name}")
    per_day = models["E_upper"].n_slots
    eu = np.empty((n_days, per_day))
    ed = np.empty((n_days, per_day))
    pb = np.empty((n_days, per_day))
    init = float(ed0_first)
    for i in range(n_days):
        X = features.rows([first_day + i], [init])
        eu[i] = models["E_upper"].predict(X)[0]
        ed[i] = models["E_diff"].predict(X)[0]
        pb[i] = models["P_bound"].predict(X)[0]
        init = float(max(ed[i, -1], 0.0))
    return PointForecast(first_day, eu, ed, np.maximum(pb, 0.0))


@dataclass
class ScenarioSet:
    """Scenario paths over settlements ``t0 .. t0+H-1`` of the global grid.

    ``e_upper``/``e_lower`` hold the boundaries at the END of each settlement
    (instants ``t0+1 .. t0+H``); ``p_bound`` holds each settlement's power
    boundary.
    """

    t0: int
    probs: np.ndarray
    e_upper: np.ndarray  # (S, H)
    e_lower: np.ndarray
    p_bound: np.ndarray
    bands: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=int))

    @property
    def n_scenarios(self) -> int:
        return self.probs.size

    @property
    def horizon(self) -> int:
        return self.e_upper.shape[1]

    def central(self) -> "ScenarioSet":
        """The single central-band scenario with probability 1."""
        if self.bands.size:
            hit = np.flatnonzero(np.all(self.bands == CENTRAL, axis=1))
            i = int(hit[0]) if hit.size else int(np.argmax(self.probs))
        else:
            i = int(np.argmax(self.probs))
        return ScenarioSet(self.t0, np.ones(1), self.e_upper[i:i + 1].copy(),
                           self.e_lower[i:i + 1].copy(), self.p_bound[i:i + 1].copy(),
                           np.full((1, 3), CENTRAL))

    def truncated(self, horizon: int) -> "ScenarioSet":
        return ScenarioSet(self.t0, self.probs, self.e_upper[:, :horizon].copy(),
                           self.e_lower[:, :horizon].copy(), self.p_bound[:, :horizon].copy(),
                           self.bands)


def realized_scenario(env: AggregateEnvelope, t0: int, horizon: int) -> ScenarioSet:
    """The realized envelope as a single certain scenario."""
    if t0 + horizon >= env.n + 1 or t0 < 0:
        raise ForecastError("realized envelope does not cover the horizon")
    sl = slice(t0 + 1, t0 + horizon + 1)
    return ScenarioSet(t0, np.ones(1), env.e_upper[None, sl].copy(), env.e_lower[None, sl].copy(),
                       env.p_bound[None, t0:t0 + horizon].copy(), np.full((1, 3), CENTRAL))


def generate_scenarios(models: dict, features: DayFeatures, env: AggregateEnvelope, t0: int,
                       horizon: int, probs=SCENARIO_PROBS, mode: str = "joint",
                       per_day: int = 48) -> ScenarioSet:
    """Scenario paths for the ``horizon`` settlements starting at ``t0``.

    Only realized envelope information up to instant ``t0`` is used: the
    upper boundary at ``t0`` anchors the absolute level, the realized growth
    since the start of the current day is subtracted from the forecast
    growth, and E_diff at the current day's start feeds the initial-condition
    regressor (later days use the forecast).

    In ``joint`` mode band ``b`` shifts all three series by ``z_b * sigma`` at
    every settlement (5 comonotone scenarios). ``product`` mode crosses the
    bands of the three series independently.
    """
    if t0 < 0 or t0 >= env.n:
        raise ForecastError("forecast origin outside the realized envelope")
    probs = np.asarray(probs, dtype=float)
    z = band_offsets(probs)
    d0 = t0 // per_day
    last_instant = t0 + horizon
    n_days = (last_instant - 1) // per_day - d0 + 1
    pf = predict_boundaries(models, features, d0, n_days, env.e_diff[per_day * d0])
    su = models["E_upper"].sigma
    sd = models["E_diff"].sigma
    sp = models["P_bound"].sigma

    nb = probs.size
    if mode == "joint":
        bands = np.repeat(np.arange(nb)[:, None], 3, axis=1)
        p = probs.copy()
    elif mode == "product":
        g = np.array(np.meshgrid(np.arange(nb), np.arange(nb), np.arange(nb), indexing="ij"))
        bands = g.reshape(3, -1).T
        p = probs[bands[:, 0]] * probs[bands[:, 1]] * probs[bands[:, 2]]
    else:
        raise ForecastError(f"unknown scenario mode {mode!r}")

    inst = np.arange(t0 + 1, last_instant + 1)
    day = (inst - 1) // per_day - d0
    slot = (inst - 1) % per_day
    sett = np.arange(t0, t0 + horizon)
    sday = sett // per_day - d0
    sslot = sett % per_day

    u_anchor = float(env.e_upper[t0])
    grown = u_anchor - float(env.e_upper[per_day * d0])
    S = bands.shape[0]
    eu = np.empty((S, horizon))
    el = np.empty((S, horizon))
    ep = np.empty((S, horizon))
    for s in range(S):
        bu, bd, bp = bands[s]
        level = pf.e_upper[day, slot] + z[bu] * su[slot]
        u = np.empty(horizon)
        day_base = u_anchor
        for j in range(horizon):
            if day[j] == 0:
                u[j] = u_anchor + max(0.0, level[j] - grown)
            else:
                if slot[j] == 0:
                    day_base = u[j - 1] if j > 0 else u_anchor
                u[j] = day_base + max(0.0, level[j])
        u = np.maximum.accumulate(np.maximum(u, u_anchor))
        gap = np.maximum(pf.e_diff[day, slot] + z[bd] * sd[slot], 0.0)
        eu[s] = u
        el[s] = np.minimum(u - gap, u)
        ep[s] = np.maximum(pf.p_bound[sday, sslot] + z[bp] * sp[sslot], 0.0)
    return ScenarioSet(t0, p, eu, el, ep, bands)


def nrmse(pred, actual) -> float:
    """Root-mean-square error normalised by the mean of ``actual``."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape or actual.size == 0:
        raise ValueError("nrmse needs two equal-length non-empty series")
    mean = float(np.mean(actual))
    if mean == 0.0:
        raise ZeroDivisionError("nrmse undefined for zero-mean actuals")
    return float(np.sqrt(np.mean((pred - actual) ** 2)) / mean)


def forecast_errors(scen: ScenarioSet, env: AggregateEnvelope) -> dict:
    """Squared-error sums and actual sums of the central scenario per boundary.

    The upper boundary is compared as growth since the forecast origin so the
    cumulative level does not inflate the normaliser. Returned per boundary
    as ``(sum_sq_err, sum_actual, count)`` for pooling across forecasts.
    """
    c = scen.central()
    t0, H = scen.t0, scen.horizon
    real = realized_scenario(env, t0, H)
    u0 = env.e_upper[t0]
    pairs = {
        "eu": (c.e_upper[0] - u0, real.e_upper[0] - u0),
        "ed": (c.e_upper[0] - c.e_lower[0], real.e_upper[0] - real.e_lower[0]),
        "pb": (c.p_bound[0], real.p_bound[0]),
    }
    return {k: (float(np.sum((a - b) ** 2)), float(np.sum(b)), b.size) for k, (a, b) in pairs.items()}


def pooled_nrmse(acc) -> float:
    """NRMSE from accumulated ``(sum_sq_err, sum_actual, count)`` triples."""
    sse = sum(a[0] for a in acc)
    tot = sum(a[1] for a in acc)
    n = sum(a[2] for a in acc)
    if n == 0 or tot == 0.0:
        return float("nan")
    return float(np.sqrt(sse / n) / (tot / n))
