from datetime import datetime, timedelta

import numpy as np
import pytest

from evreserve.aggregation import SettlementGrid, build_windows
from evreserve.fleet_data import ChargeSession, EvProfile, cleanse_sessions

T0 = datetime(2023, 1, 2)


def random_fleet(rng: np.random.Generator, max_ev: int = 10, max_days: int = 3, dt: float = 0.5):
    """Random small fleet: ``(windows, grid, sessions, profiles)``.

    Arrival/departure times are arbitrary minutes, so windows start and end
    inside settlements; some sessions are too short to be flexible.
    """
    n_ev = int(rng.integers(1, max_ev + 1))
    days = int(rng.integers(1, max_days + 1))
    grid = SettlementGrid(T0, dt, int(round(24 * days / dt)) + 1)
    sessions, profiles = [], {}
    for i in range(n_ev):
        cid = f"ev{i}"
        p = float(rng.choice([7.0, 7.4, 11.0, 22.0]))
        e_max = float(rng.choice([16.0, 40.0, 60.0, 77.0]))
        profiles[cid] = EvProfile(cid, p, e_max, float(rng.choice([0.9, 1.0])))
        t = float(rng.uniform(0, 8))
        while t < 24 * days - 1:
            dur = float(rng.uniform(0.5, 16))
            energy = float(rng.uniform(0, e_max * 0.9))
            start = T0 + timedelta(minutes=round(t * 60))
            end = start + timedelta(minutes=max(1, round(dur * 60)))
            sessions.append(ChargeSession(cid, start, end, energy))
            t += dur + float(rng.uniform(0.1, 12))
    sessions, _ = cleanse_sessions(sessions)
    return build_windows(sessions, profiles, grid), grid, sessions, profiles


@pytest.fixture
def rng():
    return np.random.default_rng(20231)


def random_stage_instance(rng: np.random.Generator, max_s: int = 3, max_h: int = 8,
                          max_w: int = 3, **market_kw):
    """Small random stage-1 instance: ``(scen, prices, market, e0, trailing, offsets)``.

    Windows are 2 settlements long so up to three fit into eight settlements.
    Penalties stay well above reserve prices, as in the market being modelled.
    """
    from evreserve.forecast import ScenarioSet
    from evreserve.optimizer import MarketParams, PriceSlice

    S = int(rng.integers(1, max_s + 1))
    H = int(rng.integers(2, max_h + 1))
    W = int(rng.integers(1, min(max_w, H // 2) + 1))
    starts = np.sort(rng.choice(np.arange(0, H - 1, 2), size=W, replace=False)) if H >= 2 else []
    probs = rng.dirichlet(np.ones(S))
    probs = probs / probs.sum()
    pb = rng.uniform(0, 25, (S, H)) * (rng.random((S, H)) < 0.9)
    e0 = float(rng.uniform(0, 10))
    steps = rng.uniform(0, 1, (S, H)) * 0.9 * pb * 0.5
    eu = e0 + np.cumsum(steps, axis=1) + rng.uniform(0, 3, (S, 1))
    el = eu - rng.uniform(0, 20, (S, H))
    scen = ScenarioSet(0, probs, eu, el, pb)
    prices = PriceSlice(rng.uniform(-0.02, 0.3, H), rng.uniform(0, 3, H), rng.uniform(0, 1, H),
                        float(rng.uniform(0.05, 0.2)))
    kw = dict(window_len=2, c_pen=float(rng.uniform(20, 100)), omega=float(rng.choice([0, .5, 1])))
    kw.update(market_kw)
    market = MarketParams(**kw)
    trailing = rng.uniform(-5, 15, market.z)
    return scen, prices, market, e0, trailing, starts
