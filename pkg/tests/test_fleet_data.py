from datetime import date, datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from evreserve.fleet_data import (ChargeSession, DataError, FleetArchetype, ReserveTariff,
                                  cleanse_sessions, generate_synthetic_fleet, infer_profiles,
                                  load_exogenous, parse_sessions, synthetic_exogenous,
                                  write_prices_csv, write_sessions_csv)

T0 = datetime(2023, 1, 2)


def sess(cid, start_h, dur_h, kwh=10.0):
    t = T0 + timedelta(hours=start_h)
    return ChargeSession(cid, t, t + timedelta(hours=dur_h), kwh)


# --- parse_sessions ---------------------------------------------------------

HEADER = "charger_id,plug_in,plug_out,energy_kwh\n"


def test_parse_single_row():
    res = parse_sessions(HEADER + "c1,2023-01-01T18:00,2023-01-02T07:00,12.0\n")
    assert res.errors == [] and res.n_rows == 1
    s = res.sessions[0]
    assert s.charger_id == "c1" and s.duration_h == 13.0 and s.energy_kwh == 12.0


def test_parse_header_only():
    res = parse_sessions(HEADER.encode())
    assert res.sessions == [] and res.errors == [] and res.n_rows == 0


def test_parse_collects_bad_rows_with_line_numbers():
    text = (HEADER + "c1,2023-01-01T18:00,2023-01-02T07:00,12\n"
            "c2,2023-01-02T07:00,2023-01-01T18:00,5\n"
            "c3,not-a-date,2023-01-02T07:00,5\n"
            "c4,2023-01-01T18:00,2023-01-02T07:00,-1\n"
            "c5,2023-01-01T18:00,2023-01-02T07:00,3\n")
    res = parse_sessions(text)
    assert [s.charger_id for s in res.sessions] == ["c1", "c5"]
    assert [e.line for e in res.errors] == [3, 4, 5]
    assert res.n_rows == 5


def test_parse_missing_column():
    with pytest.raises(DataError, match="energy_kwh"):
        parse_sessions("charger_id,plug_in,plug_out\nc1,2023-01-01T18:00,2023-01-02T07:00\n")


def test_parse_custom_schema_and_roundtrip(tmp_path):
    res = parse_sessions("id,a,b,kwh\nx,2023-01-01T18:00,2023-01-02T07:00,4.5\n",
                         {"charger_id": "id", "plug_in": "a", "plug_out": "b", "energy_kwh": "kwh"})
    path = tmp_path / "s.csv"
    write_sessions_csv(res.sessions, path)
    assert parse_sessions(str(path)).sessions == res.sessions


# --- cleanse_sessions --------------------------------------------------------

def test_cleanse_drops_long_session():
    kept, dropped = cleanse_sessions([sess("c1", 0, 200)])
    assert kept == [] and dropped[0][1] == "duration>168h"


def test_cleanse_keeps_exactly_one_week():
    kept, _ = cleanse_sessions([sess("c1", 0, 168)])
    assert len(kept) == 1


def test_cleanse_drops_both_overlapping():
    a, b = sess("c1", 18, 4), sess("c1", 21, 2)
    kept, dropped = cleanse_sessions([a, b])
    assert kept == []
    assert sorted(r for _, r in dropped) == ["overlap", "overlap"]


def test_cleanse_keeps_disjoint_and_sorts():
    a, b, c = sess("c2", 0, 2), sess("c1", 5, 2), sess("c1", 0, 2)
    kept, dropped = cleanse_sessions([a, b, c])
    assert kept == [c, b, a] and dropped == []


session_lists = st.lists(
    st.tuples(st.sampled_from(["a", "b", "c"]), st.integers(0, 400), st.integers(1, 250),
              st.floats(0, 80)),
    max_size=25).map(lambda rows: [sess(c, h, d, e) for c, h, d, e in rows])


@settings(max_examples=150, deadline=None)
@given(session_lists)
def test_cleanse_idempotent(sessions):
    kept, _ = cleanse_sessions(sessions)
    again, dropped = cleanse_sessions(kept)
    assert again == kept and dropped == []


@settings(max_examples=150, deadline=None)
@given(session_lists)
def test_cleanse_output_invariants(sessions):
    kept, _ = cleanse_sessions(sessions)
    assert kept == sorted(kept, key=lambda s: (s.charger_id, s.plug_in))
    for s in kept:
        assert s.duration_h <= 168
    for x, y in zip(kept, kept[1:]):
        if x.charger_id == y.charger_id:
            assert y.plug_in >= x.plug_out


# --- infer_profiles -----------------------------------------------------------

def test_profiles_floors():
    p = infer_profiles([sess("c1", 0, 2, 10.0)])["c1"]
    assert (p.p_max, p.e_max, p.eta) == (7.0, 16.0, 0.9)


def test_profiles_two_sessions():
    p = infer_profiles([sess("c1", 0, 2, 22.0), sess("c1", 10, 10, 30.0)])["c1"]
    assert p.p_max == pytest.approx(11.0) and p.e_max == 30.0


def test_profiles_at_floor():
    p = infer_profiles([sess("c1", 0, 1, 7.0)])["c1"]
    assert (p.p_max, p.e_max) == (7.0, 16.0)


def test_profiles_eta_config_and_absent_charger():
    prof = infer_profiles([sess("c1", 0, 1, 7.0)], eta=0.95)
    assert prof["c1"].eta == 0.95 and "c2" not in prof


@settings(max_examples=100, deadline=None)
@given(session_lists, st.integers(0, 400), st.integers(1, 100), st.floats(0, 80))
def test_profiles_monotone_under_added_session(sessions, h, d, e):
    extra = sess("a", h, d, e)
    before = infer_profiles(sessions)
    after = infer_profiles(sessions + [extra])
    for cid, p in before.items():
        assert after[cid].p_max >= p.p_max and after[cid].e_max >= p.e_max


# --- synthetic fleet --------------------------------------------------------

def test_synthetic_deterministic(tmp_path):
    a = generate_synthetic_fleet(42, 20, 10)
    b = generate_synthetic_fleet(42, 20, 10)
    write_sessions_csv(a, tmp_path / "a.csv")
    write_sessions_csv(b, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_synthetic_empty():
    assert generate_synthetic_fleet(1, 0, 10) == []


def test_synthetic_prefix_stable_and_clean():
    small = generate_synthetic_fleet(7, 5, 20)
    big = generate_synthetic_fleet(7, 12, 20)
    ids = {s.charger_id for s in small}
    assert [s for s in big if s.charger_id in ids] == small
    kept, dropped = cleanse_sessions(big)
    assert dropped == [] and len(kept) == len(big)


def test_synthetic_count_band():
    # per-day plug-in probability is drawn from plug_prob_weekday with weekend damping,
    # plus occasional top-ups, so the rate sits well inside [0.5, 1.2] per EV-day
    n_ev, days = 1000, 120
    n = len(generate_synthetic_fleet(42, n_ev, days))
    assert n_ev * days * 0.5 <= n <= n_ev * days * 1.2


def test_synthetic_overnight_pattern():
    sessions = generate_synthetic_fleet(3, 50, 14)
    arrivals = np.array([s.plug_in.hour for s in sessions])
    evening = np.mean((arrivals >= 14) & (arrivals <= 23))
    assert evening > 0.6


# --- exogenous --------------------------------------------------------------

def test_tariff_day_and_night():
    t = ReserveTariff()
    assert t.prices(datetime(2023, 1, 2, 8)) == pytest.approx((1.41, 0.423))
    assert t.prices(datetime(2023, 1, 2, 3)) == pytest.approx((0.31, 0.093))


def _weather(path, days, start=date(2023, 1, 2)):
    with open(path, "w") as fh:
        fh.write("date,temp_c,precip_mm,bank_holiday\n")
        for i in range(days):
            fh.write(f"{(start + timedelta(days=i)).isoformat()},5.0,1.0,0\n")


def test_load_exogenous_constant_price(tmp_path):
    write_prices_csv(T0, [0.06] * 96, tmp_path / "p.csv")
    _weather(tmp_path / "w.csv", 2)
    exo = load_exogenous(str(tmp_path / "p.csv"), str(tmp_path / "w.csv"), T0, T0 + timedelta(days=2))
    assert exo.mean_price == pytest.approx(0.06)
    assert exo.n == 96 and list(exo.day_of_week) == [0, 1]
    assert exo.reserve_price_pos[16] == 1.41 and exo.reserve_price_neg[6] == pytest.approx(0.093)


def test_load_exogenous_reports_first_gap(tmp_path):
    write_prices_csv(T0, [0.06] * 50, tmp_path / "p.csv")
    _weather(tmp_path / "w.csv", 2)
    with pytest.raises(DataError, match="2023-01-03T01:00"):
        load_exogenous(str(tmp_path / "p.csv"), str(tmp_path / "w.csv"), T0, T0 + timedelta(days=2))


def test_load_exogenous_weather_gap(tmp_path):
    write_prices_csv(T0, [0.06] * 96, tmp_path / "p.csv")
    _weather(tmp_path / "w.csv", 1)
    with pytest.raises(DataError, match="2023-01-03"):
        load_exogenous(str(tmp_path / "p.csv"), str(tmp_path / "w.csv"), T0, T0 + timedelta(days=2))


def test_synthetic_exogenous_shapes():
    exo = synthetic_exogenous(5, date(2023, 1, 2), 3)
    assert exo.n == 144 and len(exo.dates) == 3
    np.testing.assert_allclose(exo.reserve_price_neg, 0.3 * exo.reserve_price_pos)


def test_archetype_is_hashable():
    hash(FleetArchetype())
