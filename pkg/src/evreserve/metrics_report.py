"""Sweep summaries (one row per simulated run) and their CSV/SVG renderings."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import astuple, dataclass, fields

import numpy as np

SWEEP_COLUMNS = ("fleet_size", "algorithm", "omega", "nrmse_eu_s1", "nrmse_ed_s1", "nrmse_pb_s1",
                 "nrmse_eu_s2", "nrmse_ed_s2", "nrmse_pb_s2", "reserve_kw_per_ev",
                 "effective_cost_p_per_kwh", "penalty_share")


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class SweepResult:
    fleet_size: int
    algorithm: str
    omega: float
    nrmse_eu_s1: float
    nrmse_ed_s1: float
    nrmse_pb_s1: float
    nrmse_eu_s2: float
    nrmse_ed_s2: float
    nrmse_pb_s2: float
    reserve_kw_per_ev: float
    effective_cost_p_per_kwh: float
    penalty_share: float

    @property
    def label(self) -> str:
        if self.algorithm == "smpc":
            return f"smpc (omega={self.omega:g})"
        return self.algorithm


def _sort_key(r: SweepResult):
    return (r.fleet_size, r.algorithm, r.omega)


def summarize(logs, labels=None, delivery_offset: int = 46) -> list:
    """One :class:`SweepResult` per log, sorted by fleet size, then label.

    ``labels`` optionally overrides the algorithm name of each log. Reserve
    per EV averages the committed ``p_pr + p_nr`` over the settlements from
    the first delivery window onwards (``delivery_offset`` settlements after
    the log starts). Penalty share is penalties as a fraction of reserve
    revenue (0 without revenue).
    """
    logs = list(logs)
    if not logs:
        return []
    spans = {(lg.start_settlement, len(lg.rows)) for lg in logs}
    if len(spans) > 1:
        raise ReportError(f"logs cover different spans: {sorted(spans)}")
    if labels is not None and len(labels) != len(logs):
        raise ReportError("one label per log is required")
    out = []
    for i, lg in enumerate(logs):
        tot = lg.totals
        rows = [r for r in lg.rows if r["settlement"] >= lg.start_settlement + delivery_offset]
        if rows and lg.n_ev > 0:
            reserve = math.fsum(r["p_pr_g"] + r["p_nr_g"] for r in rows) / len(rows) / lg.n_ev
        else:
            reserve = 0.0
        share = tot["c_pen_gbp"] / tot["r_res_gbp"] if tot["r_res_gbp"] > 0 else 0.0
        out.append(SweepResult(
            int(lg.n_ev), labels[i] if labels is not None else lg.algorithm, float(lg.omega),
            lg.nrmse(1, "eu"), lg.nrmse(1, "ed"), lg.nrmse(1, "pb"),
            lg.nrmse(2, "eu"), lg.nrmse(2, "ed"), lg.nrmse(2, "pb"),
            float(reserve), 100.0 * tot["effective_cost_gbp_per_kwh"], float(share)))
    out.sort(key=_sort_key)
    return out


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_sweep_csv(results, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in results:
            w.writerow([_cell(v) for v in astuple(r)])


def read_sweep_csv(path) -> list:
    types = {f.name: f.type for f in fields(SweepResult)}
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {}
            for k in SWEEP_COLUMNS:
                t = types[k]
                vals[k] = int(row[k]) if t in (int, "int") else (
                    row[k] if t in (str, "str") else float(row[k]))
            out.append(SweepResult(**vals))
    return out


# --------------------------------------------------------------------------
# SVG


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
            "#7f7f7f", "#bcbd22", "#17becf")


def line_chart_svg(series: dict, title: str, y_label: str, x_label: str = "fleet size (EVs)",
                   width: int = 640, height: int = 400) -> str:
    """Static line chart; ``series`` maps a name to a list of ``(x, y)`` points.

    Points are drawn in ascending x. Single-point series get a marker only.
    Non-finite y values are skipped.
    """
    clean = {}
    for name, pts in series.items():
        pts = sorted((float(x), float(y)) for x, y in pts if math.isfinite(y))
        if pts:
            clean[name] = pts
    ml, mr, mt, mb = 70, 180, 40, 50
    pw, ph = width - ml - mr, height - mt - mb
    xs = [x for pts in clean.values() for x, _ in pts] or [0.0, 1.0]
    ys = [y for pts in clean.values() for _, y in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(min(ys), 0.0), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1.0, x1 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    sx = lambda x: ml + (x - x0) / (x1 - x0) * pw  # noqa: E731
    sy = lambda y: mt + ph - (y - y0) / (y1 - y0) * ph  # noqa: E731
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{_esc(title)}</text>',
           f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
           f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
           f'<text x="{ml + pw / 2:.1f}" y="{height - 10}" text-anchor="middle" '
           f'font-size="12">{_esc(x_label)}</text>',
           f'<text x="15" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="12" '
           f'transform="rotate(-90 15 {mt + ph / 2:.1f})">{_esc(y_label)}</text>']
    for v in np.linspace(y0, y1, 5):
        out.append(f'<text x="{ml - 5}" y="{sy(v) + 4:.1f}" text-anchor="end" '
                   f'font-size="10">{v:.3g}</text>')
    for v in sorted(set(xs)):
        out.append(f'<text x="{sx(v):.1f}" y="{mt + ph + 15}" text-anchor="middle" '
                   f'font-size="10">{v:g}</text>')
    for i, (name, pts) in enumerate(clean.items()):
        color = _PALETTE[i % len(_PALETTE)]
        if len(pts) > 1:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
            out.append(f'<polyline class="series" points="{coords}" fill="none" '
                       f'stroke="{color}" stroke-width="2"/>')
        for x, y in pts:
            out.append(f'<circle class="marker" cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" '
                       f'fill="{color}"/>')
        ly = mt + 15 * i
        out.append(f'<rect x="{ml + pw + 10}" y="{ly}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{ml + pw + 25}" y="{ly + 9}" font-size="11">{_esc(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def emit(results, out_dir, formats=("csv", "svg")) -> list:
    """Write ``sweep.csv`` and/or the three SVG charts; returns written paths."""
    results = sorted(results, key=_sort_key)
    if not results:
        raise ReportError("nothing to emit")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise ReportError(f"cannot create {out_dir}: {exc}") from None
    written = []
    if "csv" in formats:
        path = os.path.join(out_dir, "sweep.csv")
        write_sweep_csv(results, path)
        written.append(path)
    if "svg" in formats:
        nrmse = {}
        for r in results:
            if r.algorithm != "smpc":
                continue
            for b, name in (("eu", "E upper"), ("ed", "E diff"), ("pb", "P bound")):
                for s in (1, 2):
                    key = f"{name} stage {s}"
                    nrmse.setdefault(key, {})[r.fleet_size] = getattr(r, f"nrmse_{b}_s{s}")
        charts = {
            "nrmse.svg": (line_chart_svg({k: list(v.items()) for k, v in nrmse.items()},
                                         "Forecast NRMSE against fleet size", "NRMSE")),
            "reserve.svg": line_chart_svg(_by_label(results, "reserve_kw_per_ev"),
                                          "Average contracted reserve per vehicle", "kW per EV"),
            "cost.svg": line_chart_svg(_by_label(results, "effective_cost_p_per_kwh"),
                                       "Effective charging cost", "p/kWh"),
        }
        for name, text in charts.items():
            path = os.path.join(out_dir, name)
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text)
            written.append(path)
    return written


def _by_label(results, attr) -> dict:
    series: dict = {}
    for r in results:
        series.setdefault(r.label, []).append((r.fleet_size, getattr(r, attr)))
    return series


def average_results(results) -> list:
    """Average rows sharing ``(fleet_size, algorithm, omega)``, e.g. across seeds.

    Non-finite values are ignored in the mean of their column.
    """
    groups: dict = {}
    for r in results:
        groups.setdefault(_sort_key(r), []).append(r)
    out = []
    for key in sorted(groups):
        rows = groups[key]
        vals = []
        for name in SWEEP_COLUMNS[3:]:
            col = [getattr(r, name) for r in rows if math.isfinite(getattr(r, name))]
            vals.append(math.fsum(col) / len(col) if col else float("nan"))
        out.append(SweepResult(*key, *vals))
    return out
