"""Reader/writer for a CPLEX-style LP text format.

Only the subset produced by :func:`dumps` is accepted by :func:`loads`: one
term per ``coef name`` pair, one constraint per line, ``Bounds`` lines of the
form ``lo <= name <= hi`` or ``name free``. A constant objective offset is
stored in a ``\\ offset:`` comment because the format has no slot for it.
"""

from __future__ import annotations

import math
import re

import numpy as np

from .problem import LpProblem

_SENSE_TXT = {"L": "<=", "E": "=", "G": ">="}
_TXT_SENSE = {v: k for k, v in _SENSE_TXT.items()}


def _num(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def _terms(coefs, names) -> str:
    if len(coefs) == 0:
        return "0 " + names[0] if names else "0"
    return " ".join(f"{'+' if c >= 0 else '-'} {_num(abs(c))} {n}" for c, n in zip(coefs, names))


def dumps(problem: LpProblem) -> str:
    n = problem.n_vars
    vnames = problem.var_names or [f"x{j}" for j in range(n)]
    rnames = problem.row_names or [f"c{i}" for i in range(problem.n_rows)]
    lines = ["\\ written by evreserve", f"\\ offset: {_num(problem.obj_offset)}"]
    lines.append("Maximize" if problem.maximize else "Minimize")
    nz = np.flatnonzero(problem.c)
    lines.append(" obj: " + _terms(problem.c[nz], [vnames[j] for j in nz] or [vnames[0]]))
    lines.append("Subject To")
    A = problem.matrix().tocsr()
    A.sum_duplicates()
    for i in range(problem.n_rows):
        lo, hi = A.indptr[i], A.indptr[i + 1]
        cols = A.indices[lo:hi]
        vals = A.data[lo:hi]
        order = np.argsort(cols, kind="stable")
        lhs = _terms(vals[order], [vnames[j] for j in cols[order]] or [vnames[0]])
        lines.append(f" {rnames[i]}: {lhs} {_SENSE_TXT[problem.senses[i]]} {_num(problem.rhs[i])}")
    lines.append("Bounds")
    for j in range(n):
        lo, hi = problem.lb[j], problem.ub[j]
        if math.isinf(lo) and math.isinf(hi) and lo < 0 < hi:
            lines.append(f" {vnames[j]} free")
        else:
            lines.append(f" {_num(lo)} <= {vnames[j]} <= {_num(hi)}")
    ints = np.flatnonzero(problem.integrality)
    binaries = [j for j in ints if problem.lb[j] >= 0 and problem.ub[j] <= 1]
    generals = [j for j in ints if j not in set(binaries)]
    if binaries:
        lines.append("Binaries")
        lines.extend(f" {vnames[j]}" for j in binaries)
    if generals:
        lines.append("Generals")
        lines.extend(f" {vnames[j]}" for j in generals)
    lines.append("End")
    return "\n".join(lines) + "\n"


_TERM = re.compile(r"([+-])\s+(\S+)\s+(\S+)")


def _parse_terms(text: str):
    text = text.strip()
    if text.startswith("0 ") or text == "0":
        return []
    return [((1.0 if s == "+" else -1.0) * float(c), name) for s, c, name in _TERM.findall(text)]


def loads(text: str) -> LpProblem:
    offset = 0.0
    section = None
    maximize = False
    obj_terms = []
    rows = []
    bounds = {}
    ints = []
    vnames: list = []
    index: dict = {}

    def var(name):
        if name not in index:
            index[name] = len(vnames)
            vnames.append(name)
        return index[name]

    # register names in Bounds order first so column order survives a roundtrip
    in_bounds = False
    for raw in text.splitlines():
        low = raw.strip().lower()
        if low in ("bounds", "binaries", "generals", "end"):
            in_bounds = low == "bounds"
        elif in_bounds and low:
            parts = raw.split()
            var(parts[0] if len(parts) == 2 else parts[2])

    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("\\"):
            m = re.match(r"\\ offset:\s*(\S+)", line)
            if m:
                offset = float(m.group(1))
            continue
        low = line.lower()
        if low in ("minimize", "maximize"):
            maximize = low == "maximize"
            section = "obj"
            continue
        if low in ("subject to", "bounds", "binaries", "generals", "end"):
            section = low
            continue
        if section == "obj":
            body = line.split(":", 1)[1]
            obj_terms = [(c, var(n)) for c, n in _parse_terms(body)]
        elif section == "subject to":
            name, body = line.split(":", 1)
            m = re.match(r"(.*)\s(<=|>=|=)\s(\S+)$", body.strip())
            lhs, sense, rhs = m.group(1), m.group(2), float(m.group(3))
            rows.append((name.strip(), [(c, var(n)) for c, n in _parse_terms(lhs)],
                         _TXT_SENSE[sense], rhs))
        elif section == "bounds":
            parts = line.split()
            if len(parts) == 2 and parts[1] == "free":
                bounds[var(parts[0])] = (-math.inf, math.inf)
            else:
                bounds[var(parts[2])] = (float(parts[0]), float(parts[4]))
        elif section in ("binaries", "generals"):
            ints.append(var(line))

    n = len(vnames)
    c = np.zeros(n)
    for coef, j in obj_terms:
        c[j] += coef
    r, k, v = [], [], []
    for i, (_, terms, _, _) in enumerate(rows):
        for coef, j in terms:
            r.append(i)
            k.append(j)
            v.append(coef)
    lb = np.zeros(n)
    ub = np.full(n, np.inf)
    for j, (lo, hi) in bounds.items():
        lb[j], ub[j] = lo, hi
    integ = np.zeros(n, dtype=bool)
    integ[ints] = True
    return LpProblem(c, r, k, v, [row[2] for row in rows], [row[3] for row in rows],
                     lb, ub, integ, maximize, offset, vnames, [row[0] for row in rows])
