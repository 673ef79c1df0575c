"""Exact rational linear programming (Phase-I feasibility) over Fractions.

Small dense simplex with Bland's rule, used by the bundled solver backend to
turn float-level solutions into exactly feasible rational ones.  Problems are
split into connected components over shared variables first, which keeps the
tableaus small for block-structured certificate systems.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional

Row = tuple[dict[str, Fraction], Fraction, str]  # (coeffs, const, rel); expr = coeffs.x + const


def _components(rows: list[Row]) -> list[list[int]]:
    parent: dict[str, str] = {}

    def find(x: str) -> str:
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(a: str, b: str):
        parent[find(a)] = find(b)

    for coeffs, _, _ in rows:
        names = list(coeffs)
        for other in names[1:]:
            union(names[0], other)
    groups: dict[str, list[int]] = {}
    empties: list[int] = []
    for i, (coeffs, _, _) in enumerate(rows):
        if not coeffs:
            empties.append(i)
            continue
        groups.setdefault(find(next(iter(coeffs))), []).append(i)
    out = list(groups.values())
    if empties:
        out.append(empties)
    return out


def solve_feasibility(
    rows: list[Row],
    nonneg: set[str],
) -> Optional[dict[str, Fraction]]:
    """Find rationals satisfying every row (rel '=' means expr = 0, '>=' means
    expr >= 0); variables in ``nonneg`` are additionally bounded below by 0.

    Returns an assignment (variables not mentioned default to 0) or None when
    provably infeasible.
    """
    solution: dict[str, Fraction] = {}
    for comp in _components(rows):
        sub = [rows[i] for i in comp]
        res = _solve_component(sub, nonneg)
        if res is None:
            return None
        solution.update(res)
    return solution


def _solve_component(
    rows: list[Row], nonneg: set[str]
) -> Optional[dict[str, Fraction]]:
    # Variable layout: nonneg vars map to one column, free vars to a pair
    # (x = x+ - x-).  Inequality rows get a surplus column; all rows get an
    # artificial for Phase I.
    vars_: list[str] = []
    seen = set()
    for coeffs, _, _ in rows:
        for v in coeffs:
            if v not in seen:
                seen.add(v)
                vars_.append(v)
    col_of: dict[str, int] = {}
    ncols = 0
    for v in vars_:
        col_of[v] = ncols
        ncols += 1 if v in nonneg else 2

    tableau: list[list[Fraction]] = []
    rhs: list[Fraction] = []
    surplus_cols = 0
    for coeffs, const, rel in rows:
        if rel == ">=":
            surplus_cols += 1
    total_cols = ncols + surplus_cols
    si = ncols
    for coeffs, const, rel in rows:
        row = [Fraction(0)] * total_cols
        for v, c in coeffs.items():
            j = col_of[v]
            row[j] += c
            if v not in nonneg:
                row[j + 1] -= c
        b = -const
        if rel == ">=":
            row[si] = Fraction(-1)
            si += 1
        if b < 0:
            row = [-x for x in row]
            b = -b
        tableau.append(row)
        rhs.append(b)

    m = len(tableau)
    n = total_cols
    # Phase-I: add artificials, minimize their sum.
    basis = list(range(n, n + m))
    for i in range(m):
        tableau[i] = tableau[i] + [Fraction(1) if k == i else Fraction(0) for k in range(m)]
    cost = [Fraction(0)] * (n + m) + [Fraction(0)]
    for j in range(n, n + m):
        cost[j] = Fraction(1)
    # reduced costs: z_j - c_j with basic artificials
    z = [Fraction(0)] * (n + m + 1)
    for i in range(m):
        for j in range(n + m):
            z[j] += tableau[i][j]
        z[n + m] += rhs[i]

    def pivot(pr: int, pc: int):
        prow = tableau[pr]
        pv = prow[pc]
        inv = 1 / pv
        tableau[pr] = [x * inv for x in prow]
        rhs[pr] *= inv
        prow = tableau[pr]
        for i in range(m):
            if i == pr:
                continue
            factor = tableau[i][pc]
            if factor != 0:
                row_i = tableau[i]
                tableau[i] = [a - factor * b for a, b in zip(row_i, prow)]
                rhs[i] -= factor * rhs[pr]
        factor = z[pc]
        if factor != 0:
            for j in range(n + m):
                z[j] -= factor * prow[j]
            z[n + m] -= factor * rhs[pr]
        basis[pr] = pc

    guard = 0
    max_iters = 200 * (m + n + 10)
    while True:
        guard += 1
        if guard > max_iters:
            return None  # cycling guard; treat as unknown-infeasible
        # Bland: enter the lowest-index column with positive reduced cost
        pc = -1
        for j in range(n + m):
            if z[j] - cost[j] > 0:
                pc = j
                break
        if pc < 0:
            break
        pr = -1
        best = None
        for i in range(m):
            a = tableau[i][pc]
            if a > 0:
                ratio = rhs[i] / a
                if best is None or ratio < best or (ratio == best and basis[i] < basis[pr]):
                    best = ratio
                    pr = i
        if pr < 0:
            return None  # unbounded Phase-I cannot happen; defensive
        pivot(pr, pc)

    if z[n + m] != 0:
        return None  # artificials remain positive: infeasible

    values = [Fraction(0)] * (n + m)
    for i, b in enumerate(basis):
        values[b] = rhs[i]
    out: dict[str, Fraction] = {}
    for v in vars_:
        j = col_of[v]
        out[v] = values[j] if v in nonneg else values[j] - values[j + 1]
    return out


def solve_with_preferred(
    eqs: list[tuple[dict[str, Fraction], Fraction]],
    targets: dict[str, Fraction],
) -> Optional[dict[str, Fraction]]:
    """Exact solution of coeffs.x + const = 0 with free variables pinned to
    preferred target values (0 when absent); None when inconsistent."""
    reduced = _reduce(eqs)
    if reduced is None:
        return None
    pivots, variables = reduced
    sol: dict[str, Fraction] = {}
    for v in variables:
        if v not in pivots:
            sol[v] = targets.get(v, Fraction(0))
    for v, (prow, pconst) in pivots.items():
        val = -pconst
        for fv, c in prow.items():
            t = sol.get(fv)
            if t:
                val -= c * t
        sol[v] = val
    return sol


def _reduce(
    eqs: list[tuple[dict[str, Fraction], Fraction]]
) -> Optional[tuple[dict[str, tuple[dict[str, Fraction], Fraction]], list[str]]]:
    """Gauss-Jordan reduction of sparse equality rows.

    Returns (pivots, variables) where pivots maps each pivot variable to its
    fully reduced row over free variables, or None when inconsistent.
    """
    rows = [({v: c for v, c in coeffs.items() if c != 0}, const) for coeffs, const in eqs]
    counts: dict[str, int] = {}
    variables: list[str] = []
    for coeffs, _ in rows:
        for v in coeffs:
            if v not in counts:
                variables.append(v)
                counts[v] = 0
            counts[v] += 1
    pivots: dict[str, tuple[dict[str, Fraction], Fraction]] = {}

    for coeffs, const in rows:
        coeffs = dict(coeffs)
        for v in list(coeffs):
            if v in pivots and coeffs.get(v):
                f = coeffs[v]
                prow, pconst = pivots[v]
                for v2, c2 in prow.items():
                    coeffs[v2] = coeffs.get(v2, Fraction(0)) - f * c2
                    if coeffs[v2] == 0:
                        del coeffs[v2]
                del coeffs[v]
                const -= f * pconst
        if not coeffs:
            if const != 0:
                return None
            continue
        # sparsity-aware pivot choice: prefer rarely occurring variables
        piv = min(coeffs, key=lambda v: (counts.get(v, 0), v))
        inv = 1 / coeffs[piv]
        prow = {v: c * inv for v, c in coeffs.items() if v != piv}
        pconst = const * inv
        for other, (orow, oconst) in list(pivots.items()):
            f = orow.get(piv)
            if f:
                del orow[piv]
                for v2, c2 in prow.items():
                    orow[v2] = orow.get(v2, Fraction(0)) - f * c2
                    if orow[v2] == 0:
                        del orow[v2]
                pivots[other] = (orow, oconst - f * pconst)
        pivots[piv] = (prow, pconst)
    return pivots, variables


def exact_linear_solve(
    eqs: list[tuple[dict[str, Fraction], Fraction]], var_order: list[str]
) -> Optional[tuple[dict[str, Fraction], list[dict[str, Fraction]]]]:
    """Solve sparse linear equalities coeffs.x + const = 0 exactly.

    Returns (particular solution, nullspace basis vectors) or None when
    inconsistent.
    """
    reduced = _reduce(eqs)
    if reduced is None:
        return None
    pivots, _ = reduced
    particular = {v: Fraction(0) for v in var_order}
    free_vars = [v for v in var_order if v not in pivots]
    for v, (_, pconst) in pivots.items():
        particular[v] = -pconst
    null_basis = []
    for fv in free_vars:
        vec = {fv: Fraction(1)}
        for v, (prow, _) in pivots.items():
            c = prow.get(fv)
            if c:
                vec[v] = -c
        null_basis.append(vec)
    return particular, null_basis
