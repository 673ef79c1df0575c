"""Bundled polynomial-constraint solver backend.

Runs as a subprocess (``python -m rgames.polysat FILE.smt2``) speaking the
same protocol as an external SMT solver: it reads an SMT-LIB 2 document over
``QF_NRA`` reals, prints ``sat`` followed by ``(define-fun ...)`` model
entries, or ``unknown``.  ``unsat`` is printed only when exact linear
programming proves infeasibility of a purely linear system; the nonlinear
search never claims unsatisfiability.

Solving strategy by detected structure:

* linear: exact rational LP (Phase-I simplex over Fractions);
* bilinear (the unknown-product graph is bipartite, as in Farkas
  translations of linear systems): float LP alternation between the two
  variable groups, then one group is rounded to rationals and the other
  re-solved with the exact LP, so the final model is exact;
* quadratic with recoverable square structure (sum-of-squares translations
  name their square coefficients ``w{block}_{mult}_{square}_{idx}``): squares
  are lifted to Gram matrices, solved by conic (PSD) elastic steps
  alternating with least-squares over the nonconvex variables, then made
  exact by rounding the template side, solving the remaining affine
  conditions over the rationals with projection toward the float Grams,
  checking positive semidefiniteness by exact LDL, and decomposing each Gram
  into rational squares (four-square decompositions of the pivots);
* anything else: damped least-squares with a rounding ladder (best effort).

All randomness is seeded; identical inputs produce identical outputs.
"""

from __future__ import annotations

import math
import os
import re
import sys
import time
from fractions import Fraction
from typing import Optional

import numpy as np

from .poly import Monomial, Polynomial
from .simplex import Row, exact_linear_solve, solve_feasibility, solve_with_preferred

BUDGET_ENV = "RGAMES_POLYSAT_BUDGET"


# ---------------------------------------------------------------------------
# SMT-LIB subset parsing
# ---------------------------------------------------------------------------


def _tokens(text: str):
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            i += 1
        elif ch == ";":
            while i < n and text[i] != "\n":
                i += 1
        elif ch in "()":
            yield ch
            i += 1
        else:
            j = i
            while j < n and text[j] not in " \t\r\n();":
                j += 1
            yield text[i:j]
            i = j


def parse_smt2(text: str) -> tuple[list[str], list[tuple[Polynomial, str]]]:
    stack: list[list] = [[]]
    for tok in _tokens(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    forms = stack[0]
    unknowns: list[str] = []
    constraints: list[tuple[Polynomial, str]] = []
    declared = set()

    def accumulate(node, sign: Fraction, acc: dict):
        """Add sign * node into acc, a map from sorted var tuples to Fractions.

        Flat sums of monomial products parse in one pass; anything else falls
        back to the slower general product expansion.
        """
        if isinstance(node, str):
            if node in declared:
                key = (node,)
                acc[key] = acc.get(key, Fraction(0)) + sign
            else:
                key = ()
                acc[key] = acc.get(key, Fraction(0)) + sign * Fraction(node)
            return
        head = node[0]
        args = node[1:]
        if head == "+":
            for a in args:
                accumulate(a, sign, acc)
            return
        if head == "-":
            if len(args) == 1:
                accumulate(args[0], -sign, acc)
                return
            accumulate(args[0], sign, acc)
            for a in args[1:]:
                accumulate(a, -sign, acc)
            return
        if head == "/":
            num, den = args
            dacc: dict = {}
            accumulate(den, Fraction(1), dacc)
            if list(dacc) != [()]:
                raise ValueError("nonconstant divisor")
            accumulate(num, sign / dacc[()], acc)
            return
        if head == "*":
            coeff = sign
            vs: list[str] = []
            simple = True
            for a in args:
                if isinstance(a, str):
                    if a in declared:
                        vs.append(a)
                    else:
                        coeff *= Fraction(a)
                elif a and a[0] == "-" and len(a) == 2 and isinstance(a[1], str):
                    coeff *= -Fraction(a[1]) if a[1] not in declared else Fraction(1)
                    if a[1] in declared:
                        vs.append(a[1])
                        coeff = -coeff
                elif a and a[0] == "/" :
                    sub: dict = {}
                    accumulate(a, Fraction(1), sub)
                    if list(sub) != [()]:
                        simple = False
                        break
                    coeff *= sub[()]
                else:
                    simple = False
                    break
            if simple:
                key = tuple(sorted(vs))
                acc[key] = acc.get(key, Fraction(0)) + coeff
                return
            # general product: expand pairwise
            prod: dict = {(): sign}
            for a in args:
                sub: dict = {}
                accumulate(a, Fraction(1), sub)
                nxt: dict = {}
                for k1, c1 in prod.items():
                    for k2, c2 in sub.items():
                        kk = tuple(sorted(k1 + k2))
                        nxt[kk] = nxt.get(kk, Fraction(0)) + c1 * c2
                prod = nxt
            for k, c in prod.items():
                acc[k] = acc.get(k, Fraction(0)) + c
            return
        if head == "^":
            base: dict = {}
            accumulate(args[0], Fraction(1), base)
            power = int(args[1])
            prod = {(): sign}
            for _ in range(power):
                nxt = {}
                for k1, c1 in prod.items():
                    for k2, c2 in base.items():
                        kk = tuple(sorted(k1 + k2))
                        nxt[kk] = nxt.get(kk, Fraction(0)) + c1 * c2
                prod = nxt
            for k, c in prod.items():
                acc[k] = acc.get(k, Fraction(0)) + c
            return
        raise ValueError(f"unsupported term {head}")

    def to_poly(acc: dict) -> Polynomial:
        terms = {}
        for key, c in acc.items():
            if c == 0:
                continue
            exps: dict[str, int] = {}
            for v in key:
                exps[v] = exps.get(v, 0) + 1
            terms[Monomial(exps)] = c
        return Polynomial(terms)

    for form in forms:
        if not isinstance(form, list) or not form:
            continue
        if form[0] == "declare-const" and form[2] == "Real":
            declared.add(form[1])
            unknowns.append(form[1])
        elif form[0] == "declare-fun" and len(form) >= 4 and form[2] == [] and form[3] == "Real":
            declared.add(form[1])
            unknowns.append(form[1])
        elif form[0] == "assert":
            body = form[1]
            op = body[0]
            if op not in (">=", "<=", ">", "<", "="):
                raise ValueError(f"unsupported assertion {op}")
            acc: dict = {}
            accumulate(body[1], Fraction(1), acc)
            accumulate(body[2], Fraction(-1), acc)
            lhs = to_poly(acc)
            if op in ("<=", "<"):
                lhs = -lhs
            constraints.append((lhs, ">=" if op != "=" else "="))
    return unknowns, constraints


# ---------------------------------------------------------------------------
# Structure analysis
# ---------------------------------------------------------------------------

W_RE = re.compile(r"^w(\d+)_(\d+)_(\d+)_(\d+)$")
U_RE = re.compile(r"^u(\d+)_(\d+)_(\d+)$")


def classify(unknowns, constraints):
    maxdeg = 0
    has_self_sq = False
    edges: set[tuple[str, str]] = set()
    w_ok = any(W_RE.match(v) for v in unknowns)
    for poly, _ in constraints:
        for m in poly.terms:
            exps = m.exponents
            maxdeg = max(maxdeg, m.degree())
            wvars = [v for v in exps if W_RE.match(v)]
            wdeg = sum(exps[v] for v in wvars)
            if w_ok:
                if wdeg not in (0, 2):
                    w_ok = False
                elif wdeg == 2:
                    groups = {W_RE.match(v).groups()[:3] for v in wvars}
                    if len(groups) != 1:
                        w_ok = False
            names = sorted(exps)
            for v in names:
                if exps[v] >= 2:
                    has_self_sq = True
            for i in range(len(names)):
                for j in range(i + 1, len(names)):
                    edges.add((names[i], names[j]))
    if maxdeg <= 1:
        return ("linear", None)
    if not has_self_sq and maxdeg <= 2:
        color: dict[str, int] = {}
        adj: dict[str, list[str]] = {}
        for a, b in edges:
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        ok = True
        for start in sorted(adj):
            if start in color:
                continue
            color[start] = 0
            queue = [start]
            while queue and ok:
                x = queue.pop()
                for y in adj[x]:
                    if y not in color:
                        color[y] = 1 - color[x]
                        queue.append(y)
                    elif color[y] == color[x]:
                        ok = False
                        break
        if ok:
            a_side = {v for v, c in color.items() if c == 0}
            b_side = {v for v, c in color.items() if c == 1}
            if len(a_side) > len(b_side):
                a_side, b_side = b_side, a_side
            return ("bilinear", (a_side, b_side))
    if w_ok:
        return ("gram", None)
    return ("generic", None)


def partial_eval(poly: Polynomial, fixed: dict[str, Fraction]) -> Polynomial:
    terms: dict[Monomial, Fraction] = {}
    for m, c in poly.terms.items():
        coef = c
        rest: dict[str, int] = {}
        for v, e in m.exponents.items():
            if v in fixed:
                coef *= fixed[v] ** e
            else:
                rest[v] = e
        if coef == 0:
            continue
        mono = Monomial(rest)
        terms[mono] = terms.get(mono, Fraction(0)) + coef
    return Polynomial(terms)


def to_rows(constraints, fixed: dict[str, Fraction]) -> Optional[list[Row]]:
    rows: list[Row] = []
    for poly, rel in constraints:
        p = partial_eval(poly, fixed)
        coeffs: dict[str, Fraction] = {}
        const = Fraction(0)
        for m, c in p.terms.items():
            if m.is_one():
                const += c
            elif m.degree() == 1:
                v = next(iter(m.exponents))
                coeffs[v] = coeffs.get(v, Fraction(0)) + c
            else:
                return None
        rows.append((coeffs, const, rel))
    return rows


def extract_nonneg(rows: list[Row]) -> tuple[list[Row], set[str]]:
    nonneg: set[str] = set()
    rest: list[Row] = []
    for coeffs, const, rel in rows:
        if rel == ">=" and const == 0 and len(coeffs) == 1:
            v, c = next(iter(coeffs.items()))
            if c > 0:
                nonneg.add(v)
                continue
        rest.append((coeffs, const, rel))
    return rest, nonneg


def verify(constraints, model: dict[str, Fraction]) -> bool:
    zero = Fraction(0)
    for poly, rel in constraints:
        val = poly.eval({v: model.get(v, zero) for v in poly.variables()})
        if rel == "=" and val != 0:
            return False
        if rel == ">=" and val < 0:
            return False
    return True


# ---------------------------------------------------------------------------
# Float helpers
# ---------------------------------------------------------------------------


class FloatSystem:
    """Vectorized float evaluation of a polynomial constraint system."""

    def __init__(self, unknowns: list[str], constraints, rows: Optional[list[int]] = None):
        self.index = {v: i for i, v in enumerate(unknowns)}
        self.nvars = len(unknowns)
        picked = range(len(constraints)) if rows is None else rows
        coefs: list[float] = []
        row_ids: list[int] = []
        var_cols: list[list[int]] = []
        self.is_eq: list[bool] = []
        maxdeg = 1
        for new_id, ci in enumerate(picked):
            poly, rel = constraints[ci]
            self.is_eq.append(rel == "=")
            for m, c in poly.terms.items():
                vs: list[int] = []
                for v, e in m.exponents.items():
                    vs.extend([self.index[v]] * e)
                maxdeg = max(maxdeg, len(vs))
                coefs.append(float(c))
                row_ids.append(new_id)
                var_cols.append(vs)
        pad = self.nvars  # sentinel column evaluating to 1
        self.vidx = np.full((len(coefs), maxdeg), pad, dtype=np.int64)
        for t, vs in enumerate(var_cols):
            for k, j in enumerate(vs):
                self.vidx[t, k] = j
        self.coefs = np.array(coefs)
        self.rows = np.array(row_ids, dtype=np.int64)
        self.nrows = len(self.is_eq)
        self.eq_mask = np.array(self.is_eq)

    def values(self, x: np.ndarray) -> np.ndarray:
        xx = np.append(x, 1.0)
        term_vals = self.coefs * np.prod(xx[self.vidx], axis=1)
        return np.bincount(self.rows, weights=term_vals, minlength=self.nrows)

    def residuals(self, x: np.ndarray) -> np.ndarray:
        vals = self.values(x)
        return np.where(self.eq_mask, vals, np.minimum(vals, 0.0))


ROUND_LADDER = (1, 2, 4, 8, 16, 32, 64, 128, 1024, 10**4)


def round_vec(vals: dict[str, float], den: int) -> dict[str, Fraction]:
    return {k: Fraction(v).limit_denominator(den) for k, v in vals.items()}


# ---------------------------------------------------------------------------
# Bilinear path
# ---------------------------------------------------------------------------


def _float_lp(constraints, fix_vals: dict[str, float], solve_vars: list[str]):
    from scipy.optimize import linprog

    idx = {v: i for i, v in enumerate(solve_vars)}
    known = fix_vals
    Aeq, beq, Aub, bub = [], [], [], []
    bound_lo: dict[str, Optional[float]] = {v: None for v in solve_vars}
    for poly, rel in constraints:
        row = np.zeros(len(solve_vars))
        const = 0.0
        for m, c in poly.terms.items():
            coef = float(c)
            free = []
            for v, e in m.exponents.items():
                for _ in range(e):
                    if v in known:
                        coef *= known[v]
                    else:
                        free.append(v)
            if not free:
                const += coef
            else:
                row[idx[free[0]]] += coef
        if rel == "=":
            Aeq.append(row)
            beq.append(-const)
        else:
            nz = np.nonzero(row)[0]
            if const == 0.0 and len(nz) == 1 and row[nz[0]] > 0:
                bound_lo[solve_vars[nz[0]]] = 0.0
            else:
                Aub.append(-row)
                bub.append(const)
    n = len(solve_vars)
    ne = len(Aeq)
    c = np.concatenate([np.zeros(n), np.ones(2 * ne)])
    A_eq = np.hstack([np.array(Aeq), np.eye(ne), -np.eye(ne)]) if ne else None
    b_eq = np.array(beq) if ne else None
    A_ub = np.hstack([np.array(Aub), np.zeros((len(Aub), 2 * ne))]) if Aub else None
    b_ub = np.array(bub) if Aub else None
    bounds = [(bound_lo[v], None) for v in solve_vars] + [(0, None)] * (2 * ne)
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if not res.success:
        return None, math.inf
    return {v: float(res.x[idx[v]]) for v in solve_vars}, float(res.fun)


def solve_bilinear(unknowns, constraints, a_side, b_side, deadline) -> Optional[dict[str, Fraction]]:
    isolated = [v for v in unknowns if v not in a_side and v not in b_side]
    b_vars = sorted(b_side | set(isolated))
    a_vars = sorted(a_side)
    if not a_vars or not b_vars:
        return None
    attempts = []
    rng = np.random.default_rng(0)
    for trial in range(24):
        if time.monotonic() > deadline:
            break
        a0 = {v: float(rng.uniform(-4, 4)) for v in a_vars}
        best = None
        prev_inf = math.inf
        for _ in range(30):
            bv, inf_b = _float_lp(constraints, a0, b_vars)
            if bv is None:
                break
            av, inf_a = _float_lp(constraints, bv, a_vars)
            if av is None:
                break
            a0 = av
            best = (inf_a, dict(av))
            if inf_a < 1e-9 and inf_b < 1e-9:
                break
            if abs(prev_inf - inf_a) < 1e-12:
                break  # stalled
            prev_inf = inf_a
        if best is None:
            continue
        attempts.append(best)
        if best[0] < 1e-9:
            model = _bilinear_exact(constraints, best[1], b_vars)
            if model is not None:
                return model
    attempts.sort(key=lambda t: t[0])
    for inf_a, av in attempts[:3]:
        if inf_a < 1e-6:
            model = _bilinear_exact(constraints, av, b_vars)
            if model is not None:
                return model
    return None


def _bilinear_exact(constraints, a_float: dict[str, float], b_vars) -> Optional[dict[str, Fraction]]:
    for den in ROUND_LADDER:
        a_rat = round_vec(a_float, den)
        rows = to_rows(constraints, a_rat)
        if rows is None:
            return None
        rows, nonneg = extract_nonneg(rows)
        sol = solve_feasibility(rows, nonneg)
        if sol is not None:
            model = dict(a_rat)
            model.update(sol)
            return model
    return None


# ---------------------------------------------------------------------------
# Gram path: lifted quadratic systems from sum-of-squares translations
# ---------------------------------------------------------------------------


class GramProblem:
    def __init__(self, unknowns, constraints):
        self.unknowns = unknowns
        self.constraints = constraints
        self.groups: dict[tuple[str, str], tuple[int, int]] = {}
        self.wvars: dict[str, tuple[str, str, int, int]] = {}
        template: list[str] = []
        for v in unknowns:
            m = W_RE.match(v)
            if m:
                b, i, j, a = m.groups()
                key = (b, i)
                dim, sq = self.groups.get(key, (0, 0))
                self.groups[key] = (max(dim, int(a) + 1), max(sq, int(j) + 1))
                self.wvars[v] = (b, i, int(j), int(a))
            else:
                template.append(v)
        self.free_linear = {v for v in template if U_RE.match(v)}
        tset = set(template)
        # Inner variables are varied by least squares and held fixed during
        # conic steps; everything with a square or a template-template product
        # partner must go inner so the conic step stays affine.
        inner: set[str] = set()
        changed = True
        while changed:
            changed = False
            for poly, _ in constraints:
                for m in poly.terms:
                    tvars: dict[str, int] = {}
                    for v, e in m.exponents.items():
                        if v in tset:
                            tvars[v] = e
                    for v, e in tvars.items():
                        if e >= 2 and v not in inner:
                            inner.add(v)
                            changed = True
                    outs = [v for v in tvars if v not in inner]
                    if len(outs) >= 2:
                        for v in sorted(outs)[1:]:
                            inner.add(v)
                            changed = True
        self.inner = sorted(inner - self.free_linear)
        self.outer = sorted((tset - inner) - self.free_linear)
        self.template = template

    def lift_key(self, m: Monomial):
        """Monomial split into ((group, a, b, square_j) | None, rest monomial).

        Since sum-of-squares expansions give every square index j the same
        coefficient, the Gram entry Q[a,b] = sum_j w_ja*w_jb stands in for the
        whole j-family; callers must only process the j == 0 representative.
        """
        ws = [(v, e) for v, e in m.exponents.items() if v in self.wvars]
        if not ws:
            return None, m
        rest = {v: e for v, e in m.exponents.items() if v not in self.wvars}
        if len(ws) == 1 and ws[0][1] == 2:
            b, i, j, a = self.wvars[ws[0][0]]
            return ((b, i), a, a, j), Monomial(rest)
        if len(ws) == 2 and ws[0][1] == 1 and ws[1][1] == 1:
            b1, i1, j1, a1 = self.wvars[ws[0][0]]
            b2, i2, j2, a2 = self.wvars[ws[1][0]]
            if j1 != j2:
                raise ValueError("cross-square product")
            lo, hi = min(a1, a2), max(a1, a2)
            return ((b1, i1), lo, hi, j1), Monomial(rest)
        raise ValueError("unrecognized square structure")


def _tri_index(dim: int):
    """Column-stacked upper-triangle (svec) index pairs for Clarabel."""
    pairs = []
    for col in range(dim):
        for row in range(col + 1):
            pairs.append((row, col))
    return pairs


def _gram_conic_step(
    gp: GramProblem,
    inner_vals: dict[str, float],
    prev_grams: dict,
    prev_outer: Optional[dict[str, float]] = None,
    trust: float = 0.0,
):
    """One elastic conic solve: outer linear vars + PSD Gram matrices.

    Monomials pairing a Gram entry with an outer variable are linearized by
    freezing the Gram entry at its previous value.  With ``trust > 0`` the
    inner variables get first-order delta columns bounded by the trust
    radius, turning the step into a joint sequential-conic move.  Returns
    (outer values, elastic objective, grams, inner deltas).
    """
    import clarabel
    from scipy import sparse

    prev_outer = prev_outer or {}
    lin_vars = gp.outer + sorted(gp.free_linear)
    lin_index = {v: i for i, v in enumerate(lin_vars)}
    n_lin = len(lin_vars)
    inner_list = gp.inner if trust > 0 else []
    d_index = {v: n_lin + i for i, v in enumerate(inner_list)}
    n_free = n_lin + len(inner_list)
    gkeys = sorted(gp.groups)
    q_offset: dict[tuple[str, str], int] = {}
    pos = n_free
    tri: dict[tuple[str, str], list[tuple[int, int]]] = {}
    for key in gkeys:
        dim, _ = gp.groups[key]
        tri[key] = _tri_index(dim)
        q_offset[key] = pos
        pos += len(tri[key])
    n_base = pos

    def q_col(key, a, b):
        lo, hi = min(a, b), max(a, b)
        return q_offset[key] + tri[key].index((lo, hi))

    def x_part_value(gkey, lin_var):
        if gkey is not None:
            key, a, b, _ = gkey
            G = prev_grams.get(key)
            return 0.0 if G is None else float(G[a, b])
        if lin_var is not None:
            return prev_outer.get(lin_var, 0.0)
        return 1.0

    rows_eq: list[tuple[dict[int, float], float]] = []
    rows_ge: list[tuple[dict[int, float], float]] = []
    for poly, rel in gp.constraints:
        cols: dict[int, float] = {}
        const = 0.0
        ok = True
        for m, c in poly.terms.items():
            try:
                gkey, rest = gp.lift_key(m)
            except ValueError:
                ok = False
                break
            if gkey is not None and gkey[3] != 0:
                continue  # the j = 0 term represents the whole Gram family
            factor = float(c)
            lin: Optional[str] = None
            inner_mono: dict[str, int] = {}
            for v, e in rest.exponents.items():
                if v in inner_vals:
                    inner_mono[v] = e
                elif v in lin_index:
                    if e != 1 or lin is not None:
                        ok = False
                        break
                    lin = v
                else:
                    ok = False
                    break
            if not ok:
                break
            inner_factor = 1.0
            for v, e in inner_mono.items():
                inner_factor *= inner_vals[v] ** e
            base = factor * inner_factor
            # first-order delta columns for the inner variables
            if trust > 0 and inner_mono:
                xval = x_part_value(gkey, lin)
                for v, e in inner_mono.items():
                    rest_factor = factor
                    for v2, e2 in inner_mono.items():
                        rest_factor *= inner_vals[v2] ** (e2 - (1 if v2 == v else 0))
                    deriv = e * rest_factor * xval
                    if deriv != 0.0:
                        col = d_index[v]
                        cols[col] = cols.get(col, 0.0) + deriv
            if gkey is None:
                if lin is None:
                    const += base
                else:
                    li = lin_index[lin]
                    cols[li] = cols.get(li, 0.0) + base
            else:
                key, a, b, _ = gkey
                if lin is None:
                    col = q_col(key, a, b)
                    cols[col] = cols.get(col, 0.0) + base
                else:
                    G = prev_grams.get(key)
                    prev = 0.0 if G is None else float(G[a, b])
                    li = lin_index[lin]
                    cols[li] = cols.get(li, 0.0) + base * prev
        if not ok:
            return None, math.inf, None, None
        if rel == "=":
            rows_eq.append((cols, const))
        else:
            rows_ge.append((cols, const))

    n_e = len(rows_eq)
    nvar = n_base + 2 * n_e
    trip_r, trip_c, trip_v, b_vec, cones = [], [], [], [], []
    r = 0
    # zero cone: equality rows with elastic split  expr + e+ - e- = 0
    for k, (cols, const) in enumerate(rows_eq):
        for cidx, cv in cols.items():
            trip_r.append(r)
            trip_c.append(cidx)
            trip_v.append(cv)
        trip_r.append(r)
        trip_c.append(n_base + 2 * k)
        trip_v.append(1.0)
        trip_r.append(r)
        trip_c.append(n_base + 2 * k + 1)
        trip_v.append(-1.0)
        b_vec.append(-const)
        r += 1
    if n_e:
        cones.append(clarabel.ZeroConeT(n_e))
    # nonnegative cone: inequality rows, elastics, trust region
    nn = 0
    for cols, const in rows_ge:
        for cidx, cv in cols.items():
            trip_r.append(r)
            trip_c.append(cidx)
            trip_v.append(-cv)
        b_vec.append(const)
        r += 1
        nn += 1
    for k in range(2 * n_e):
        trip_r.append(r)
        trip_c.append(n_base + k)
        trip_v.append(-1.0)
        b_vec.append(0.0)
        r += 1
        nn += 1
    for v in inner_list:
        col = d_index[v]
        trip_r.append(r)
        trip_c.append(col)
        trip_v.append(1.0)
        b_vec.append(trust)
        r += 1
        nn += 1
        trip_r.append(r)
        trip_c.append(col)
        trip_v.append(-1.0)
        b_vec.append(trust)
        r += 1
        nn += 1
    if nn:
        cones.append(clarabel.NonnegativeConeT(nn))
    # PSD cones: s = svec(Q), scaled off-diagonals
    rt2 = math.sqrt(2.0)
    for key in gkeys:
        dim, _ = gp.groups[key]
        for t_i, (a, b) in enumerate(tri[key]):
            scale = 1.0 if a == b else rt2
            trip_r.append(r)
            trip_c.append(q_offset[key] + t_i)
            trip_v.append(-scale)
            b_vec.append(0.0)
            r += 1
        cones.append(clarabel.PSDTriangleConeT(dim))

    A = sparse.csc_matrix((trip_v, (trip_r, trip_c)), shape=(r, nvar))
    b = np.array(b_vec)
    q = np.zeros(nvar)
    q[n_base:] = 1.0
    P = sparse.csc_matrix((nvar, nvar))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    sol = solver.solve()
    status = str(sol.status)
    if "Solved" not in status and "AlmostSolved" not in status:
        return None, math.inf, None, None
    x = np.array(sol.x)
    outer_vals = {v: float(x[lin_index[v]]) for v in lin_vars}
    grams = {}
    for key in gkeys:
        dim, _ = gp.groups[key]
        G = np.zeros((dim, dim))
        for t_i, (a, b2) in enumerate(tri[key]):
            G[a, b2] = G[b2, a] = x[q_offset[key] + t_i]
        grams[key] = G
    deltas = {v: float(x[d_index[v]]) for v in inner_list}
    elastic = float(np.sum(x[n_base:]))
    return outer_vals, elastic, grams, deltas


def _w_values_from_grams(gp: GramProblem, grams: dict) -> dict[str, float]:
    vals: dict[str, float] = {}
    for key, (dim, squares) in gp.groups.items():
        G = grams.get(key)
        if G is None:
            G = np.zeros((dim, dim))
        G = 0.5 * (G + G.T)
        eigval, eigvec = np.linalg.eigh(G)
        rows = []
        for k in range(dim - 1, -1, -1):
            if eigval[k] > 1e-12:
                rows.append(np.sqrt(eigval[k]) * eigvec[:, k])
        for j in range(squares):
            vec = rows[j] if j < len(rows) else np.zeros(dim)
            for a in range(dim):
                vals[f"w{key[0]}_{key[1]}_{j}_{a}"] = float(vec[a])
    return vals


_T_RE = re.compile(r"^t(\d+)_(.+)_m(\d+)$")


def _strategy_seeds(gp) -> list[dict[str, float]]:
    """Structured starting points for the nonconvex (strategy-like) side.

    The ``t{label}_{var}_m{idx}`` naming convention of strategy templates
    lets the solver guess natural affine moves without game knowledge:
    the identity map, identity plus a uniform or single-target constant
    move, and pairwise balancing moves ``x_i' = x_j' = (x_i + x_j + c)/2``.
    These are only heuristic seeds; each is validated by the conic step.
    """
    groups: dict[str, dict[str, dict[int, str]]] = {}
    for v in gp.inner:
        m = _T_RE.match(v)
        if m:
            li, var, idx = m.group(1), m.group(2), int(m.group(3))
            groups.setdefault(li, {}).setdefault(var, {})[idx] = v
    zeros = dict.fromkeys(gp.inner, 0.0)
    seeds = [zeros]
    if not groups:
        return seeds

    ident = dict(zeros)
    for outs in groups.values():
        names = sorted(outs)
        for k, var in enumerate(names):
            own = outs[var].get(k + 1)
            if own:
                ident[own] = 1.0
    seeds.append(ident)

    uniform = dict(ident)
    for outs in groups.values():
        names = sorted(outs)
        for var in names:
            const = outs[var].get(0)
            if const:
                uniform[const] = 1.0 / len(names)
    seeds.append(uniform)

    for outs in groups.values():
        names = sorted(outs)
        for var in names:
            s = dict(ident)
            const = outs[var].get(0)
            if const:
                s[const] = 1.0
            seeds.append(s)
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                s = dict(ident)
                for var, own in ((names[i], i + 1), (names[j], j + 1)):
                    d = outs[var]
                    if 0 in d:
                        s[d[0]] = 0.5
                    if own in d:
                        s[d[own]] = 0.5
                    other = j + 1 if own == i + 1 else i + 1
                    if other in d:
                        s[d[other]] = 0.5
                seeds.append(s)
    return seeds


def solve_gram(unknowns, constraints, deadline, max_random=8) -> Optional[dict[str, Fraction]]:
    gp = GramProblem(unknowns, constraints)
    rng = np.random.default_rng(7)
    inner_list = gp.inner

    def refine(inner_vals, outer_vals, elastic, grams):
        """Trust-region sequential conic refinement from a nonzero stall."""
        best = (elastic, dict(inner_vals), outer_vals, grams)
        trust = 0.5
        for _ in range(20):
            if time.monotonic() > deadline or elastic < 1e-7 or not inner_list:
                break
            if trust < 1e-4:
                break
            _, _, _, deltas = _gram_conic_step(gp, inner_vals, grams, outer_vals, trust)
            if deltas is None:
                break
            cand = {v: inner_vals[v] + deltas.get(v, 0.0) for v in inner_vals}
            o2, e2, g2, _ = _gram_conic_step(gp, cand, grams, outer_vals)
            if o2 is not None and e2 < elastic - 1e-12:
                inner_vals, outer_vals, elastic, grams = cand, o2, e2, g2
                trust = min(trust * 1.6, 2.0)
                if elastic < best[0]:
                    best = (elastic, dict(inner_vals), outer_vals, grams)
            else:
                trust *= 0.35
        return best

    # structured seeds first: one conic evaluation each
    evaluated = []
    for seed in _strategy_seeds(gp):
        if time.monotonic() > deadline:
            break
        outer_vals, elastic, grams, _ = _gram_conic_step(gp, seed, {})
        if outer_vals is None:
            continue
        evaluated.append((elastic, seed, outer_vals, grams))
        if elastic < 1e-7:
            model = _gram_exact(gp, constraints, seed, outer_vals, grams)
            if model is not None:
                return model
    evaluated.sort(key=lambda t: t[0])
    # refine the most promising stalls, then random restarts
    for elastic, seed, outer_vals, grams in evaluated[:3]:
        if time.monotonic() > deadline:
            break
        best = refine(dict(seed), outer_vals, elastic, grams)
        if best[0] < 1e-6:
            model = _gram_exact(gp, constraints, best[1], best[2], best[3])
            if model is not None:
                return model
    for _ in range(max_random):
        if time.monotonic() > deadline:
            break
        seed = {v: float(rng.normal(0.0, 0.8)) for v in inner_list}
        outer_vals, elastic, grams, _ = _gram_conic_step(gp, seed, {})
        if outer_vals is None:
            continue
        best = refine(seed, outer_vals, elastic, grams)
        if best[0] < 1e-6:
            model = _gram_exact(gp, constraints, best[1], best[2], best[3])
            if model is not None:
                return model
    return None


def _coupled_groups(gp) -> set[tuple[str, str]]:
    """Gram groups whose entries multiply an outer template variable.

    Those products are bilinear; the exact phase pins the whole group to the
    zero matrix so the remaining conditions are affine.
    """
    outer = set(gp.outer)
    coupled: set[tuple[str, str]] = set()
    for poly, _ in gp.constraints:
        for m in poly.terms:
            try:
                gkey, rest = gp.lift_key(m)
            except ValueError:
                continue
            if gkey is None:
                continue
            if any(v in outer for v in rest.exponents):
                coupled.add(gkey[0])  # (group key) of the 4-tuple
    return coupled


def _null_rows(gp, grams, pinned, rank_tol: float, vec_den: int):
    """Equalities forcing each exact Gram to annihilate the (rounded) float
    null directions, so rank-deficient solutions stay on their PSD face."""
    rows = []
    for key in sorted(gp.groups):
        if key in pinned:
            continue
        G = grams.get(key)
        if G is None:
            continue
        dim = G.shape[0]
        w, V = np.linalg.eigh(0.5 * (G + G.T))
        for k in range(dim):
            if w[k] >= rank_tol:
                continue
            v = V[:, k]
            peak = np.abs(v).max()
            if peak == 0:
                continue
            vr = [Fraction(float(x / peak)).limit_denominator(vec_den) for x in v]
            if all(x == 0 for x in vr):
                continue
            for a in range(dim):
                coeffs: dict[str, Fraction] = {}
                for b in range(dim):
                    if vr[b] == 0:
                        continue
                    lo, hi = min(a, b), max(a, b)
                    name = f"__Q_{key[0]}_{key[1]}_{lo}_{hi}"
                    coeffs[name] = coeffs.get(name, Fraction(0)) + vr[b]
                if coeffs:
                    rows.append((coeffs, Fraction(0)))
    return rows


def _gram_exact(gp, constraints, inner_f, outer_f, grams) -> Optional[dict[str, Fraction]]:
    """Exact model from a float-feasible point.

    The nonconvex (inner) variables are rounded through a denominator ladder;
    the certificate-side variables, Gram entries and free multipliers are then
    solved jointly as an exact affine system with free coordinates pinned to
    their float values.  Near-zero Grams are pinned to the zero matrix and
    rank-deficient ones are constrained to their float nullspaces, after
    which every Gram passes an exact PSD check and is decomposed into
    rational squares.
    """
    coupled = _coupled_groups(gp)
    for den in (16, 64, 1024, 10**4, 10**6):
        tmpl = {v: Fraction(x).limit_denominator(den) for v, x in inner_f.items()}
        for zero_thresh, rank_tol, vec_den in (
            (1e-3, 1e-4, 32),
            (1e-3, 1e-4, 1024),
            (1e-5, 1e-6, 1024),
            (1e-3, 0.0, 1),  # no nullspace constraints at all
        ):
            pinned = set(coupled)
            for key, G in grams.items():
                if key not in pinned and float(np.abs(G).max()) < zero_thresh:
                    pinned.add(key)
            lifted = _lift_constraints(gp, constraints, tmpl, pinned)
            if lifted is None:
                break  # retry with a finer template rounding
            extra = _null_rows(gp, grams, pinned, rank_tol, vec_den) if rank_tol > 0 else []
            sol = _solve_lifted(gp, lifted, extra, outer_f, grams, pinned)
            if sol is None:
                continue
            model = dict(tmpl)
            model.update(sol)
            if verify(constraints, model):
                return model
    return None


def _lift_constraints(gp, constraints, tmpl: dict[str, Fraction], coupled):
    """Rows affine in (Gram entries, outer template vars, free multipliers)
    after substituting the rounded inner variables; coupled groups drop out
    as identically zero."""
    rows = []
    for poly, rel in constraints:
        coeffs: dict[str, Fraction] = {}
        const = Fraction(0)
        for m, c in poly.terms.items():
            try:
                gkey, rest = gp.lift_key(m)
            except ValueError:
                return None
            if gkey is not None:
                if gkey[0] in coupled:
                    continue  # pinned to zero
                if gkey[3] != 0:
                    continue  # the j = 0 term represents the whole Gram family
            factor = c
            extra = None
            bad = False
            for v, e in rest.exponents.items():
                if v in tmpl:
                    factor *= tmpl[v] ** e
                elif e == 1 and extra is None:
                    extra = v
                else:
                    bad = True
                    break
            if bad:
                return None
            if factor == 0:
                continue
            if gkey is None:
                if extra is None:
                    const += factor
                else:
                    coeffs[extra] = coeffs.get(extra, Fraction(0)) + factor
            else:
                if extra is not None:
                    return None
                key, a, b, _ = gkey
                name = f"__Q_{key[0]}_{key[1]}_{a}_{b}"
                coeffs[name] = coeffs.get(name, Fraction(0)) + factor
        rows.append((coeffs, const, rel))
    return rows


def _solve_lifted(gp, rows, extra_rows, outer_f, grams_float, pinned):
    eq_rows = [(c, k) for c, k, rel in rows if rel == "="] + extra_rows
    targets: dict[str, Fraction] = {}
    for coeffs, _ in eq_rows:
        for v in coeffs:
            if v in targets:
                continue
            if v.startswith("__Q_"):
                b, i, a, a2 = v[4:].split("_")
                G = grams_float.get((b, i))
                val = 0.0 if G is None else float(G[int(a), int(a2)])
                targets[v] = Fraction(val).limit_denominator(10**6)
            else:
                targets[v] = Fraction(outer_f.get(v, 0.0)).limit_denominator(10**6)
    sol = solve_with_preferred(eq_rows, targets)
    if sol is None:
        return None
    out: dict[str, Fraction] = {}
    zero = Fraction(0)
    for key in sorted(gp.groups):
        dim, squares = gp.groups[key]
        G = [[zero] * dim for _ in range(dim)]
        if key not in pinned:
            for a in range(dim):
                for b in range(a, dim):
                    v = sol.get(f"__Q_{key[0]}_{key[1]}_{a}_{b}", zero)
                    G[a][b] = v
                    G[b][a] = v
        sq = psd_square_decomposition(G)
        if sq is None or len(sq) > squares:
            return None
        for j in range(squares):
            coeffs = sq[j] if j < len(sq) else [zero] * dim
            for a in range(dim):
                out[f"w{key[0]}_{key[1]}_{j}_{a}"] = coeffs[a]
    for v, val in sol.items():
        if not v.startswith("__Q_"):
            out[v] = val
    return out


# ---------------------------------------------------------------------------
# Exact PSD check and rational square decomposition
# ---------------------------------------------------------------------------


def psd_square_decomposition(G: list[list[Fraction]]) -> Optional[list[list[Fraction]]]:
    """m^T G m = sum_j (row_j . m)^2 with rational rows, or None if not PSD."""
    n = len(G)
    A = [row[:] for row in G]
    perm = list(range(n))
    pivots: list[tuple[Fraction, list[Fraction]]] = []
    for step in range(n):
        best, bi = Fraction(-1), -1
        for i in range(step, n):
            if A[i][i] > best:
                best, bi = A[i][i], i
        if best < 0:
            return None
        if best == 0:
            for i in range(step, n):
                for j in range(step, n):
                    if A[i][j] != 0:
                        return None
            break
        if bi != step:
            A[step], A[bi] = A[bi], A[step]
            for row in A:
                row[step], row[bi] = row[bi], row[step]
            perm[step], perm[bi] = perm[bi], perm[step]
        d = A[step][step]
        vec = [Fraction(0)] * n
        for j in range(n):
            vec[perm[j]] = A[step][j] / d
        pivots.append((d, vec))
        for i in range(step + 1, n):
            f = A[i][step] / d
            if f == 0:
                continue
            for j in range(step, n):
                A[i][j] -= f * A[step][j]
    rows: list[list[Fraction]] = []
    for d, vec in pivots:
        for s in rational_square_weights(d):
            rows.append([s * x for x in vec])
    return rows


def rational_square_weights(d: Fraction) -> list[Fraction]:
    """Rationals s_i with d = sum s_i^2 (at most four of them)."""
    num, den = d.numerator, d.denominator
    squares = four_squares(num * den)
    return [Fraction(s, den) for s in squares if s != 0]


def _is_square(n: int) -> Optional[int]:
    if n < 0:
        return None
    r = math.isqrt(n)
    return r if r * r == n else None


def _is_probable_prime(n: int) -> bool:
    if n < 2:
        return False
    for p in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37):
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _two_squares_prime(p: int) -> tuple[int, int]:
    """p = a^2 + b^2 for prime p with p % 4 == 1 (Hermite-Serret descent)."""
    if p == 2:
        return (1, 1)
    x = None
    for a in range(2, 1000):
        c = pow(a, (p - 1) // 4, p)
        if c * c % p == p - 1:
            x = c
            break
    if x is None:
        raise ValueError("no sqrt(-1) mod p found")
    a, b = p, x
    limit = math.isqrt(p)
    while b > limit:
        a, b = b, a % b
    y = _is_square(p - b * b)
    if y is None:
        raise ValueError("descent failed")
    return (b, y)


def four_squares(n: int) -> list[int]:
    """n = sum of at most four integer squares (deterministic search order)."""
    if n < 0:
        raise ValueError("negative")
    if n == 0:
        return []
    shift = 0
    while n % 4 == 0:
        n //= 4
        shift += 1
    mult = 1 << shift
    out = _four_squares_core(n)
    assert sum(x * x for x in out) == n, (n, out)
    return [x * mult for x in out if x != 0]


def _four_squares_core(n: int) -> list[int]:
    r = _is_square(n)
    if r is not None:
        return [r]
    if n <= 2000:
        return _brute_squares(n)
    extra: list[int] = []
    if n % 8 == 7:
        extra = [1]
        n -= 1
    root = math.isqrt(n)
    for w in range(root, max(0, root - 8000), -1):
        rem = n - w * w
        if rem <= 0:
            continue
        s = _is_square(rem)
        if s is not None:
            return extra + [w, s]
        if rem % 4 == 1 and _is_probable_prime(rem):
            a, b = _two_squares_prime(rem)
            return extra + [w, a, b]
        if rem % 2 == 0 and (rem // 2) % 4 == 1 and _is_probable_prime(rem // 2):
            a, b = _two_squares_prime(rem // 2)
            return extra + [w, a + b, abs(a - b)]
    return extra + _brute_squares(n)


def _brute_squares(n: int) -> list[int]:
    if n == 0:
        return []
    a = math.isqrt(n)
    for w in range(a, -1, -1):
        r1 = n - w * w
        s1 = _is_square(r1)
        if s1 is not None:
            return [w, s1] if w else [s1]
        b = math.isqrt(r1)
        for x in range(b, 0, -1):
            r2 = r1 - x * x
            s2 = _is_square(r2)
            if s2 is not None:
                return [w, x, s2]
            c = math.isqrt(r2)
            for y in range(c, 0, -1):
                s3 = _is_square(r2 - y * y)
                if s3 is not None:
                    return [w, x, y, s3]
    raise ValueError(f"no four-square decomposition found for {n}")


# ---------------------------------------------------------------------------
# Generic fallback
# ---------------------------------------------------------------------------


def solve_generic(unknowns, constraints, deadline) -> Optional[dict[str, Fraction]]:
    from scipy.optimize import least_squares

    fs = FloatSystem(unknowns, constraints)
    rng = np.random.default_rng(3)
    for _ in range(12):
        if time.monotonic() > deadline:
            break
        x0 = rng.uniform(-3, 3, len(unknowns))
        try:
            sol = least_squares(fs.residuals, x0, max_nfev=2000)
        except Exception:
            continue
        if np.abs(fs.residuals(sol.x)).max() > 1e-9:
            continue
        vals = {v: float(sol.x[fs.index[v]]) for v in unknowns}
        for den in ROUND_LADDER:
            model = round_vec(vals, den)
            if verify(constraints, model):
                return model
    return None


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def solve_file(path: str, budget: float) -> tuple[str, Optional[dict[str, Fraction]]]:
    with open(path) as fh:
        text = fh.read()
    unknowns, constraints = parse_smt2(text)
    deadline = time.monotonic() + budget
    kind, extra = classify(unknowns, constraints)
    if kind == "linear":
        rows = to_rows(constraints, {})
        rows, nonneg = extract_nonneg(rows)
        sol = solve_feasibility(rows, nonneg)
        if sol is None:
            return "unsat", None
        return "sat", {v: sol.get(v, Fraction(0)) for v in unknowns}
    if kind == "bilinear":
        a_side, b_side = extra
        model = solve_bilinear(unknowns, constraints, a_side, b_side, deadline)
        return ("sat", model) if model is not None else ("unknown", None)
    if kind == "gram":
        model = solve_gram(unknowns, constraints, deadline)
        return ("sat", model) if model is not None else ("unknown", None)
    model = solve_generic(unknowns, constraints, deadline)
    return ("sat", model) if model is not None else ("unknown", None)


def format_model(model: dict[str, Fraction]) -> str:
    lines = ["("]
    for name in sorted(model):
        val = model[name]
        if val.denominator == 1:
            body = str(val.numerator) if val >= 0 else f"(- {-val.numerator})"
        else:
            inner = f"(/ {abs(val.numerator)} {val.denominator})"
            body = inner if val >= 0 else f"(- {inner})"
        lines.append(f"  (define-fun {name} () Real {body})")
    lines.append(")")
    return "\n".join(lines)


def main(argv: list[str]) -> int:
    if not argv:
        print("usage: polysat FILE.smt2", file=sys.stderr)
        return 2
    budget = float(os.environ.get(BUDGET_ENV, "600"))
    try:
        status, model = solve_file(argv[0], budget)
    except Exception as e:
        print(f'(error "{type(e).__name__}: {e}")', file=sys.stderr)
        print("unknown")
        return 0
    print(status)
    if status == "sat" and model is not None:
        print(format_model(model))
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))


def console_main() -> int:
    return main(sys.argv[1:])
