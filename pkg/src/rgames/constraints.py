"""Template construction and collection of the certificate-defining constraints.

Step 1 fixes polynomial templates of bounded degree: one ranking template per
label (unknowns ``s...``) and one strategy template per (REACH label,
variable) pair (unknowns ``t...``).  Step 2 collects, per transition, a
universally quantified polynomial implication stating that the templates form
a valid ranking certificate and an induced winning strategy:

* C1 -- the ranking value at the initial state is non-negative;
* C2 -- SAFE transitions decrease the ranking by at least 1 toward a
  non-negative value, for every successor;
* C3 -- REACH transitions decrease it for the successor chosen by the
  strategy templates, which must also satisfy the update relation and stay in
  the domain.

``implication_split`` then turns each implication group into plain
conjunction-implies-conjunction implications (DNF on the left, one disjunct
choice per transition on the right), applying the documented strictness
policy so that downstream Positivstellensatz translation only sees ``>=``
and ``=`` atoms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Optional

from .game import (
    REACH,
    SAFE,
    Atom,
    GameSpec,
    PAnd,
    PAtom,
    PFalse,
    POr,
    PTrue,
    Pred,
    Transition,
    GameError,
    is_primed,
    pand,
    por,
    primed,
    to_dnf,
    unprime,
)
from .poly import (
    Monomial,
    Polynomial,
    TemplatePolynomial,
    count_monomials,
    monomials_up_to,
)


class ConstraintError(GameError):
    pass


DELTA_STRICT_DEFAULT = Fraction(1, 10**6)


# ---------------------------------------------------------------------------
# Template atoms: the same predicate trees, with template-valued polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TAtom:
    """``tpoly rel 0`` with template-polynomial left-hand side."""

    tpoly: TemplatePolynomial
    rel: str

    def negate(self) -> Pred:
        if self.rel == ">=":
            return PAtom(TAtom(-self.tpoly, ">"))
        if self.rel == ">":
            return PAtom(TAtom(-self.tpoly, ">="))
        return POr((PAtom(TAtom(self.tpoly, ">")), PAtom(TAtom(-self.tpoly, ">"))))

    def variables(self) -> set[str]:
        return self.tpoly.game_variables()

    def unknowns(self) -> set[str]:
        return self.tpoly.unknowns()

    def game_degree(self) -> int:
        return self.tpoly.game_degree()

    def subst(self, mapping: Mapping[str, TemplatePolynomial]) -> "TAtom":
        full = dict(mapping)
        for v in self.tpoly.game_variables():
            full.setdefault(v, TemplatePolynomial.variable(v))
        return TAtom(self.tpoly.subst_game_vars(full), self.rel)

    def instantiate(self, assignment: Mapping[str, Fraction]) -> Atom:
        return Atom(self.tpoly.instantiate(assignment), self.rel)

    def is_ground(self) -> bool:
        return not self.tpoly.game_variables() and not self.tpoly.unknowns()

    def ground_truth(self) -> bool:
        v = self.tpoly.instantiate({}).eval({})
        if self.rel == ">=":
            return v >= 0
        if self.rel == ">":
            return v > 0
        return v == 0

    def normalized(self) -> "TAtom":
        # positive rescaling by the coefficient content; canonical for dedup
        c = Fraction(0)
        for p in self.tpoly.terms.values():
            pc = p.content()
            num = math.gcd(c.numerator, pc.numerator)
            den = math.lcm(max(c.denominator, 1), pc.denominator)
            c = Fraction(num, den)
        if c in (0, 1):
            return self
        return TAtom(self.tpoly * Fraction(1, 1) * (1 / c), self.rel)

    def render(self, var_order: list[str] | None = None) -> str:
        return f"{self.tpoly.render(var_order)} {self.rel} 0"


def lift(pred: Pred) -> Pred:
    """Concrete-atom predicate -> template-atom predicate."""
    return pred.map_atoms(
        lambda a: PAtom(TAtom(TemplatePolynomial.from_polynomial(a.lhs), a.rel))
    )


def lift_subst(pred: Pred, mapping: Mapping[str, TemplatePolynomial]) -> Pred:
    """Lift and substitute template polynomials for (possibly primed) variables."""

    def fn(a: Atom) -> Pred:
        tp = TemplatePolynomial.from_polynomial(a.lhs)
        full = dict(mapping)
        for v in tp.game_variables():
            full.setdefault(v, TemplatePolynomial.variable(v))
        return PAtom(TAtom(tp.subst_game_vars(full), a.rel))

    return pred.map_atoms(fn)


# ---------------------------------------------------------------------------
# Templates
# ---------------------------------------------------------------------------


@dataclass
class TemplateSet:
    degree: int
    strategy_degree: int
    monomials: list[Monomial]
    strategy_monomials: list[Monomial]
    f_templates: dict[str, TemplatePolynomial]
    strategy_templates: dict[tuple[str, str], TemplatePolynomial]
    f_unknowns: dict[str, list[str]]
    strategy_unknowns: dict[tuple[str, str], list[str]]

    def all_unknowns(self) -> list[str]:
        out: list[str] = []
        for names in self.f_unknowns.values():
            out.extend(names)
        for names in self.strategy_unknowns.values():
            out.extend(names)
        return out

    def strategy_map(self, label: str) -> dict[str, TemplatePolynomial]:
        return {
            v: self.strategy_templates[(label, v)]
            for (l, v) in self.strategy_templates
            if l == label
        }


def build_templates(
    g: GameSpec, degree: int, strategy_degree: Optional[int] = None
) -> TemplateSet:
    """Fix symbolic templates of maximal degree ``degree`` for every label.

    Unknown names encode (label index, variable, monomial index), which makes
    them injective and deterministic for a fixed game.
    """
    if degree < 1:
        raise ConstraintError("template degree must be at least 1")
    if not g.normalized:
        raise ConstraintError("templates require a normalized game")
    sdeg = strategy_degree if strategy_degree is not None else degree
    if sdeg < 1:
        raise ConstraintError("strategy template degree must be at least 1")
    var_order = g.var_list()
    monos = monomials_up_to(var_order, degree)
    smonos = monomials_up_to(var_order, sdeg)
    assert len(monos) == count_monomials(len(var_order), degree)

    f_templates: dict[str, TemplatePolynomial] = {}
    f_unknowns: dict[str, list[str]] = {}
    s_templates: dict[tuple[str, str], TemplatePolynomial] = {}
    s_unknowns: dict[tuple[str, str], list[str]] = {}
    for li, (label, owner) in enumerate(g.labels):
        names = [f"s{li}_m{i}" for i in range(len(monos))]
        f_templates[label] = TemplatePolynomial.from_template(monos, names)
        f_unknowns[label] = names
        if owner == REACH:
            for v in var_order:
                tnames = [f"t{li}_{v}_m{i}" for i in range(len(smonos))]
                s_templates[(label, v)] = TemplatePolynomial.from_template(smonos, tnames)
                s_unknowns[(label, v)] = tnames
    return TemplateSet(
        degree=degree,
        strategy_degree=sdeg,
        monomials=monos,
        strategy_monomials=smonos,
        f_templates=f_templates,
        strategy_templates=s_templates,
        f_unknowns=f_unknowns,
        strategy_unknowns=s_unknowns,
    )


# ---------------------------------------------------------------------------
# Implication groups (before splitting) and implications (after)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImplicationGroup:
    universals: tuple[str, ...]
    lhs: Pred  # NNF, TAtom leaves
    rhs: Pred  # NNF, TAtom leaves
    origin: str
    transition_id: Optional[str] = None


@dataclass(frozen=True)
class Implication:
    """conjunction of lhs atoms implies conjunction of rhs atoms, all universally
    quantified over ``universals``."""

    universals: tuple[str, ...]
    lhs: tuple[TAtom, ...]
    rhs: tuple[TAtom, ...]
    origin: str

    def game_degree(self) -> int:
        return max(
            [a.game_degree() for a in self.lhs + self.rhs],
            default=0,
        )

    def holds_at(
        self, assignment: Mapping[str, Fraction], point: Mapping[str, Fraction]
    ) -> bool:
        """Evaluate the instantiated implication at a concrete point."""
        for a in self.lhs:
            if not a.instantiate(assignment).eval(point):
                return True
        return all(a.instantiate(assignment).eval(point) for a in self.rhs)

    def render(self) -> str:
        lhs = " & ".join(a.render() for a in self.lhs) or "true"
        rhs = " & ".join(a.render() for a in self.rhs)
        uni = ", ".join(self.universals)
        return f"[{self.origin}] forall {uni}: {lhs}  ==>  {rhs}"


def _simplify_ground(pred: Pred) -> Pred:
    """Fold template atoms with neither game variables nor unknowns."""
    if isinstance(pred, PAtom) and isinstance(pred.atom, TAtom) and pred.atom.is_ground():
        return PTrue() if pred.atom.ground_truth() else PFalse()
    if isinstance(pred, PAnd):
        return pand([_simplify_ground(c) for c in pred.children])
    if isinstance(pred, POr):
        return por([_simplify_ground(c) for c in pred.children])
    return pred


def collect_constraints(g: GameSpec, ts: TemplateSet) -> list[ImplicationGroup]:
    """The C1/C2/C3 defining constraints of the certificate and strategy.

    Requires a normalized game; when targets were pre-expanded the effective
    target is used on the hypothesis side.
    """
    if not g.normalized:
        raise ConstraintError("constraints require a normalized game")
    var_order = g.var_list()
    groups: list[ImplicationGroup] = []

    # C1: ranking non-negative at the initial state.  Symbolic parameters stay
    # universally quantified with their domain constraints as hypotheses.
    init_map: dict[str, TemplatePolynomial] = {}
    free_vars: list[str] = []
    for v in var_order:
        if v in g.init_valuation:
            init_map[v] = TemplatePolynomial.constant(g.init_valuation[v])
        else:
            free_vars.append(v)
            init_map[v] = TemplatePolynomial.variable(v)
    f_init = ts.f_templates[g.init_label].subst_game_vars(init_map)
    rhs = PAtom(TAtom(f_init, ">="))
    if free_vars:
        init_poly_map = {
            v: Polynomial.constant(g.init_valuation[v])
            for v in var_order
            if v in g.init_valuation
        }
        lhs = _simplify_ground(lift(g.domain.subst(init_poly_map).nnf()))
    else:
        lhs = PTrue()
    groups.append(
        ImplicationGroup(tuple(free_vars), lhs, rhs, origin="C1")
    )

    dom_t = lift(g.domain.nnf())
    prime_map = {v: Polynomial.variable(primed(v)) for v in var_order}
    dom_primed_t = lift(g.domain.subst(prime_map).nnf())

    for t in g.transitions:
        owner = g.owner(t.source)
        f_src = ts.f_templates[t.source]
        not_target = lift(g.effective_target(t.source).negate().nnf())
        guard_t = lift(t.guard.nnf())
        f_nonneg = PAtom(TAtom(f_src, ">="))
        if owner == SAFE:
            f_dst_primed = ts.f_templates[t.target].subst_game_vars(
                {v: TemplatePolynomial.variable(primed(v)) for v in var_order}
            )
            lhs = pand(
                [dom_t, dom_primed_t, not_target, guard_t, f_nonneg, lift(t.update.nnf())]
            )
            rhs = pand(
                [
                    PAtom(TAtom(f_src - 1 - f_dst_primed, ">=")),
                    PAtom(TAtom(f_dst_primed, ">=")),
                ]
            )
            universals = tuple(var_order) + tuple(primed(v) for v in var_order)
            groups.append(
                ImplicationGroup(universals, lhs, rhs, origin=f"C2:{t.tid}", transition_id=t.tid)
            )
        else:
            sigma = ts.strategy_map(t.source)
            subst_map = {primed(v): sigma[v] for v in var_order}
            subst_map.update({v: TemplatePolynomial.variable(v) for v in var_order})
            f_dst_sigma = ts.f_templates[t.target].subst_game_vars(
                {v: sigma[v] for v in var_order}
            )
            update_sigma = lift_subst(t.update.nnf(), subst_map)
            domain_sigma = lift_subst(g.domain.nnf(), {v: sigma[v] for v in var_order})
            lhs = pand([dom_t, not_target, guard_t, f_nonneg])
            rhs = pand(
                [
                    update_sigma,
                    domain_sigma,
                    PAtom(TAtom(f_src - 1 - f_dst_sigma, ">=")),
                    PAtom(TAtom(f_dst_sigma, ">=")),
                ]
            )
            groups.append(
                ImplicationGroup(
                    tuple(var_order), lhs, rhs, origin=f"C3:{t.tid}", transition_id=t.tid
                )
            )
    return groups


# ---------------------------------------------------------------------------
# Splitting into conjunctive implications and candidate systems
# ---------------------------------------------------------------------------


@dataclass
class CandidateSystem:
    implications: list[Implication]
    choice: dict[str, int] = field(default_factory=dict)
    infeasible: bool = False

    def describe(self) -> str:
        if not self.choice:
            return "base"
        return ",".join(f"{k}#{v}" for k, v in sorted(self.choice.items()))


def _tatom_dnf(pred: Pred, cap: int) -> list[list[TAtom]]:
    cubes = to_dnf(pred, cap)
    return [[a for a in cube] for cube in cubes]


def _eliminate_primed(
    universals: list[str], lhs: list[TAtom], rhs: list[TAtom]
) -> tuple[list[str], list[TAtom], list[TAtom]]:
    """Substitute away primed/witness universals fixed by assignment atoms.

    An lhs equality ``v' - e = 0`` with ``v'`` not occurring in ``e`` defines
    ``v'``; eliminating it shrinks both the quantifier block and the
    translation degree.
    """
    changed = True
    while changed:
        changed = False
        for i, a in enumerate(lhs):
            if a.rel != "=":
                continue
            for v in sorted(a.variables()):
                if not (is_primed(v) or v.endswith("__w")):
                    continue
                tp = a.tpoly
                mono = Monomial({v: 1})
                coeff = tp.coefficient(mono)
                if not coeff.is_constant() or coeff.constant_value() == 0:
                    continue
                rest = tp - TemplatePolynomial({mono: coeff})
                if v in rest.game_variables():
                    continue
                c = coeff.constant_value()
                expr = rest * Fraction(-1, 1) * (1 / c)
                mapping = {v: expr}
                lhs = [x.subst(mapping) for x in (lhs[:i] + lhs[i + 1 :])]
                rhs = [x.subst(mapping) for x in rhs]
                if v in universals:
                    universals = [u for u in universals if u != v]
                changed = True
                break
            if changed:
                break
    return universals, lhs, rhs


def _interval_atom(a: TAtom) -> Optional[tuple[str, bool, Fraction]]:
    """Recognize concrete single-variable bounds c*v + d >= 0.

    Returns (var, is_lower, bound) where is_lower means v >= bound.
    """
    if a.rel != ">=" or not a.tpoly.is_concrete():
        return None
    p = a.tpoly.to_polynomial()
    vs = p.variables()
    if len(vs) != 1 or p.degree() != 1:
        return None
    v = next(iter(vs))
    c = p.coefficient(Monomial({v: 1}))
    d = p.coefficient(Monomial())
    if c == 0:
        return None
    return (v, c > 0, -d / c)


def _prune_bounds(lhs: list[TAtom]) -> list[TAtom]:
    """Drop single-variable bounds dominated by tighter ones."""
    best: dict[tuple[str, bool], Fraction] = {}
    for a in lhs:
        info = _interval_atom(a)
        if info is None:
            continue
        v, is_lower, bound = info
        cur = best.get((v, is_lower))
        if cur is None or (is_lower and bound > cur) or (not is_lower and bound < cur):
            best[(v, is_lower)] = bound
    out = []
    for a in lhs:
        info = _interval_atom(a)
        if info is not None:
            v, is_lower, bound = info
            if bound != best[(v, is_lower)]:
                continue
        out.append(a)
    return out


def _clean_implication(imp: Implication) -> Optional[Implication]:
    """Ground-fold, deduplicate and drop implications that are trivially valid.

    Returns None when the implication holds vacuously; raises nothing for
    infeasible right-hand sides (the caller handles those).
    """
    lhs: list[TAtom] = []
    seen = set()
    for a in imp.lhs:
        if a.is_ground():
            if not a.ground_truth():
                return None  # hypothesis unsatisfiable
            continue
        a = a.normalized()
        key = (a.rel, a.tpoly)
        if key not in seen:
            seen.add(key)
            lhs.append(a)
    lhs = _prune_bounds(lhs)
    rhs: list[TAtom] = []
    for a in imp.rhs:
        if a.is_ground() and a.ground_truth():
            continue
        rhs.append(a)
    if not rhs:
        return None
    used = set()
    for a in lhs + rhs:
        used |= a.variables()
    universals = tuple(v for v in imp.universals if v in used)
    return Implication(universals, tuple(lhs), tuple(rhs), imp.origin)


def implication_split(
    groups: list[ImplicationGroup],
    delta_strict: Fraction = DELTA_STRICT_DEFAULT,
    dnf_cap: int = 4096,
    choice_cap: int = 64,
) -> list[CandidateSystem]:
    """Split groups into candidate systems of conjunctive implications.

    The left-hand side is put in DNF (one implication per disjunct); a
    disjunctive right-hand side is resolved by choosing one disjunct per
    transition, every global choice yielding one candidate system.  Strict
    atoms are weakened on the left (``p > 0`` to ``p >= 0``) and strengthened
    on the right (``p > 0`` to ``p >= delta``); right-hand equalities become
    two inequalities, left-hand equalities are kept for free-multiplier
    treatment.
    """
    per_group: list[tuple[ImplicationGroup, list[list[TAtom]], list[list[TAtom]]]] = []
    for grp in groups:
        lhs_pred = _simplify_ground(grp.lhs.nnf())
        rhs_pred = _simplify_ground(grp.rhs.nnf())
        if isinstance(lhs_pred, PFalse):
            continue
        lhs_cubes = _tatom_dnf(lhs_pred, dnf_cap)
        rhs_cubes = _tatom_dnf(rhs_pred, dnf_cap)
        if not rhs_cubes:
            # no satisfiable right-hand side at all: every candidate dies
            return []
        per_group.append((grp, lhs_cubes, rhs_cubes))

    choice_dims = [
        (grp.transition_id or grp.origin, len(rhs_cubes))
        for grp, _, rhs_cubes in per_group
        if len(rhs_cubes) > 1
    ]
    n_systems = 1
    for _, n in choice_dims:
        n_systems *= n
    if n_systems > choice_cap:
        raise ConstraintError(
            f"{n_systems} disjunct-choice combinations exceed the cap of {choice_cap}; "
            f"raise the cap or rewrite disjunctive updates manually"
        )

    dims = [range(n) for _, n in choice_dims]
    keys = [k for k, _ in choice_dims]
    systems: list[CandidateSystem] = []
    for combo in itertools.product(*dims) if dims else [()]:
        choice = dict(zip(keys, combo))
        sys_imps: list[Implication] = []
        feasible = True
        for grp, lhs_cubes, rhs_cubes in per_group:
            key = grp.transition_id or grp.origin
            rhs_cube = rhs_cubes[choice.get(key, 0)]
            rhs_atoms: list[TAtom] = []
            for a in rhs_cube:
                if a.rel == ">":
                    rhs_atoms.append(TAtom(a.tpoly - delta_strict, ">="))
                elif a.rel == "=":
                    rhs_atoms.append(TAtom(a.tpoly, ">="))
                    rhs_atoms.append(TAtom(-a.tpoly, ">="))
                else:
                    rhs_atoms.append(a)
            if any(a.is_ground() and not a.ground_truth() for a in rhs_atoms):
                feasible = False
                break
            for cube in lhs_cubes:
                lhs_atoms = [
                    TAtom(a.tpoly, ">=") if a.rel == ">" else a for a in cube
                ]
                uni, lhs_list, rhs_list = _eliminate_primed(
                    list(grp.universals), lhs_atoms, list(rhs_atoms)
                )
                imp = Implication(
                    tuple(uni), tuple(lhs_list), tuple(rhs_list), grp.origin
                )
                imp = _clean_implication(imp)
                if imp is not None:
                    if any(a.is_ground() and not a.ground_truth() for a in imp.rhs):
                        feasible = False
                        break
                    sys_imps.append(imp)
            if not feasible:
                break
        if feasible:
            systems.append(CandidateSystem(sys_imps, choice))
    return systems


def constraint_counts(groups: list[ImplicationGroup]) -> dict[str, int]:
    out = {"C1": 0, "C2": 0, "C3": 0}
    for grp in groups:
        out[grp.origin.split(":")[0]] += 1
    return out
