"""Translation of universally quantified implications into purely existential
polynomial constraint systems.

For an implication ``forall x: g_1 >= 0 & ... & g_m >= 0  ==>  p >= 0`` the
translation introduces multipliers and emits coefficient-matching equalities
for the polynomial identity

    p  =  mult_0 + sum_i mult_i * g_i        (as polynomials in x)

which is sound for any multiplier values with ``mult_i`` non-negative on the
hypothesis set:

* Farkas route (every atom degree <= 1 in the universals): the multipliers are
  fresh scalar unknowns ``lam_i >= 0`` (free for equality atoms).
* Putinar route (arbitrary degrees): each multiplier is an explicit sum of
  squares ``sigma_i = sum_j h_{i,j}^2`` of fresh template polynomials, with a
  free polynomial multiplier for equality atoms.

Both routes leave a system over template and multiplier unknowns only; no
game variables survive.  Since hypothesis atoms may themselves carry template
unknowns, the emitted constraints are polynomial (not linear) in the
unknowns, which is exactly the quadratic shape the synthesis reduction
produces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .constraints import Implication, TAtom
from .game import GameError
from .poly import (
    Monomial,
    ONE,
    Polynomial,
    TemplatePolynomial,
    monomials_up_to,
)


class PsatzError(GameError):
    pass


@dataclass(frozen=True)
class SosConfig:
    """Shape of the Putinar translation: SOS multipliers of the given (even)
    degree, each a sum of ``squares_per_multiplier`` squares.

    The default square count is four times the multiplier's monomial-basis
    size, which is enough slots to express any rational PSD Gram matrix as a
    sum of rational squares (four squares per diagonal pivot); unused slots
    cost nothing since their coefficients may be zero.  Multipliers attached
    to a hypothesis atom use the monomials of that atom's own variables
    (correlative sparsity); the free term uses all universals.
    """

    multiplier_degree: int = 2
    squares_per_multiplier: Optional[int] = None

    def __post_init__(self):
        if self.multiplier_degree < 0 or self.multiplier_degree % 2:
            raise PsatzError("multiplier degree must be even and non-negative")
        if self.squares_per_multiplier is not None and self.squares_per_multiplier < 1:
            raise PsatzError("at least one square per multiplier")

    def squares(self, basis_size: int) -> int:
        if self.squares_per_multiplier is not None:
            return self.squares_per_multiplier
        return 4 * basis_size


@dataclass
class ESConstraint:
    poly: Polynomial  # over unknowns only
    rel: str  # '=' or '>='
    origin: str


@dataclass
class ExistentialSystem:
    unknowns: list[str]
    constraints: list[ESConstraint] = field(default_factory=list)
    mode: str = "farkas"

    def add(self, poly: Polynomial, rel: str, origin: str):
        self.constraints.append(ESConstraint(poly, rel, origin))
        for u in poly.variables():
            if u not in self._seen:
                self._seen.add(u)
                self.unknowns.append(u)

    def __post_init__(self):
        self._seen = set(self.unknowns)

    def satisfied_by(
        self, model: dict[str, Fraction], tol: Fraction = Fraction(0)
    ) -> bool:
        """Exact check of every constraint under the model (absent unknowns 0)."""
        for c in self.constraints:
            point = {u: model.get(u, Fraction(0)) for u in c.poly.variables()}
            v = c.poly.eval(point)
            if c.rel == "=" and abs(v) > tol:
                return False
            if c.rel == ">=" and v < -tol:
                return False
        return True

    def violations(self, model: dict[str, Fraction]) -> list[tuple[str, Fraction]]:
        out = []
        for c in self.constraints:
            point = {u: model.get(u, Fraction(0)) for u in c.poly.variables()}
            v = c.poly.eval(point)
            if (c.rel == "=" and v != 0) or (c.rel == ">=" and v < 0):
                out.append((c.origin, v))
        return out


class NameGen:
    """Deterministic fresh-name source for multiplier unknowns."""

    def __init__(self):
        self.counters: dict[str, int] = {}

    def fresh(self, prefix: str) -> str:
        n = self.counters.get(prefix, 0)
        self.counters[prefix] = n + 1
        return f"{prefix}{n}"


def _tp_of_unknown(name: str) -> TemplatePolynomial:
    return TemplatePolynomial({ONE: Polynomial.variable(name)})


def _emit_identity(
    sys: ExistentialSystem, expr: TemplatePolynomial, origin: str
) -> None:
    """All game-variable coefficients of ``expr`` must vanish."""
    for mono in sorted(expr.terms, key=lambda m: m.sort_key(sorted(m.variables()))):
        coeff = expr.terms[mono]
        sys.add(coeff, "=", f"{origin}[{mono.render()}]")


def farkas_translate(
    imp: Implication, sys: Optional[ExistentialSystem] = None, names: Optional[NameGen] = None
) -> ExistentialSystem:
    """Farkas-style translation for implications linear in the universals.

    For each right-hand atom ``p >= 0`` emits ``p = lam_0 + sum lam_i g_i``
    as one equality per monomial, with ``lam_0, lam_i >= 0`` (equality
    hypotheses get sign-free multipliers).
    """
    if sys is None:
        sys = ExistentialSystem(unknowns=[], mode="farkas")
    if names is None:
        names = NameGen()
    if imp.game_degree() > 1:
        raise PsatzError(
            f"nonlinear atom in {imp.origin}: degree {imp.game_degree()} > 1; "
            f"use the Putinar translation"
        )
    for atom_idx, rhs_atom in enumerate(imp.rhs):
        origin = f"{imp.origin}/rhs{atom_idx}"
        lam0 = names.fresh("lam")
        sys.add(Polynomial.variable(lam0), ">=", f"{origin}/lam0")
        expr = rhs_atom.tpoly - _tp_of_unknown(lam0)
        for g in imp.lhs:
            lam = names.fresh("lam")
            if g.rel != "=":
                sys.add(Polynomial.variable(lam), ">=", f"{origin}/{lam}")
            expr = expr - _tp_of_unknown(lam) * g.tpoly
        _emit_identity(sys, expr, origin)
    return sys


def _sos_template(
    block: int, mult_idx: int, monos: list[Monomial], squares: int
) -> TemplatePolynomial:
    """sum_{j<squares} h_j^2 with systematically named fresh coefficients.

    The name ``w{block}_{mult}_{square}_{basis}`` encodes the Gram structure,
    so a backend can recover which quadratic unknown products belong to which
    multiplier without side information.
    """
    total = TemplatePolynomial()
    for j in range(squares):
        coeffs = [f"w{block}_{mult_idx}_{j}_{a}" for a in range(len(monos))]
        h = TemplatePolynomial.from_template(monos, coeffs)
        total = total + h * h
    return total


def _free_template(block: int, mult_idx: int, monos: list[Monomial]) -> TemplatePolynomial:
    coeffs = [f"u{block}_{mult_idx}_{a}" for a in range(len(monos))]
    return TemplatePolynomial.from_template(monos, coeffs)


def putinar_translate(
    imp: Implication,
    cfg: SosConfig,
    sys: Optional[ExistentialSystem] = None,
    names: Optional[NameGen] = None,
) -> ExistentialSystem:
    """Putinar-style translation with explicit sum-of-squares multipliers.

    Emits, per right-hand atom ``p >= 0``, the identity
    ``p = sigma_0 + sum_i sigma_i g_i + sum_j q_j e_j`` where the ``sigma``
    are SOS templates, the ``q_j`` are free polynomial multipliers for
    equality hypotheses ``e_j = 0``, and coefficient matching runs up to the
    induced degree.  Atom multipliers range over the atom's own variables;
    the free term ``sigma_0`` ranges over all universals of the implication.
    """
    if sys is None:
        sys = ExistentialSystem(unknowns=[], mode="putinar")
    if names is None:
        names = NameGen()
    universals = sorted(set().union(*[a.variables() for a in imp.lhs + imp.rhs]))
    md = cfg.multiplier_degree

    max_g = max([g.game_degree() for g in imp.lhs], default=0)
    for rhs_atom in imp.rhs:
        p = rhs_atom.tpoly
        reachable = max(md, md + max_g)
        if p.game_degree() > reachable:
            need = p.game_degree() - max_g
            need += need % 2
            raise PsatzError(
                f"{imp.origin}: right-hand degree {p.game_degree()} exceeds the "
                f"matchable degree {reachable}; raise multiplier_degree to {need}"
            )
        block = names.counters.get("block", 0)
        names.counters["block"] = block + 1
        origin = f"{imp.origin}/rhs{block}"
        half0 = monomials_up_to(universals, md // 2)
        expr = p - _sos_template(block, 0, half0, cfg.squares(len(half0)))
        for gi, g in enumerate(imp.lhs, start=1):
            atom_vars = sorted(g.variables()) or universals
            if g.rel == "=":
                mult = _free_template(block, gi, monomials_up_to(atom_vars, md))
            else:
                half = monomials_up_to(atom_vars, md // 2)
                mult = _sos_template(block, gi, half, cfg.squares(len(half)))
            expr = expr - mult * g.tpoly
        _emit_identity(sys, expr, origin)
    return sys


def system_is_linear(implications: list[Implication]) -> bool:
    return all(imp.game_degree() <= 1 for imp in implications)


def translate_candidate(
    implications: list[Implication],
    cfg: SosConfig = SosConfig(),
    mode: str = "auto",
    template_unknowns: Optional[list[str]] = None,
) -> ExistentialSystem:
    """Translate a whole candidate system with one shared unknown namespace.

    ``auto`` dispatches to Farkas iff every implication is linear in the game
    variables, otherwise to Putinar for all of them (mixed mode is disabled
    for reproducibility).  Passing the template unknowns pins them to the
    front of the declaration order.
    """
    if mode == "auto":
        mode = "farkas" if system_is_linear(implications) else "putinar"
    names = NameGen()
    sys = ExistentialSystem(unknowns=list(template_unknowns or []), mode=mode)
    for imp in implications:
        if mode == "farkas":
            farkas_translate(imp, sys, names)
        else:
            putinar_translate(imp, cfg, sys, names)
    return sys
