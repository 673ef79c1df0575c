"""Exact multivariate polynomial arithmetic over the rationals.

Three layers live here:

* ``Monomial`` / ``Polynomial`` -- sparse polynomials with :class:`~fractions.Fraction`
  coefficients over named real variables.  All arithmetic is exact; canonical
  form (no zero coefficients, no zero exponents) is maintained by every
  operation, so two polynomials are mathematically equal iff their term maps
  are equal.
* unknown-coefficient polynomials -- a ``Polynomial`` whose variables are
  *template unknowns* instead of game variables.  No separate class is needed;
  the two universes are kept apart by convention and checked at the
  ``TemplatePolynomial`` boundary.
* ``TemplatePolynomial`` -- a polynomial in game variables whose coefficients
  are polynomials in template unknowns.  Substituting template polynomials for
  game variables (strategy composition) and instantiating unknowns with
  rationals are the two workhorse operations of the synthesis pipeline.

Monomial order is graded lexicographic with respect to an explicit variable
order (the order in which the game declares its variables), which makes
template-unknown indexing deterministic.
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Iterable, Mapping, Union

Rat = Union[Fraction, int]


class PolyError(Exception):
    """Raised for malformed polynomial operations (unknown variable, bad degree)."""


class Monomial:
    """A product of variables with positive integer exponents, e.g. ``x^2*y``.

    Stored as a tuple of ``(name, exponent)`` pairs sorted by name; zero
    exponents are dropped so the empty monomial is the constant ``1``.
    """

    __slots__ = ("_items", "_hash")

    def __init__(self, exponents: Mapping[str, int] | Iterable[tuple[str, int]] = ()):
        if isinstance(exponents, Mapping):
            items = exponents.items()
        else:
            items = exponents
        cleaned = []
        for name, exp in items:
            if exp < 0:
                raise PolyError(f"negative exponent for {name}")
            if exp > 0:
                cleaned.append((name, int(exp)))
        cleaned.sort()
        self._items = tuple(cleaned)
        self._hash = hash(self._items)

    @property
    def exponents(self) -> dict[str, int]:
        return dict(self._items)

    def degree(self) -> int:
        return sum(e for _, e in self._items)

    def variables(self) -> set[str]:
        return {v for v, _ in self._items}

    def is_one(self) -> bool:
        return not self._items

    def __mul__(self, other: "Monomial") -> "Monomial":
        exps = dict(self._items)
        for v, e in other._items:
            exps[v] = exps.get(v, 0) + e
        return Monomial(exps)

    def __eq__(self, other) -> bool:
        return isinstance(other, Monomial) and self._items == other._items

    def __hash__(self) -> int:
        return self._hash

    def sort_key(self, var_order: list[str]) -> tuple:
        """Graded-lex key: total degree first, then exponents in declaration order.

        Within a degree block, a monomial with a higher power of an
        earlier-declared variable comes first (so for order [x, y]:
        ``x^2 < x*y < y^2`` in output position, i.e. x2 sorts lowest).
        """
        exps = dict(self._items)
        vec = tuple(-exps.get(v, 0) for v in var_order)
        return (self.degree(), vec)

    def eval(self, point: Mapping[str, Fraction]) -> Fraction:
        out = Fraction(1)
        for v, e in self._items:
            if v not in point:
                raise PolyError(f"no value for variable {v}")
            out *= Fraction(point[v]) ** e
        return out

    def render(self) -> str:
        if not self._items:
            return "1"
        parts = []
        for v, e in self._items:
            parts.append(v if e == 1 else f"{v}^{e}")
        return "*".join(parts)

    def __repr__(self) -> str:
        return f"Monomial({self.render()})"


ONE = Monomial()


def monomials_up_to(var_order: list[str], max_degree: int) -> list[Monomial]:
    """All monomials of total degree <= ``max_degree`` in graded-lex order.

    The count is C(len(vars) + D, D).
    """
    if max_degree < 0:
        raise PolyError("degree bound must be non-negative")
    out: list[Monomial] = []

    def rec(idx: int, remaining: int, current: dict[str, int]):
        if idx == len(var_order):
            out.append(Monomial(current))
            return
        v = var_order[idx]
        for e in range(remaining, -1, -1):
            nxt = dict(current)
            if e:
                nxt[v] = e
            rec(idx + 1, remaining - e, nxt)

    for d in range(max_degree + 1):
        block: list[Monomial] = []

        def rec_deg(idx: int, remaining: int, current: dict[str, int]):
            if idx == len(var_order):
                if remaining == 0:
                    block.append(Monomial(current))
                return
            v = var_order[idx]
            for e in range(remaining, -1, -1):
                nxt = dict(current)
                if e:
                    nxt[v] = e
                rec_deg(idx + 1, remaining - e, nxt)

        rec_deg(0, d, {})
        out.extend(block)
    return out


def count_monomials(nvars: int, max_degree: int) -> int:
    return math.comb(nvars + max_degree, max_degree)


class Polynomial:
    """Sparse exact-rational polynomial; immutable once constructed."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Monomial, Rat] | None = None):
        cleaned: dict[Monomial, Fraction] = {}
        if terms:
            for m, c in terms.items():
                c = Fraction(c)
                if c != 0:
                    cleaned[m] = cleaned.get(m, Fraction(0)) + c
                    if cleaned[m] == 0:
                        del cleaned[m]
        self._terms = cleaned

    # -- constructors -------------------------------------------------------
    @staticmethod
    def constant(c: Rat) -> "Polynomial":
        c = Fraction(c)
        return Polynomial({ONE: c} if c != 0 else {})

    @staticmethod
    def variable(name: str) -> "Polynomial":
        return Polynomial({Monomial({name: 1}): Fraction(1)})

    @staticmethod
    def zero() -> "Polynomial":
        return Polynomial()

    # -- inspection ---------------------------------------------------------
    @property
    def terms(self) -> dict[Monomial, Fraction]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def is_constant(self) -> bool:
        return all(m.is_one() for m in self._terms)

    def constant_value(self) -> Fraction:
        if not self.is_constant():
            raise PolyError("polynomial is not constant")
        return self._terms.get(ONE, Fraction(0))

    def degree(self) -> int:
        return max((m.degree() for m in self._terms), default=0)

    def variables(self) -> set[str]:
        out: set[str] = set()
        for m in self._terms:
            out |= m.variables()
        return out

    def coefficient(self, m: Monomial) -> Fraction:
        return self._terms.get(m, Fraction(0))

    # -- ring operations ----------------------------------------------------
    def __add__(self, other: "Polynomial | Rat") -> "Polynomial":
        other = _coerce(other)
        terms = dict(self._terms)
        for m, c in other._terms.items():
            terms[m] = terms.get(m, Fraction(0)) + c
        return Polynomial(terms)

    __radd__ = __add__

    def __neg__(self) -> "Polynomial":
        return Polynomial({m: -c for m, c in self._terms.items()})

    def __sub__(self, other: "Polynomial | Rat") -> "Polynomial":
        return self + (-_coerce(other))

    def __rsub__(self, other: "Polynomial | Rat") -> "Polynomial":
        return _coerce(other) + (-self)

    def __mul__(self, other: "Polynomial | Rat") -> "Polynomial":
        other = _coerce(other)
        terms: dict[Monomial, Fraction] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = m1 * m2
                terms[m] = terms.get(m, Fraction(0)) + c1 * c2
        return Polynomial(terms)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "Polynomial":
        if n < 0:
            raise PolyError("negative power")
        out = Polynomial.constant(1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def scale(self, c: Rat) -> "Polynomial":
        c = Fraction(c)
        return Polynomial({m: coef * c for m, coef in self._terms.items()})

    def __eq__(self, other) -> bool:
        if isinstance(other, (int, Fraction)):
            other = Polynomial.constant(other)
        return isinstance(other, Polynomial) and self._terms == other._terms

    def __hash__(self) -> int:
        return hash(frozenset(self._terms.items()))

    # -- evaluation / substitution -------------------------------------------
    def eval(self, point: Mapping[str, Fraction]) -> Fraction:
        out = Fraction(0)
        for m, c in self._terms.items():
            out += c * m.eval(point)
        return out

    def eval_float(self, point: Mapping[str, float]) -> float:
        out = 0.0
        for m, c in self._terms.items():
            v = float(c)
            for name, e in m.exponents.items():
                v *= point[name] ** e
            out += v
        return out

    def subst(self, mapping: Mapping[str, "Polynomial"]) -> "Polynomial":
        """Substitute polynomials for variables; unmapped variables stay."""
        out = Polynomial.zero()
        for m, c in self._terms.items():
            term = Polynomial.constant(c)
            for v, e in m.exponents.items():
                repl = mapping.get(v)
                if repl is None:
                    repl = Polynomial.variable(v)
                term = term * repl ** e
            out = out + term
        return out

    def content(self) -> Fraction:
        """Positive gcd of all coefficients (0 for the zero polynomial)."""
        if not self._terms:
            return Fraction(0)
        num = 0
        den = 1
        for c in self._terms.values():
            num = math.gcd(num, abs(c.numerator))
            den = math.lcm(den, c.denominator)
        return Fraction(num, den)

    def normalized(self) -> "Polynomial":
        """Divide by the content: a canonical positive-scaled representative."""
        c = self.content()
        if c == 0:
            return self
        return self.scale(1 / c)

    def render(self, var_order: list[str] | None = None) -> str:
        """Render terms in graded-lex monomial order, rationals as ``p/q``."""
        if not self._terms:
            return "0"
        order = var_order if var_order is not None else sorted(self.variables())
        monos = sorted(self._terms, key=lambda m: m.sort_key(order))
        parts = []
        for i, m in enumerate(monos):
            c = self._terms[m]
            sign = "-" if c < 0 else ("+" if i else "")
            mag = abs(c)
            if m.is_one():
                body = str(mag)
            elif mag == 1:
                body = m.render()
            else:
                body = f"{mag}*{m.render()}"
            parts.append(f"{sign} {body}" if i else f"{sign}{body}")
        return " ".join(parts)

    def __repr__(self) -> str:
        return f"Polynomial({self.render()})"


def _coerce(x: "Polynomial | Rat") -> Polynomial:
    if isinstance(x, Polynomial):
        return x
    return Polynomial.constant(x)


# An UnknownPoly is a Polynomial whose variables are template unknowns; the
# alias exists for signature readability.
UnknownPoly = Polynomial


class TemplatePolynomial:
    """Polynomial over game variables with unknown-polynomial coefficients."""

    __slots__ = ("_terms",)

    def __init__(self, terms: Mapping[Monomial, UnknownPoly] | None = None):
        cleaned: dict[Monomial, UnknownPoly] = {}
        if terms:
            for m, p in terms.items():
                if not p.is_zero():
                    cur = cleaned.get(m)
                    s = p if cur is None else cur + p
                    if s.is_zero():
                        cleaned.pop(m, None)
                    else:
                        cleaned[m] = s
        self._terms = cleaned

    # -- constructors -------------------------------------------------------
    @staticmethod
    def from_polynomial(p: Polynomial) -> "TemplatePolynomial":
        return TemplatePolynomial(
            {m: Polynomial.constant(c) for m, c in p.terms.items()}
        )

    @staticmethod
    def from_template(monomials: list[Monomial], unknown_names: list[str]) -> "TemplatePolynomial":
        """Build sum_i u_i * m_i with one fresh unknown per monomial."""
        if len(monomials) != len(unknown_names):
            raise PolyError("one unknown per monomial required")
        return TemplatePolynomial(
            {m: Polynomial.variable(u) for m, u in zip(monomials, unknown_names)}
        )

    @staticmethod
    def constant(c: Rat) -> "TemplatePolynomial":
        return TemplatePolynomial.from_polynomial(Polynomial.constant(c))

    @staticmethod
    def variable(name: str) -> "TemplatePolynomial":
        return TemplatePolynomial.from_polynomial(Polynomial.variable(name))

    # -- inspection ---------------------------------------------------------
    @property
    def terms(self) -> dict[Monomial, UnknownPoly]:
        return dict(self._terms)

    def is_zero(self) -> bool:
        return not self._terms

    def game_degree(self) -> int:
        return max((m.degree() for m in self._terms), default=0)

    def unknown_degree(self) -> int:
        return max((p.degree() for p in self._terms.values()), default=0)

    def game_variables(self) -> set[str]:
        out: set[str] = set()
        for m in self._terms:
            out |= m.variables()
        return out

    def unknowns(self) -> set[str]:
        out: set[str] = set()
        for p in self._terms.values():
            out |= p.variables()
        return out

    def is_concrete(self) -> bool:
        return all(p.is_constant() for p in self._terms.values())

    def to_polynomial(self) -> Polynomial:
        if not self.is_concrete():
            raise PolyError("template still contains unknowns")
        return Polynomial({m: p.constant_value() for m, p in self._terms.items()})

    def coefficient(self, m: Monomial) -> UnknownPoly:
        return self._terms.get(m, Polynomial.zero())

    # -- arithmetic ----------------------------------------------------------
    def __add__(self, other: "TemplatePolynomial | Polynomial | Rat") -> "TemplatePolynomial":
        other = _coerce_tp(other)
        terms = dict(self._terms)
        for m, p in other._terms.items():
            terms[m] = terms.get(m, Polynomial.zero()) + p
        return TemplatePolynomial(terms)

    __radd__ = __add__

    def __neg__(self) -> "TemplatePolynomial":
        return TemplatePolynomial({m: -p for m, p in self._terms.items()})

    def __sub__(self, other: "TemplatePolynomial | Polynomial | Rat") -> "TemplatePolynomial":
        return self + (-_coerce_tp(other))

    def __rsub__(self, other) -> "TemplatePolynomial":
        return _coerce_tp(other) + (-self)

    def __mul__(self, other: "TemplatePolynomial | Polynomial | Rat") -> "TemplatePolynomial":
        other = _coerce_tp(other)
        terms: dict[Monomial, UnknownPoly] = {}
        for m1, p1 in self._terms.items():
            for m2, p2 in other._terms.items():
                m = m1 * m2
                prod = p1 * p2
                terms[m] = terms.get(m, Polynomial.zero()) + prod
        return TemplatePolynomial(terms)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "TemplatePolynomial":
        if n < 0:
            raise PolyError("negative power")
        out = TemplatePolynomial.constant(1)
        base = self
        while n:
            if n & 1:
                out = out * base
            base = base * base
            n >>= 1
        return out

    def __eq__(self, other) -> bool:
        return isinstance(other, TemplatePolynomial) and self._terms == other._terms

    def __hash__(self) -> int:
        return hash(frozenset(self._terms.items()))

    # -- the two pipeline operations ------------------------------------------
    def subst_game_vars(
        self, mapping: Mapping[str, "TemplatePolynomial"]
    ) -> "TemplatePolynomial":
        """Substitute template polynomials for game variables (composition).

        Every game variable of ``self`` must be mapped.  Products of unknowns
        arise when both ``self``'s coefficients and the substituted templates
        carry unknowns.
        """
        missing = self.game_variables() - set(mapping)
        if missing:
            raise PolyError(f"unmapped game variables: {sorted(missing)}")
        out = TemplatePolynomial()
        for m, coeff in self._terms.items():
            term = TemplatePolynomial({ONE: coeff})
            for v, e in m.exponents.items():
                term = term * mapping[v] ** e
            out = out + term
        return out

    def instantiate(self, assignment: Mapping[str, Rat]) -> Polynomial:
        """Replace unknowns by rationals; unknowns absent from the assignment
        default to 0 (solvers omit don't-cares)."""
        point = {u: Fraction(assignment.get(u, 0)) for u in self.unknowns()}
        return Polynomial(
            {m: p.eval(point) for m, p in self._terms.items()}
        )

    def eval_game_point(self, point: Mapping[str, Fraction]) -> UnknownPoly:
        """Evaluate game variables, leaving a polynomial over unknowns."""
        out = Polynomial.zero()
        for m, coeff in self._terms.items():
            out = out + coeff.scale(m.eval(point))
        return out

    def render(self, var_order: list[str] | None = None) -> str:
        if not self._terms:
            return "0"
        order = var_order if var_order is not None else sorted(self.game_variables())
        monos = sorted(self._terms, key=lambda m: m.sort_key(order))
        parts = []
        for m in monos:
            coeff = self._terms[m].render()
            parts.append(f"({coeff})*{m.render()}" if not m.is_one() else f"({coeff})")
        return " + ".join(parts)

    def __repr__(self) -> str:
        return f"TemplatePolynomial({self.render()})"


def _coerce_tp(x: "TemplatePolynomial | Polynomial | Rat") -> TemplatePolynomial:
    if isinstance(x, TemplatePolynomial):
        return x
    if isinstance(x, Polynomial):
        return TemplatePolynomial.from_polynomial(x)
    return TemplatePolynomial.constant(x)


def render_fraction(c: Fraction) -> str:
    return str(c.numerator) if c.denominator == 1 else f"{c.numerator}/{c.denominator}"
