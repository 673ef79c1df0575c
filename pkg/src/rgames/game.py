"""Game model: predicates, the textual game format, normalization, target
pre-expansion and successor sampling.

A reachability game is played by two players (REACH and SAFE) over states
``(label, valuation)`` where the valuation assigns rationals to a finite set
of real variables.  Transitions carry a guard over the current variables and a
relational update over current and primed variables; the target is a
per-label predicate.

Game file grammar (UTF-8, ``#`` line comments)::

    game "<name>"
    vars v1 v2 ...
    param NAME = <rational>          # pinned parameter
    param NAME : <predicate>         # symbolic parameter with constraint
    domain: <predicate>
    init <LABEL>: v1 = r1, v2 = r2, ...
    label <LABEL> reach|safe
    trans <L1> -> <L2> when <predicate> update <predicate-with-primes>
    target <LABEL>: <predicate>
    pre_target <LABEL>: <predicate>  # optional, author-supplied one-step set

Expressions use ``+ - * / ^`` (``/`` by a nonzero constant only, ``^`` with a
non-negative integer literal), relations ``>= > <= < = !=``, boolean ``& | !``
and parentheses.  Primed variables are written ``v'`` and are legal only in
updates.  Decimal literals are exact rationals (``1.5`` is ``3/2``).
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Mapping, Optional

from .poly import Monomial, Polynomial, PolyError

REACH = "reach"
SAFE = "safe"

# Fallback sampling interval for variables the domain does not bound.
UNBOUNDED_LO = Fraction(-100)
UNBOUNDED_HI = Fraction(100)


class GameError(Exception):
    pass


class ParseError(GameError):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.line = line
        self.col = col


class NormalizationError(GameError):
    pass


class SamplingExhausted(GameError):
    """Rejection sampling ran out of budget; distinct from 'no successor exists'."""


def is_primed(name: str) -> bool:
    return name.endswith("'")


def primed(name: str) -> str:
    return name + "'"


def unprime(name: str) -> str:
    return name[:-1] if name.endswith("'") else name


# ---------------------------------------------------------------------------
# Predicates
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    """``lhs rel 0`` with rel one of ``>=``, ``>``, ``=``.

    ``<=``, ``<`` and ``!=`` are normalized away at parse time.
    """

    lhs: Polynomial
    rel: str

    def __post_init__(self):
        if self.rel not in (">=", ">", "="):
            raise GameError(f"bad relation {self.rel}")

    def eval(self, point: Mapping[str, Fraction]) -> bool:
        v = self.lhs.eval(point)
        if self.rel == ">=":
            return v >= 0
        if self.rel == ">":
            return v > 0
        return v == 0

    def negate(self) -> "Pred":
        if self.rel == ">=":
            return PAtom(Atom(-self.lhs, ">"))
        if self.rel == ">":
            return PAtom(Atom(-self.lhs, ">="))
        return POr((PAtom(Atom(self.lhs, ">")), PAtom(Atom(-self.lhs, ">"))))

    def variables(self) -> set[str]:
        return self.lhs.variables()

    def subst(self, mapping: Mapping[str, Polynomial]) -> "Atom":
        return Atom(self.lhs.subst(mapping), self.rel)

    def render(self, var_order: list[str] | None = None) -> str:
        return f"{self.lhs.render(var_order)} {self.rel} 0"


class Pred:
    """Base class of predicate trees (immutable)."""

    def eval(self, point: Mapping[str, Fraction]) -> bool:
        raise NotImplementedError

    def nnf(self) -> "Pred":
        return self

    def negate(self) -> "Pred":
        raise NotImplementedError

    def variables(self) -> set[str]:
        return set()

    def subst(self, mapping: Mapping[str, Polynomial]) -> "Pred":
        return self

    def map_atoms(self, fn: Callable[[Atom], "Pred"]) -> "Pred":
        return self

    def render(self, var_order: list[str] | None = None) -> str:
        raise NotImplementedError

    def __repr__(self):
        return self.render()


class PTrue(Pred):
    def eval(self, point):
        return True

    def negate(self):
        return PFalse()

    def render(self, var_order=None):
        return "0 >= 0"

    def __eq__(self, other):
        return isinstance(other, PTrue)

    def __hash__(self):
        return hash("PTrue")


class PFalse(Pred):
    def eval(self, point):
        return False

    def negate(self):
        return PTrue()

    def render(self, var_order=None):
        return "0 > 0"

    def __eq__(self, other):
        return isinstance(other, PFalse)

    def __hash__(self):
        return hash("PFalse")


@dataclass(frozen=True)
class PAtom(Pred):
    atom: Atom

    def eval(self, point):
        return self.atom.eval(point)

    def negate(self):
        return self.atom.negate()

    def variables(self):
        return self.atom.variables()

    def subst(self, mapping):
        return PAtom(self.atom.subst(mapping))

    def map_atoms(self, fn):
        return fn(self.atom)

    def render(self, var_order=None):
        return self.atom.render(var_order)


@dataclass(frozen=True)
class PAnd(Pred):
    children: tuple[Pred, ...]

    def eval(self, point):
        return all(c.eval(point) for c in self.children)

    def nnf(self):
        return pand([c.nnf() for c in self.children])

    def negate(self):
        return por([c.negate() for c in self.children])

    def variables(self):
        out = set()
        for c in self.children:
            out |= c.variables()
        return out

    def subst(self, mapping):
        return pand([c.subst(mapping) for c in self.children])

    def map_atoms(self, fn):
        return pand([c.map_atoms(fn) for c in self.children])

    def render(self, var_order=None):
        return " & ".join(
            f"({c.render(var_order)})" if isinstance(c, POr) else c.render(var_order)
            for c in self.children
        )


@dataclass(frozen=True)
class POr(Pred):
    children: tuple[Pred, ...]

    def eval(self, point):
        return any(c.eval(point) for c in self.children)

    def nnf(self):
        return por([c.nnf() for c in self.children])

    def negate(self):
        return pand([c.negate() for c in self.children])

    def variables(self):
        out = set()
        for c in self.children:
            out |= c.variables()
        return out

    def subst(self, mapping):
        return por([c.subst(mapping) for c in self.children])

    def map_atoms(self, fn):
        return por([c.map_atoms(fn) for c in self.children])

    def render(self, var_order=None):
        return " | ".join(
            f"({c.render(var_order)})" if isinstance(c, PAnd) else c.render(var_order)
            for c in self.children
        )


@dataclass(frozen=True)
class PNot(Pred):
    child: Pred

    def eval(self, point):
        return not self.child.eval(point)

    def nnf(self):
        return self.child.nnf().negate()

    def negate(self):
        return self.child.nnf()

    def variables(self):
        return self.child.variables()

    def subst(self, mapping):
        return PNot(self.child.subst(mapping))

    def map_atoms(self, fn):
        return self.nnf().map_atoms(fn)

    def render(self, var_order=None):
        return f"!({self.child.render(var_order)})"


def pand(children: list[Pred]) -> Pred:
    flat: list[Pred] = []
    for c in children:
        if isinstance(c, PTrue):
            continue
        if isinstance(c, PFalse):
            return PFalse()
        if isinstance(c, PAnd):
            flat.extend(c.children)
        else:
            flat.append(c)
    if not flat:
        return PTrue()
    if len(flat) == 1:
        return flat[0]
    return PAnd(tuple(flat))


def por(children: list[Pred]) -> Pred:
    flat: list[Pred] = []
    for c in children:
        if isinstance(c, PFalse):
            continue
        if isinstance(c, PTrue):
            return PTrue()
        if isinstance(c, POr):
            flat.extend(c.children)
        else:
            flat.append(c)
    if not flat:
        return PFalse()
    if len(flat) == 1:
        return flat[0]
    return POr(tuple(flat))


def fold_ground(pred: Pred) -> Pred:
    """Fold atoms without variables into PTrue/PFalse constants."""
    if isinstance(pred, PAtom) and not pred.atom.variables():
        return PTrue() if pred.atom.eval({}) else PFalse()
    if isinstance(pred, PAnd):
        return pand([fold_ground(c) for c in pred.children])
    if isinstance(pred, POr):
        return por([fold_ground(c) for c in pred.children])
    if isinstance(pred, PNot):
        inner = fold_ground(pred.child)
        if isinstance(inner, PTrue):
            return PFalse()
        if isinstance(inner, PFalse):
            return PTrue()
        return PNot(inner)
    return pred


def to_dnf(pred: Pred, cap: int = 4096) -> list[list[Atom]]:
    """Disjunctive normal form of an NNF predicate as atom lists."""
    p = pred.nnf()
    if isinstance(p, PTrue):
        return [[]]
    if isinstance(p, PFalse):
        return []
    if isinstance(p, PAtom):
        return [[p.atom]]
    if isinstance(p, POr):
        out = []
        for c in p.children:
            out.extend(to_dnf(c, cap))
            if len(out) > cap:
                raise GameError(f"DNF exceeds cap of {cap} disjuncts")
        return out
    if isinstance(p, PAnd):
        cubes: list[list[Atom]] = [[]]
        for c in p.children:
            sub = to_dnf(c, cap)
            cubes = [a + b for a in cubes for b in sub]
            if len(cubes) > cap:
                raise GameError(f"DNF exceeds cap of {cap} disjuncts")
        return cubes
    raise GameError(f"unexpected predicate node {p!r}")


# ---------------------------------------------------------------------------
# Game data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transition:
    source: str
    target: str
    guard: Pred
    update: Pred
    tid: str = ""


@dataclass(frozen=True)
class ParamSpec:
    name: str
    pin: Optional[Fraction] = None
    constraint: Optional[Pred] = None


@dataclass(frozen=True)
class State:
    label: str
    valuation: dict[str, Fraction]

    def key(self, var_order: list[str]) -> tuple:
        return (self.label,) + tuple(self.valuation[v] for v in var_order)

    def __eq__(self, other):
        return (
            isinstance(other, State)
            and self.label == other.label
            and self.valuation == other.valuation
        )

    def __hash__(self):
        return hash((self.label, frozenset(self.valuation.items())))


@dataclass(frozen=True)
class GameSpec:
    name: str
    variables: tuple[str, ...]
    params: tuple[ParamSpec, ...]
    domain: Pred
    init_label: str
    init_valuation: dict[str, Fraction]
    labels: tuple[tuple[str, str], ...]  # (label, owner) in declaration order
    transitions: tuple[Transition, ...]
    targets: dict[str, Pred]
    pre_targets: dict[str, Pred] = field(default_factory=dict)
    # Set by the pipeline:
    solve_targets: Optional[dict[str, Pred]] = None
    pre_resolution_labels: frozenset = frozenset()
    normalized: bool = False

    def owner(self, label: str) -> str:
        for l, o in self.labels:
            if l == label:
                return o
        raise GameError(f"unknown label {label}")

    def label_names(self) -> list[str]:
        return [l for l, _ in self.labels]

    def reach_labels(self) -> list[str]:
        return [l for l, o in self.labels if o == REACH]

    def safe_labels(self) -> list[str]:
        return [l for l, o in self.labels if o == SAFE]

    def target_of(self, label: str) -> Pred:
        return self.targets.get(label, PFalse())

    def effective_target(self, label: str) -> Pred:
        """Target the solving pipeline uses (pre-expanded when available)."""
        if self.solve_targets is not None:
            return self.solve_targets.get(label, PFalse())
        return self.target_of(label)

    def outgoing(self, label: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == label]

    def in_target(self, s: State) -> bool:
        return self.target_of(s.label).eval(s.valuation)

    def var_list(self) -> list[str]:
        return list(self.variables)

    def render(self) -> str:
        vo = self.var_list()
        lines = [f'game "{self.name}"']
        if self.variables:
            lines.append("vars " + " ".join(self.variables))
        for p in self.params:
            if p.pin is not None:
                lines.append(f"param {p.name} = {p.pin}")
            else:
                lines.append(f"param {p.name} : {p.constraint.render(vo)}")
        lines.append(f"domain: {self.domain.render(vo)}")
        for l, o in self.labels:
            lines.append(f"label {l} {o}")
        init_parts = ", ".join(
            f"{v} = {self.init_valuation[v]}" for v in vo if v in self.init_valuation
        )
        lines.append(f"init {self.init_label}: {init_parts}")
        for t in self.transitions:
            lines.append(
                f"trans {t.source} -> {t.target} when {t.guard.render(vo)} "
                f"update {t.update.render(vo)}"
            )
        for l in self.label_names():
            if l in self.targets:
                lines.append(f"target {l}: {self.targets[l].render(vo)}")
        for l in self.label_names():
            if l in self.pre_targets:
                lines.append(f"pre_target {l}: {self.pre_targets[l].render(vo)}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Tokenizer / parser
# ---------------------------------------------------------------------------

KEYWORDS = {
    "game",
    "vars",
    "param",
    "domain",
    "init",
    "label",
    "trans",
    "target",
    "pre_target",
    "when",
    "update",
    "reach",
    "safe",
}

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<comment>\#[^\n]*)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*'?)
  | (?P<string>"[^"]*")
  | (?P<op>->|>=|<=|!=|[-+*/^(),:=><&|!])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str  # number | name | keyword | string | op | eof
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind not in ("ws", "comment"):
            tkind = kind
            if kind == "name" and tok in KEYWORDS:
                tkind = "keyword"
            tokens.append(Token(tkind, tok, line, col))
        nl = tok.count("\n")
        if nl:
            line += nl
            col = len(tok) - tok.rfind("\n")
        else:
            col += len(tok)
        pos = m.end()
    tokens.append(Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    # -- token helpers -------------------------------------------------------
    def peek(self) -> Token:
        return self.toks[self.i]

    def next(self) -> Token:
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            raise ParseError(f"expected {want!r}, found {t.text!r}", t.line, t.col)
        return self.next()

    def at_op(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "op" and t.text == text

    def eat_op(self, text: str) -> bool:
        if self.at_op(text):
            self.next()
            return True
        return False

    # -- expressions ----------------------------------------------------------
    def parse_expr(self) -> Polynomial:
        p = self.parse_mul()
        while True:
            if self.eat_op("+"):
                p = p + self.parse_mul()
            elif self.eat_op("-"):
                p = p - self.parse_mul()
            else:
                return p

    def parse_mul(self) -> Polynomial:
        p = self.parse_unary()
        while True:
            if self.eat_op("*"):
                p = p * self.parse_unary()
            elif self.at_op("/"):
                t = self.next()
                q = self.parse_unary()
                if not q.is_constant() or q.constant_value() == 0:
                    raise ParseError("division only by a nonzero constant", t.line, t.col)
                p = p.scale(1 / q.constant_value())
            else:
                return p

    def parse_unary(self) -> Polynomial:
        if self.eat_op("-"):
            return -self.parse_unary()
        return self.parse_power()

    def parse_power(self) -> Polynomial:
        p = self.parse_primary()
        if self.at_op("^"):
            t = self.next()
            e = self.peek()
            if e.kind != "number" or "." in e.text:
                raise ParseError("exponent must be a non-negative integer", t.line, t.col)
            self.next()
            return p ** int(e.text)
        return p

    def parse_primary(self) -> Polynomial:
        t = self.peek()
        if t.kind == "number":
            self.next()
            return Polynomial.constant(Fraction(t.text))
        if t.kind == "name":
            self.next()
            return Polynomial.variable(t.text)
        if self.eat_op("("):
            p = self.parse_expr()
            self.expect("op", ")")
            return p
        raise ParseError(f"expected expression, found {t.text!r}", t.line, t.col)

    # -- predicates -----------------------------------------------------------
    _RELS = (">=", "<=", "!=", "=", ">", "<")

    def parse_comparison(self) -> Pred:
        lhs = self.parse_expr()
        t = self.peek()
        if t.kind != "op" or t.text not in self._RELS:
            raise ParseError(f"expected relation, found {t.text!r}", t.line, t.col)
        self.next()
        rhs = self.parse_expr()
        rel = t.text
        if rel == ">=":
            return PAtom(Atom(lhs - rhs, ">="))
        if rel == ">":
            return PAtom(Atom(lhs - rhs, ">"))
        if rel == "<=":
            return PAtom(Atom(rhs - lhs, ">="))
        if rel == "<":
            return PAtom(Atom(rhs - lhs, ">"))
        if rel == "=":
            return PAtom(Atom(lhs - rhs, "="))
        # !=  expands into a disjunction of two strict atoms
        return POr(
            (PAtom(Atom(lhs - rhs, ">")), PAtom(Atom(rhs - lhs, ">")))
        )

    def parse_pred(self) -> Pred:
        parts = [self.parse_pred_and()]
        while self.eat_op("|"):
            parts.append(self.parse_pred_and())
        return por(parts)

    def parse_pred_and(self) -> Pred:
        parts = [self.parse_pred_unary()]
        while self.eat_op("&"):
            parts.append(self.parse_pred_unary())
        return pand(parts)

    def parse_pred_unary(self) -> Pred:
        if self.eat_op("!"):
            return PNot(self.parse_pred_unary())
        if self.at_op("("):
            # Could be a parenthesized predicate or a parenthesized arithmetic
            # sub-expression of a comparison; try the predicate reading first.
            save = self.i
            try:
                self.next()
                p = self.parse_pred()
                self.expect("op", ")")
                nxt = self.peek()
                if nxt.kind == "op" and nxt.text in ("+", "-", "*", "/", "^") + self._RELS:
                    raise ParseError("arithmetic continues", nxt.line, nxt.col)
                return p
            except ParseError:
                self.i = save
        return self.parse_comparison()


def parse_game(text: str) -> GameSpec:
    """Parse a game file into a :class:`GameSpec`; raises :class:`ParseError`."""
    p = _Parser(text)
    name = None
    variables: list[str] = []
    params: list[ParamSpec] = []
    domain: Pred | None = None
    init_label = None
    init_val: dict[str, Fraction] = {}
    labels: list[tuple[str, str]] = []
    transitions: list[Transition] = []
    targets: dict[str, Pred] = {}
    pre_targets: dict[str, Pred] = {}

    while p.peek().kind != "eof":
        t = p.peek()
        if t.kind != "keyword":
            raise ParseError(f"expected statement keyword, found {t.text!r}", t.line, t.col)
        kw = p.next().text
        if kw == "game":
            s = p.expect("string")
            name = s.text[1:-1]
        elif kw == "vars":
            while p.peek().kind == "name":
                v = p.next().text
                if is_primed(v):
                    raise ParseError("primed name in vars", t.line, t.col)
                if v in variables:
                    raise ParseError(f"duplicate variable {v}", t.line, t.col)
                variables.append(v)
        elif kw == "param":
            n = p.expect("name").text
            if p.eat_op("="):
                tok = p.peek()
                neg = p.eat_op("-")
                num = p.expect("number").text
                val = Fraction(num)
                if p.eat_op("/"):
                    den = p.expect("number").text
                    val = val / Fraction(den)
                if neg:
                    val = -val
                params.append(ParamSpec(n, pin=val))
                del tok
            else:
                p.expect("op", ":")
                params.append(ParamSpec(n, constraint=p.parse_pred()))
        elif kw == "domain":
            p.expect("op", ":")
            domain = p.parse_pred()
        elif kw == "init":
            init_label = p.expect("name").text
            p.expect("op", ":")
            while True:
                v = p.expect("name").text
                p.expect("op", "=")
                neg = p.eat_op("-")
                num = p.expect("number").text
                val = Fraction(num)
                if p.eat_op("/"):
                    val = val / Fraction(p.expect("number").text)
                init_val[v] = -val if neg else val
                if not p.eat_op(","):
                    break
        elif kw == "label":
            n = p.expect("name").text
            owner_tok = p.expect("keyword")
            if owner_tok.text not in (REACH, SAFE):
                raise ParseError("label owner must be reach or safe", owner_tok.line, owner_tok.col)
            if any(n == l for l, _ in labels):
                raise ParseError(f"duplicate label {n}", owner_tok.line, owner_tok.col)
            labels.append((n, owner_tok.text))
        elif kw == "trans":
            src = p.expect("name").text
            p.expect("op", "->")
            tgt = p.expect("name").text
            p.expect("keyword", "when")
            guard = p.parse_pred()
            p.expect("keyword", "update")
            update = p.parse_pred()
            transitions.append(Transition(src, tgt, guard, update))
        elif kw in ("target", "pre_target"):
            n = p.expect("name").text
            p.expect("op", ":")
            pred = p.parse_pred()
            (targets if kw == "target" else pre_targets)[n] = pred
        else:
            raise ParseError(f"unexpected keyword {kw}", t.line, t.col)

    if name is None:
        raise ParseError("missing 'game' section")
    if not variables:
        raise ParseError("missing 'vars' section")
    if domain is None:
        raise ParseError("missing 'domain' section")
    if init_label is None:
        raise ParseError("missing 'init' section")
    if not labels:
        raise ParseError("missing 'label' declarations")

    g = GameSpec(
        name=name,
        variables=tuple(variables),
        params=tuple(params),
        domain=fold_ground(domain),
        init_label=init_label,
        init_valuation=init_val,
        labels=tuple(labels),
        transitions=tuple(
            replace(
                t,
                guard=fold_ground(t.guard),
                update=fold_ground(t.update),
                tid=f"t{i}_{t.source}_to_{t.target}",
            )
            for i, t in enumerate(transitions)
        ),
        targets={l: fold_ground(p) for l, p in targets.items()},
        pre_targets={l: fold_ground(p) for l, p in pre_targets.items()},
    )
    _validate(g)
    return g


def _validate(g: GameSpec) -> None:
    label_names = set(g.label_names())
    declared = set(g.variables) | {p.name for p in g.params}
    if g.init_label not in label_names:
        raise ParseError(f"undeclared init label {g.init_label}")
    for v in g.init_valuation:
        if v not in g.variables:
            raise ParseError(f"init assigns undeclared variable {v}")
    for v in g.variables:
        if v not in g.init_valuation:
            raise ParseError(f"init missing value for variable {v}")

    def check_pred(pred: Pred, allow_primed: bool, where: str):
        for v in pred.variables():
            base = unprime(v)
            if is_primed(v) and not allow_primed:
                raise ParseError(f"primed variable {v} not allowed in {where}")
            if base not in declared:
                raise ParseError(f"undeclared variable {base} in {where}")

    check_pred(g.domain, False, "domain")
    for p in g.params:
        if p.constraint is not None:
            for v in p.constraint.variables():
                if v != p.name and v not in declared:
                    raise ParseError(f"undeclared variable {v} in param constraint")
    for t in g.transitions:
        if t.source not in label_names or t.target not in label_names:
            raise ParseError(f"transition references undeclared label in {t.tid}")
        check_pred(t.guard, False, f"guard of {t.tid}")
        check_pred(t.update, True, f"update of {t.tid}")
    for coll, where in ((g.targets, "target"), (g.pre_targets, "pre_target")):
        for l, pred in coll.items():
            if l not in label_names:
                raise ParseError(f"{where} for undeclared label {l}")
            check_pred(pred, False, where)


# ---------------------------------------------------------------------------
# Domain boxes and rational sampling
# ---------------------------------------------------------------------------


def domain_box(g: GameSpec) -> dict[str, tuple[Fraction, Fraction]]:
    """Per-variable interval bounds inferred from conjunctive domain atoms.

    Only atoms of the form ``a*v + b rel 0`` contribute; anything else is
    ignored, and missing bounds default to a wide fallback interval.
    """
    lo = {v: UNBOUNDED_LO for v in g.variables}
    hi = {v: UNBOUNDED_HI for v in g.variables}

    def visit(pred: Pred):
        if isinstance(pred, PAnd):
            for c in pred.children:
                visit(c)
        elif isinstance(pred, PAtom):
            atom = pred.atom
            vs = atom.variables()
            if len(vs) != 1 or atom.lhs.degree() != 1:
                return
            v = next(iter(vs))
            a = atom.lhs.coefficient(Monomial({v: 1}))
            b = atom.lhs.coefficient(Monomial())
            if a == 0:
                return
            bound = -b / a
            if atom.rel == "=":
                lo[v] = max(lo[v], bound)
                hi[v] = min(hi[v], bound)
            elif a > 0:
                lo[v] = max(lo[v], bound)
            else:
                hi[v] = min(hi[v], bound)

    visit(g.domain.nnf())
    for v in g.variables:
        if lo[v] > hi[v]:
            lo[v], hi[v] = hi[v], lo[v]
    return {v: (lo[v], hi[v]) for v in g.variables}


def sample_rational(rng: random.Random, lo: Fraction, hi: Fraction, grid: int = 64) -> Fraction:
    q = rng.randint(1, grid)
    span = hi - lo
    n = rng.randint(0, int(span * q)) if span > 0 else 0
    return lo + Fraction(n, q)


def sample_point(
    g: GameSpec,
    rng: random.Random,
    pred: Pred | None = None,
    budget: int = 200,
) -> Optional[dict[str, Fraction]]:
    """Sample a rational domain point, optionally also satisfying ``pred``."""
    box = domain_box(g)
    for _ in range(budget):
        pt = {v: sample_rational(rng, *box[v]) for v in g.variables}
        if g.domain.eval(pt) and (pred is None or pred.eval(pt)):
            return pt
    return None


# ---------------------------------------------------------------------------
# Update shape analysis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Branch:
    """One disjunct of an enumerable update: guard atoms plus a total assignment."""

    guard_atoms: tuple[Atom, ...]
    assigns: dict[str, Polynomial]

    def __hash__(self):
        items = sorted(self.assigns.items(), key=lambda kv: kv[0])
        return hash((self.guard_atoms, tuple(items)))


@dataclass(frozen=True)
class EnumShape:
    branches: tuple[Branch, ...]


@dataclass(frozen=True)
class SimplexShape:
    """v_i' >= v_i for i in pour_vars, sum of increments =/<= total, frames else."""

    pour_vars: tuple[str, ...]
    total: Fraction
    exact: bool  # True when the increment sum is an equality
    frames: dict[str, Polynomial]

    def __hash__(self):
        return hash((self.pour_vars, self.total, self.exact))


@dataclass(frozen=True)
class BoxShape:
    """lo_i(x) <= v_i' <= hi_i(x) per variable, frames for the rest."""

    intervals: dict[str, tuple[Polynomial, Polynomial]]
    frames: dict[str, Polynomial]

    def __hash__(self):
        return hash(tuple(sorted(self.intervals)))


@dataclass(frozen=True)
class HavocShape:
    """Fallback: rejection-sample primed variables against the raw update."""

    update: Pred


UpdateShape = object


def analyze_update(update: Pred, variables: tuple[str, ...]) -> UpdateShape:
    """Classify an update predicate into a samplable shape."""
    try:
        cubes = to_dnf(update, cap=64)
    except GameError:
        return HavocShape(update)
    if not cubes:
        return HavocShape(update)

    branches = []
    for cube in cubes:
        b = _try_assignment_branch(cube, variables)
        if b is None:
            branches = None
            break
        branches.append(b)
    if branches is not None:
        return EnumShape(tuple(branches))

    if len(cubes) == 1:
        shape = _try_simplex(cubes[0], variables)
        if shape is not None:
            return shape
        shape = _try_box(cubes[0], variables)
        if shape is not None:
            return shape
    return HavocShape(update)


def _try_assignment_branch(cube: list[Atom], variables: tuple[str, ...]) -> Optional[Branch]:
    assigns: dict[str, Polynomial] = {}
    guards: list[Atom] = []
    for atom in cube:
        primed_vars = {v for v in atom.variables() if is_primed(v)}
        if not primed_vars:
            guards.append(atom)
            continue
        if atom.rel != "=" or len(primed_vars) != 1:
            return None
        pv = next(iter(primed_vars))
        m = Monomial({pv: 1})
        coeff = atom.lhs.coefficient(m)
        rest = atom.lhs - Polynomial({m: coeff})
        if coeff == 0 or pv in rest.variables():
            return None
        expr = rest.scale(-1 / coeff)
        if any(is_primed(v) for v in expr.variables()):
            return None
        base = unprime(pv)
        if base in assigns and assigns[base] != expr:
            return None
        assigns[base] = expr
    if set(assigns) != set(variables):
        return None
    return Branch(tuple(guards), assigns)


def _split_frames(cube: list[Atom]) -> tuple[list[Atom], dict[str, Polynomial]]:
    frames: dict[str, Polynomial] = {}
    rest: list[Atom] = []
    for atom in cube:
        primed_vars = {v for v in atom.variables() if is_primed(v)}
        if atom.rel == "=" and len(primed_vars) == 1:
            pv = next(iter(primed_vars))
            m = Monomial({pv: 1})
            coeff = atom.lhs.coefficient(m)
            expr = (atom.lhs - Polynomial({m: coeff})).scale(-1 / coeff) if coeff else None
            if (
                coeff != 0
                and expr is not None
                and not any(is_primed(v) for v in expr.variables())
                and unprime(pv) not in frames
            ):
                frames[unprime(pv)] = expr
                continue
        rest.append(atom)
    return rest, frames


def _try_simplex(cube: list[Atom], variables: tuple[str, ...]) -> Optional[SimplexShape]:
    rest, frames = _split_frames(cube)
    lower: set[str] = set()
    total: Optional[tuple[Fraction, bool]] = None
    for atom in rest:
        primed_vars = sorted(v for v in atom.variables() if is_primed(v))
        if not primed_vars:
            return None
        if len(primed_vars) == 1:
            # v' - v >= 0
            pv = primed_vars[0]
            base = unprime(pv)
            want = Polynomial.variable(pv) - Polynomial.variable(base)
            if atom.rel == ">=" and atom.lhs == want:
                lower.add(base)
                continue
            return None
        # sum of increments:  c - sum(v'-v) >= 0  or  sum(v'-v) - c = 0
        incr = Polynomial.zero()
        for pv in primed_vars:
            incr = incr + Polynomial.variable(pv) - Polynomial.variable(unprime(pv))
        diff_eq = atom.lhs - incr
        diff_le = atom.lhs + incr
        if atom.rel == "=" and diff_eq.is_constant():
            total = (-diff_eq.constant_value(), True)
            continue
        if atom.rel in (">=",) and diff_le.is_constant():
            total = (diff_le.constant_value(), False)
            continue
        return None
    if total is None or not lower:
        return None
    pour = tuple(v for v in variables if v in lower)
    framed = {v: frames[v] for v in frames}
    covered = set(pour) | set(framed)
    if covered != set(variables):
        return None
    return SimplexShape(pour, total[0], total[1], framed)


def _try_box(cube: list[Atom], variables: tuple[str, ...]) -> Optional[BoxShape]:
    rest, frames = _split_frames(cube)
    lo: dict[str, Polynomial] = {}
    hi: dict[str, Polynomial] = {}
    for atom in rest:
        primed_vars = {v for v in atom.variables() if is_primed(v)}
        if len(primed_vars) != 1 or atom.rel not in (">=", ">"):
            return None
        pv = next(iter(primed_vars))
        m = Monomial({pv: 1})
        coeff = atom.lhs.coefficient(m)
        expr = atom.lhs - Polynomial({m: coeff})
        if coeff == 0 or any(is_primed(v) for v in expr.variables()):
            return None
        bound = expr.scale(-1 / coeff)
        base = unprime(pv)
        if coeff > 0:
            lo[base] = bound if base not in lo else None
        else:
            hi[base] = bound if base not in hi else None
    if any(v is None for v in lo.values()) or any(v is None for v in hi.values()):
        return None
    boxed = set(lo) | set(hi)
    covered = boxed | set(frames)
    if covered != set(variables) or not boxed:
        return None
    intervals = {}
    for v in boxed:
        if v not in lo or v not in hi:
            return None
        intervals[v] = (lo[v], hi[v])
    return BoxShape(intervals, frames)


# ---------------------------------------------------------------------------
# Successor sampling / enumeration
# ---------------------------------------------------------------------------


def transition_at(g: GameSpec, s: State) -> Transition:
    """The (unique, after normalization) enabled transition at ``s``."""
    enabled = [t for t in g.outgoing(s.label) if t.guard.eval(s.valuation)]
    if not enabled:
        raise GameError(f"no enabled transition at {s.label}")
    return enabled[0]


_SHAPE_CACHE: dict[tuple[int, str], UpdateShape] = {}


def update_shape(g: GameSpec, t: Transition) -> UpdateShape:
    key = (id(g), t.tid)
    shape = _SHAPE_CACHE.get(key)
    if shape is None:
        shape = analyze_update(t.update, g.variables)
        _SHAPE_CACHE[key] = shape
    return shape


def enumerate_successors(g: GameSpec, s: State) -> Optional[list[State]]:
    """All successors when every enabled transition is enumerable, else None."""
    out: list[State] = []
    found_any = False
    for t in g.outgoing(s.label):
        if not t.guard.eval(s.valuation):
            continue
        found_any = True
        shape = update_shape(g, t)
        if not isinstance(shape, EnumShape):
            return None
        for br in shape.branches:
            if all(a.eval(s.valuation) for a in br.guard_atoms):
                val = {v: br.assigns[v].eval(s.valuation) for v in g.variables}
                if g.domain.eval(val):
                    out.append(State(t.target, val))
    if not found_any:
        return []
    return out


def _primed_point(val: Mapping[str, Fraction], nxt: Mapping[str, Fraction]) -> dict[str, Fraction]:
    pt = dict(val)
    for v, x in nxt.items():
        pt[primed(v)] = x
    return pt


def successor_valuations(
    g: GameSpec,
    s: State,
    t: Transition,
    rng: random.Random,
    count: int = 1,
    budget: int = 2000,
) -> list[dict[str, Fraction]]:
    """Sample ``count`` successor valuations of ``s`` through transition ``t``."""
    shape = update_shape(g, t)
    box = domain_box(g)
    out: list[dict[str, Fraction]] = []

    def admit(val: dict[str, Fraction]) -> bool:
        return g.domain.eval(val)

    if isinstance(shape, EnumShape):
        options = []
        for br in shape.branches:
            if all(a.eval(s.valuation) for a in br.guard_atoms):
                val = {v: br.assigns[v].eval(s.valuation) for v in g.variables}
                if admit(val):
                    options.append(val)
        if not options:
            raise SamplingExhausted(f"no enumerable successor at {s.label}")
        for _ in range(count):
            out.append(dict(rng.choice(options)))
        return out

    attempts = 0
    while len(out) < count and attempts < budget:
        attempts += 1
        if isinstance(shape, SimplexShape):
            val = {v: e.eval(s.valuation) for v, e in shape.frames.items()}
            total = shape.total if shape.exact else shape.total * Fraction(rng.randint(0, 16), 16)
            weights = [rng.randint(0, 1000) for _ in shape.pour_vars]
            wsum = sum(weights)
            if wsum == 0:
                weights[0], wsum = 1, 1
            for v, w in zip(shape.pour_vars, weights):
                val[v] = s.valuation[v] + total * Fraction(w, wsum)
        elif isinstance(shape, BoxShape):
            val = {v: e.eval(s.valuation) for v, e in shape.frames.items()}
            for v, (lo_e, hi_e) in shape.intervals.items():
                lo_v, hi_v = lo_e.eval(s.valuation), hi_e.eval(s.valuation)
                if lo_v > hi_v:
                    val = None
                    break
                val[v] = sample_rational(rng, lo_v, hi_v)
            if val is None:
                continue
        else:
            val = {v: sample_rational(rng, *box[v]) for v in g.variables}
            if not shape.update.eval(_primed_point(s.valuation, val)):
                continue
        if admit(val):
            out.append(val)
    if len(out) < count:
        raise SamplingExhausted(
            f"sampler exhausted after {budget} attempts at {s.label} ({t.tid})"
        )
    return out


def sample_successor(g: GameSpec, s: State, seed: int | random.Random = 0) -> State:
    """One successor of ``s``, deterministic for a given seed."""
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    t = transition_at(g, s)
    val = successor_valuations(g, s, t, rng, count=1)[0]
    return State(t.target, val)


def one_step_candidates(
    g: GameSpec, s: State, t: Transition, rng: random.Random, samples: int = 32
) -> list[dict[str, Fraction]]:
    """Candidate successor valuations biased toward extremal moves.

    Used by the one-step target search at play time and by pre-target sanity
    checking; extremal moves (pour everything into one variable, interval
    endpoints) are tried alongside random samples.
    """
    shape = update_shape(g, t)
    box = domain_box(g)
    cands: list[dict[str, Fraction]] = []
    if isinstance(shape, EnumShape):
        for br in shape.branches:
            if all(a.eval(s.valuation) for a in br.guard_atoms):
                cands.append({v: br.assigns[v].eval(s.valuation) for v in g.variables})
    elif isinstance(shape, SimplexShape):
        for target_var in shape.pour_vars:
            val = {v: e.eval(s.valuation) for v, e in shape.frames.items()}
            for v in shape.pour_vars:
                val[v] = s.valuation[v] + (shape.total if v == target_var else 0)
            cands.append(val)
        # distribute proportionally to the remaining headroom of each variable
        headroom = {
            v: max(Fraction(0), box[v][1] - s.valuation[v]) for v in shape.pour_vars
        }
        room = sum(headroom.values())
        if room >= shape.total > 0:
            val = {v: e.eval(s.valuation) for v, e in shape.frames.items()}
            for v in shape.pour_vars:
                val[v] = s.valuation[v] + shape.total * headroom[v] / room
            cands.append(val)
        if not shape.exact:
            cands.append(
                {
                    v: (shape.frames[v].eval(s.valuation) if v in shape.frames else s.valuation[v])
                    for v in g.variables
                }
            )
    elif isinstance(shape, BoxShape):
        keys = list(shape.intervals)
        combos = [[]]
        for _ in keys:
            combos = [c + [side] for c in combos for side in (0, 1)]
            if len(combos) > 64:
                combos = combos[:64]
                break
        for combo in combos:
            val = {v: e.eval(s.valuation) for v, e in shape.frames.items()}
            ok = True
            for v, side in zip(keys, combo):
                lo_e, hi_e = shape.intervals[v]
                lo_v, hi_v = lo_e.eval(s.valuation), hi_e.eval(s.valuation)
                if lo_v > hi_v:
                    ok = False
                    break
                val[v] = hi_v if side else lo_v
            if ok:
                cands.append(val)
    try:
        cands.extend(successor_valuations(g, s, t, rng, count=samples, budget=samples * 20))
    except SamplingExhausted:
        pass
    return [v for v in cands if g.domain.eval(v)]


def has_successor(g: GameSpec, s: State) -> Optional[bool]:
    """Decide successor existence where the update shape allows it; None if unknown."""
    box = domain_box(g)
    verdicts: list[Optional[bool]] = []
    for t in g.outgoing(s.label):
        if not t.guard.eval(s.valuation):
            continue
        shape = update_shape(g, t)
        if isinstance(shape, EnumShape):
            found = False
            for br in shape.branches:
                if all(a.eval(s.valuation) for a in br.guard_atoms):
                    val = {v: br.assigns[v].eval(s.valuation) for v in g.variables}
                    if g.domain.eval(val):
                        found = True
                        break
            verdicts.append(found)
        elif isinstance(shape, SimplexShape):
            room = sum(
                max(Fraction(0), box[v][1] - s.valuation[v]) for v in shape.pour_vars
            )
            need = shape.total if shape.exact else Fraction(0)
            verdicts.append(room >= need)
        else:
            verdicts.append(None)
    if any(v is True for v in verdicts):
        return True
    if verdicts and all(v is False for v in verdicts):
        return False
    return None


def search_one_step(
    g: GameSpec,
    s: State,
    rng: random.Random,
    samples: int = 64,
) -> Optional[State]:
    """Find a one-step move from ``s`` into the original target set."""
    for t in g.outgoing(s.label):
        if not t.guard.eval(s.valuation):
            continue
        target = g.target_of(t.target)
        for val in one_step_candidates(g, s, t, rng, samples):
            if target.eval(val):
                return State(t.target, val)
    return None


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

SINK_REACH = "__sink_reach"
SINK_SAFE = "__sink_safe"


def _subst_pins(g: GameSpec) -> GameSpec:
    pins = {p.name: Polynomial.constant(p.pin) for p in g.params if p.pin is not None}
    sym = [p for p in g.params if p.pin is None]
    if not pins and not sym:
        return g

    def sub(pred: Pred) -> Pred:
        if not pins:
            return pred
        return fold_ground(pred.subst(pins))

    domain = sub(g.domain)
    variables = list(g.variables)
    init_val = dict(g.init_valuation)
    transitions = [
        replace(t, guard=sub(t.guard), update=sub(t.update)) for t in g.transitions
    ]
    targets = {l: sub(p) for l, p in g.targets.items()}
    pre_targets = {l: sub(p) for l, p in g.pre_targets.items()}

    # Symbolic parameters become frozen game variables: constraint joins the
    # domain and p' = p joins every update.
    for p in sym:
        variables.append(p.name)
        domain = pand([domain, sub(p.constraint)])
        frozen = PAtom(
            Atom(Polynomial.variable(primed(p.name)) - Polynomial.variable(p.name), "=")
        )
        transitions = [replace(t, update=pand([t.update, frozen])) for t in transitions]

    return replace(
        g,
        variables=tuple(variables),
        params=tuple(sym),
        domain=domain,
        init_valuation=init_val,
        transitions=tuple(transitions),
        targets=targets,
        pre_targets=pre_targets,
    )


def _guards_overlap(g: GameSpec, a: Pred, b: Pred, rng: random.Random, samples: int) -> bool:
    box = domain_box(g)
    for _ in range(samples):
        pt = {v: sample_rational(rng, *box[v]) for v in g.variables}
        if g.domain.eval(pt) and a.eval(pt) and b.eval(pt):
            return True
    return False


def normalize_game(g: GameSpec, seed: int = 0, overlap_samples: int = 2000) -> GameSpec:
    """Normalize per the standard without-loss-of-generality assumptions.

    * pinned parameters substituted; symbolic parameters become frozen variables,
    * per-label guards made pairwise disjoint (same-target overlaps merged by
      disjoining updates on the overlap; cross-target overlaps rejected),
    * guard coverage completed by routing the complement to an opposite-owner
      sink label with an identity self-loop; sinks are non-target.
    """
    rng = random.Random(seed)
    g = _subst_pins(g)

    # Check init against the domain when fully pinned.
    if set(g.init_valuation) == set(g.variables):
        if not g.domain.eval(g.init_valuation):
            raise NormalizationError("initial valuation violates the domain")

    labels = list(g.labels)
    transitions = list(g.transitions)

    # Disjointness.
    result: list[Transition] = []
    for label in [l for l, _ in labels]:
        outs = [t for t in transitions if t.source == label]
        acc: list[Transition] = []
        for t in outs:
            merged = t
            next_acc: list[Transition] = []
            for prev in acc:
                if not _guards_overlap(g, prev.guard, merged.guard, rng, overlap_samples):
                    next_acc.append(prev)
                    continue
                if prev.target != merged.target:
                    raise NormalizationError(
                        f"guards of {prev.tid} and {merged.tid} overlap across different "
                        f"target labels; rewrite the game with disjoint guards"
                    )
                both = pand([prev.guard, merged.guard])
                only_prev = pand([prev.guard, merged.guard.negate().nnf()])
                only_new = pand([merged.guard, prev.guard.negate().nnf()])
                next_acc.append(replace(prev, guard=only_prev))
                next_acc.append(
                    Transition(
                        label,
                        prev.target,
                        both,
                        por([prev.update, merged.update]),
                        tid=f"{prev.tid}+{merged.tid}",
                    )
                )
                merged = replace(merged, guard=only_new)
            next_acc.append(merged)
            acc = next_acc
        result.extend(acc)
    transitions = result

    # Coverage: complement guard routed to the opposite-owner sink.
    need_sinks: set[str] = set()
    extra: list[Transition] = []
    for label, owner in labels:
        outs = [t for t in transitions if t.source == label]
        union = por([t.guard for t in outs])
        if isinstance(union, PTrue):
            continue
        complement = union.negate().nnf()
        if isinstance(complement, PFalse):
            continue
        sink = SINK_SAFE if owner == REACH else SINK_REACH
        need_sinks.add(sink)
        extra.append(
            Transition(label, sink, complement, _identity_update(g.variables),
                       tid=f"deadlock_{label}")
        )
    for sink in sorted(need_sinks):
        owner = REACH if sink == SINK_REACH else SAFE
        labels.append((sink, owner))
        extra.append(
            Transition(sink, sink, PTrue(), _identity_update(g.variables),
                       tid=f"loop_{sink}")
        )
    transitions.extend(extra)

    return replace(
        g,
        labels=tuple(labels),
        transitions=tuple(transitions),
        normalized=True,
    )


def _identity_update(variables: tuple[str, ...]) -> Pred:
    return pand(
        [
            PAtom(Atom(Polynomial.variable(primed(v)) - Polynomial.variable(v), "="))
            for v in variables
        ]
    )


# ---------------------------------------------------------------------------
# Target pre-expansion (one application of the attractor step)
# ---------------------------------------------------------------------------


@dataclass
class PreReport:
    expanded: dict[str, str]  # label -> mechanism used
    fallback: list[str]  # labels where expansion was skipped


def _exact_pre_reach(g: GameSpec, label: str) -> Optional[Pred]:
    """pre for a REACH label with assignment-form updates: exists a move into O."""
    parts: list[Pred] = []
    for t in g.outgoing(label):
        shape = update_shape(g, t)
        if not isinstance(shape, EnumShape):
            return None
        tgt = g.target_of(t.target)
        for br in shape.branches:
            mapping = {v: br.assigns[v] for v in g.variables}
            moved_target = tgt.subst(mapping)
            moved_domain = g.domain.subst(mapping)
            guard_atoms = pand([PAtom(a) for a in br.guard_atoms])
            parts.append(pand([t.guard, guard_atoms, moved_domain, moved_target]))
    return por(parts)


def _exact_pre_safe(g: GameSpec, label: str) -> Optional[Pred]:
    """pre for a SAFE label with assignment-form updates: all moves land in O."""
    parts: list[Pred] = []
    for t in g.outgoing(label):
        shape = update_shape(g, t)
        if not isinstance(shape, EnumShape):
            return None
        tgt = g.target_of(t.target)
        branch_conds: list[Pred] = []
        for br in shape.branches:
            mapping = {v: br.assigns[v] for v in g.variables}
            guard_atoms = pand([PAtom(a) for a in br.guard_atoms])
            inside = pand([g.domain.subst(mapping), tgt.subst(mapping)])
            # either the branch is not enabled, or it lands in the target
            branch_conds.append(por([guard_atoms.negate().nnf(), inside]))
        parts.append(por([t.guard.negate().nnf(), pand(branch_conds)]))
    # at least one transition must be enabled for a successor to exist at all
    enabled = por([t.guard for t in g.outgoing(label)])
    return pand([enabled] + parts)


def pre_expand(
    g: GameSpec,
    seed: int = 0,
    sanity_samples: int = 200,
) -> tuple[GameSpec, PreReport]:
    """Expand targets to ``pre(O) union O`` (a single attractor application).

    Mechanisms, in priority order, per label:

    1. an author-supplied ``pre_target`` (after a sampling sanity check),
    2. exact substitution when every outgoing update is assignment-form,
    3. otherwise no expansion for that label (recorded in the report).

    REACH labels whose target grew are flagged for one-step resolution at
    play time.
    """
    if not g.normalized:
        raise GameError("pre_expand requires a normalized game")
    rng = random.Random(seed)
    solve_targets: dict[str, Pred] = dict(g.targets)
    report = PreReport(expanded={}, fallback=[])
    resolution: set[str] = set()

    for label, owner in g.labels:
        base = g.target_of(label)
        increment: Optional[Pred] = None
        mechanism = None
        if label in g.pre_targets:
            increment = g.pre_targets[label]
            _sanity_check_pre(g, label, owner, increment, rng, sanity_samples)
            mechanism = "declared"
        else:
            exact = (
                _exact_pre_reach(g, label) if owner == REACH else _exact_pre_safe(g, label)
            )
            if exact is not None:
                increment = exact
                mechanism = "exact-substitution"
        if increment is None or isinstance(increment, PFalse):
            if increment is None:
                report.fallback.append(label)
            continue
        solve_targets[label] = por([base, increment])
        report.expanded[label] = mechanism
        if owner == REACH:
            resolution.add(label)

    return (
        replace(
            g,
            solve_targets=solve_targets,
            pre_resolution_labels=frozenset(resolution),
        ),
        report,
    )


def _sanity_check_pre(
    g: GameSpec,
    label: str,
    owner: str,
    increment: Pred,
    rng: random.Random,
    samples: int,
) -> None:
    base = g.target_of(label)
    want = pand([increment, base.negate().nnf()])
    checked = 0
    for _ in range(samples * 10):
        if checked >= samples:
            break
        pt = sample_point(g, rng, pred=want, budget=1)
        if pt is None:
            continue
        checked += 1
        s = State(label, pt)
        if owner == REACH:
            if search_one_step(g, s, rng) is None:
                if has_successor(g, s) is False:
                    # Deadlocked corner state: it has no successors at all, so
                    # the one-step claim is vacuous there; a play can never be
                    # continued into it by a validated strategy.
                    continue
                raise GameError(
                    f"pre_target sanity check failed at {label}: no one-step move "
                    f"into the target from {pt}"
                )
        else:
            succs = enumerate_successors(g, s)
            if succs is not None and any(
                not g.target_of(s2.label).eval(s2.valuation) for s2 in succs
            ):
                raise GameError(
                    f"pre_target sanity check failed at {label}: a successor "
                    f"escapes the target from {pt}"
                )
