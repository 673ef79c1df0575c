"""Certificate extraction and independent validation.

Nothing here trusts the synthesis pipeline: a solution is validated by
(1) sampling-based re-checking of the defining conditions with exact rational
arithmetic, (2) seeded play simulation against adversarial policies with the
ceil(f(init)) step-bound contract, and (3) for finite games, an exact
attractor oracle whose ranking construction is checked against the same
conditions.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

from .constraints import TemplateSet
from .game import (
    REACH,
    SAFE,
    BoxShape,
    GameError,
    GameSpec,
    PAnd,
    PAtom,
    State,
    Transition,
    domain_box,
    enumerate_successors,
    sample_point,
    sample_rational,
    search_one_step,
    successor_valuations,
    transition_at,
    update_shape,
    primed,
)
from .poly import Monomial, Polynomial


class CertifyError(GameError):
    pass


# ---------------------------------------------------------------------------
# Certificates and strategies
# ---------------------------------------------------------------------------


class Certificate:
    """Per-label ranking functions; polynomial or black-box evaluable."""

    def __init__(
        self,
        polys: Optional[dict[str, Polynomial]] = None,
        fn: Optional[Callable[[str, dict[str, Fraction]], Fraction]] = None,
        approximate: bool = False,
    ):
        if (polys is None) == (fn is None):
            raise CertifyError("provide either polynomials or an evaluation function")
        self.polys = polys
        self.fn = fn
        self.approximate = approximate

    def value(self, label: str, valuation: dict[str, Fraction]) -> Fraction:
        if self.polys is not None:
            p = self.polys.get(label)
            if p is None:
                raise CertifyError(f"certificate undefined at label {label}")
            return p.eval(valuation)
        return Fraction(self.fn(label, valuation))


@dataclass
class Strategy:
    """Per-REACH-label move polynomials, one per variable."""

    moves: dict[str, dict[str, Polynomial]]
    pre_resolution: bool = True
    search_samples: int = 128

    def move(self, g: GameSpec, s: State) -> dict[str, Fraction]:
        table = self.moves.get(s.label)
        if table is None:
            raise CertifyError(f"strategy undefined at label {s.label}")
        return {v: table[v].eval(s.valuation) for v in g.variables}


def extract_solution(
    model: dict[str, Fraction], ts: TemplateSet, approximate: bool = False
) -> tuple[Certificate, Strategy]:
    """Instantiate every template from a solver model (absent unknowns are 0)."""
    polys = {l: tp.instantiate(model) for l, tp in ts.f_templates.items()}
    moves: dict[str, dict[str, Polynomial]] = {}
    for (label, var), tp in ts.strategy_templates.items():
        moves.setdefault(label, {})[var] = tp.instantiate(model)
    return Certificate(polys=polys, approximate=approximate), Strategy(moves=moves)


# ---------------------------------------------------------------------------
# Sampling checker
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    condition: str
    label: str
    state: dict[str, Fraction]
    detail: str


@dataclass
class CheckReport:
    samples: int
    checked: dict[str, int] = field(default_factory=dict)
    violations: list[Violation] = field(default_factory=list)
    sampler_failures: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> str:
        parts = [f"{k}:{v}" for k, v in sorted(self.checked.items())]
        status = "PASS" if self.ok else f"FAIL ({len(self.violations)} violations)"
        return f"{status} checked[{', '.join(parts)}] sampler_failures={self.sampler_failures}"

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "samples": self.samples,
            "checked": self.checked,
            "sampler_failures": self.sampler_failures,
            "violations": [
                {
                    "condition": v.condition,
                    "label": v.label,
                    "state": {k: str(x) for k, x in v.state.items()},
                    "detail": v.detail,
                }
                for v in self.violations[:50]
            ],
        }


def _refine_box(base, preds) -> dict[str, tuple[Fraction, Fraction]]:
    """Tighten per-variable sampling intervals using conjunctive atoms."""
    lo = {v: b[0] for v, b in base.items()}
    hi = {v: b[1] for v, b in base.items()}

    def visit(pred):
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

    for p in preds:
        visit(p.nnf())
    out = {}
    for v in base:
        if lo[v] > hi[v]:
            lo[v], hi[v] = hi[v], lo[v]
        out[v] = (lo[v], hi[v])
    return out


def check_certificate(
    g: GameSpec,
    cert: Certificate,
    strat: Optional[Strategy],
    samples: int = 10**4,
    seed: int = 0,
    successor_samples: int = 8,
    max_violations: int = 1000,
) -> CheckReport:
    """Independently re-verify the ranking conditions by sampling.

    C1 is checked exactly at the initial state; C2 samples SAFE-label states
    and checks every (enumerable) or sampled successor; C3 samples REACH
    states and checks the strategy's move.  The hypothesis side uses the
    effective (possibly pre-expanded) target; evaluation is exact rational,
    with a small slack only for approximate certificates.
    """
    if not g.normalized:
        raise CertifyError("checker requires a normalized game")
    rng = random.Random(seed)
    slack = Fraction(1, 10**9) if cert.approximate else Fraction(0)
    report = CheckReport(samples=samples)

    def record(condition, label, state, detail):
        if len(report.violations) < max_violations:
            report.violations.append(Violation(condition, label, dict(state), detail))

    # C1
    if set(g.init_valuation) == set(g.variables):
        v0 = cert.value(g.init_label, g.init_valuation)
        report.checked["C1"] = 1
        if v0 < -slack:
            record("C1", g.init_label, g.init_valuation, f"f(init) = {v0} < 0")
    else:
        # symbolic parameters: sample initial parameter values from the domain
        count = 0
        for _ in range(100):
            pt = sample_point(g, rng, budget=20)
            if pt is None:
                continue
            val = dict(pt)
            val.update(g.init_valuation)
            if not g.domain.eval(val):
                continue
            count += 1
            if cert.value(g.init_label, val) < -slack:
                record("C1", g.init_label, val, "f(init) < 0 at sampled parameters")
        report.checked["C1"] = count

    transitions = [t for t in g.transitions]
    per_transition = max(1, samples // max(1, len(transitions)))
    base_box = domain_box(g)
    for t in transitions:
        owner = g.owner(t.source)
        not_target = g.effective_target(t.source).negate().nnf()
        cond = "C2" if owner == SAFE else "C3"
        box = _refine_box(base_box, [not_target, t.guard, g.domain])
        done = 0
        attempts = 0
        while done < per_transition and attempts < per_transition * 20:
            attempts += 1
            pt = {v: sample_rational(rng, lo, hi) for v, (lo, hi) in box.items()}
            if not g.domain.eval(pt):
                report.sampler_failures += 1
                continue
            if not (t.guard.eval(pt) and not_target.eval(pt)):
                continue
            fval = cert.value(t.source, pt)
            if fval < -slack:
                continue  # progress conditions apply only where f >= 0
            done += 1
            s = State(t.source, pt)
            if owner == SAFE:
                succs = enumerate_successors(g, s)
                if succs is None:
                    try:
                        vals = successor_valuations(g, s, t, rng, count=successor_samples)
                    except GameError:
                        report.sampler_failures += 1
                        continue
                    succs = [State(t.target, v) for v in vals]
                for s2 in succs:
                    f2 = cert.value(s2.label, s2.valuation)
                    if f2 < -slack:
                        record("C2", t.source, pt, f"successor value {f2} < 0")
                    if fval - 1 - f2 < -slack:
                        record(
                            "C2",
                            t.source,
                            pt,
                            f"no unit decrease: f={fval}, successor f={f2}",
                        )
            else:
                if strat is None:
                    continue
                try:
                    mv = strat.move(g, s)
                except CertifyError:
                    record("C3", t.source, pt, "strategy undefined")
                    continue
                pp = dict(pt)
                for v, x in mv.items():
                    pp[primed(v)] = x
                if not t.update.eval(pp):
                    record("C3", t.source, pt, "strategy move violates the update relation")
                    continue
                if not g.domain.eval(mv):
                    record("C3", t.source, pt, "strategy move leaves the domain")
                    continue
                f2 = cert.value(t.target, mv)
                if f2 < -slack:
                    record("C3", t.source, pt, f"move value {f2} < 0")
                if fval - 1 - f2 < -slack:
                    record("C3", t.source, pt, f"no unit decrease: f={fval}, move f={f2}")
        report.checked[cond] = report.checked.get(cond, 0) + done
    return report


# ---------------------------------------------------------------------------
# Play simulation
# ---------------------------------------------------------------------------


@dataclass
class Play:
    states: list[State]
    outcome: str  # ReachedTarget | NotReached | Stuck
    steps: int
    seed: int
    diagnostic: str = ""

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "steps": self.steps,
            "seed": self.seed,
            "diagnostic": self.diagnostic,
            "states": [
                {"label": s.label, **{v: str(x) for v, x in s.valuation.items()}}
                for s in self.states
            ],
        }


POLICIES = ("random", "greedy", "max-leak")


def _policy_move(
    g: GameSpec,
    s: State,
    t: Transition,
    policy: str,
    cert: Optional[Certificate],
    rng: random.Random,
    width: int = 8,
) -> dict[str, Fraction]:
    if policy == "max-leak":
        shape = update_shape(g, t)
        if isinstance(shape, BoxShape):
            val = {v: e.eval(s.valuation) for v, e in shape.frames.items()}
            for v, (lo_e, hi_e) in shape.intervals.items():
                val[v] = hi_e.eval(s.valuation)
            if g.domain.eval(val):
                return val
        policy = "random"
    if policy == "greedy" and cert is not None:
        succs = enumerate_successors(g, s)
        if succs is not None and succs:
            options = [s2.valuation for s2 in succs if s2.label == t.target]
        else:
            options = successor_valuations(g, s, t, rng, count=width)
        best = None
        for val in options:
            fv = cert.value(t.target, val)
            if best is None or fv > best[0]:
                best = (fv, val)
        if best is not None:
            return best[1]
    return successor_valuations(g, s, t, rng, count=1)[0]


def simulate_play(
    g: GameSpec,
    strat: Optional[Strategy],
    cert: Optional[Certificate],
    policy: str = "random",
    max_steps: int = 200,
    seed: int = 0,
) -> Play:
    """One seeded play: REACH moves by the strategy (with one-step target
    resolution at pre-expanded states), SAFE by the chosen policy."""
    rng = random.Random(seed)
    if set(g.init_valuation) == set(g.variables):
        val0 = dict(g.init_valuation)
    else:
        pt = sample_point(g, rng)
        if pt is None:
            return Play([], "Stuck", 0, seed, "cannot sample initial parameters")
        val0 = dict(pt)
        val0.update(g.init_valuation)
    s = State(g.init_label, val0)
    states = [s]
    for step in range(max_steps):
        if g.in_target(s):
            return Play(states, "ReachedTarget", step, seed)
        try:
            t = transition_at(g, s)
        except GameError as e:
            return Play(states, "Stuck", step, seed, str(e))
        owner = g.owner(s.label)
        if owner == REACH:
            nxt = None
            if (
                strat is not None
                and strat.pre_resolution
                and s.label in g.pre_resolution_labels
                and g.effective_target(s.label).eval(s.valuation)
            ):
                found = search_one_step(g, s, rng, samples=strat.search_samples)
                if found is None:
                    return Play(
                        states,
                        "Stuck",
                        step,
                        seed,
                        "no one-step move into the target from a pre-expanded state "
                        "(checking gap)",
                    )
                nxt = found
            elif strat is not None:
                mv = strat.move(g, s)
                pp = dict(s.valuation)
                for v, x in mv.items():
                    pp[primed(v)] = x
                if not t.update.eval(pp) or not g.domain.eval(mv):
                    return Play(
                        states,
                        "Stuck",
                        step,
                        seed,
                        f"strategy move violates update/domain at {s.label} (checking gap)",
                    )
                nxt = State(t.target, mv)
            else:
                nxt = State(t.target, successor_valuations(g, s, t, rng, count=1)[0])
        else:
            try:
                val = _policy_move(g, s, t, policy, cert, rng)
            except GameError as e:
                return Play(states, "Stuck", step, seed, f"policy sampling failed: {e}")
            nxt = State(t.target, val)
        s = nxt
        states.append(s)
        if g.in_target(s):
            return Play(states, "ReachedTarget", step + 1, seed)
    return Play(states, "NotReached", max_steps, seed)


def step_bound(cert: Certificate, g: GameSpec) -> Optional[int]:
    """ceil(f(init)) for pinned games; None when parameters stay symbolic."""
    if set(g.init_valuation) != set(g.variables):
        return None
    return math.ceil(cert.value(g.init_label, g.init_valuation))


# ---------------------------------------------------------------------------
# Finite-game oracle
# ---------------------------------------------------------------------------


@dataclass
class OracleResult:
    winner: str  # "reach" | "safe"
    ranking: dict  # state key -> Fraction (or -1 outside the winning run)
    strategy: dict  # reach state key -> successor state key
    states: int

    def certificate(self, g: GameSpec) -> Certificate:
        order = g.var_list()

        def fn(label: str, valuation: dict[str, Fraction]) -> Fraction:
            key = (label,) + tuple(Fraction(valuation[v]) for v in order)
            return Fraction(self.ranking.get(key, -1))

        return Certificate(fn=fn)


def check_oracle_ranking(g: GameSpec, result: OracleResult) -> list[str]:
    """Exhaustive (non-sampled) validation of the oracle's ranking against the
    defining conditions, using enumerated successors.  Returns violations."""
    order = g.var_list()
    problems: list[str] = []
    init_key = (g.init_label,) + tuple(g.init_valuation[v] for v in order)
    if result.winner == REACH and result.ranking.get(init_key, Fraction(-1)) < 0:
        problems.append("C1: initial state has negative rank")
    # rebuild the reachable states from the ranking keys
    for key, rank in result.ranking.items():
        if rank < 0:
            continue
        label = key[0]
        valuation = {v: key[1 + i] for i, v in enumerate(order)}
        s = State(label, valuation)
        if g.in_target(s):
            continue
        succs = enumerate_successors(g, s)
        if succs is None:
            problems.append(f"state {key} not enumerable")
            continue
        ranks = []
        for s2 in succs:
            k2 = (s2.label,) + tuple(s2.valuation[v] for v in order)
            ranks.append(result.ranking.get(k2, Fraction(-1)))
        if g.owner(label) == SAFE:
            if any(r < 0 or rank - 1 < r for r in ranks):
                problems.append(f"C2 fails at {key}")
        else:
            if not any(r >= 0 and rank - 1 >= r for r in ranks):
                problems.append(f"C3 fails at {key}")
    return problems


def finite_oracle(g: GameSpec, cap: int = 5000) -> OracleResult:
    """Exact solution of games with enumerable finite reachable state space.

    Computes the attractor by backward fixpoint over the reachable graph and
    assigns the constructive ranking: target states 0, REACH states their
    chosen successor's rank plus one, SAFE states the maximum successor rank
    plus one; states off the winning run get -1.
    """
    if not g.normalized:
        raise CertifyError("oracle requires a normalized game")
    order = g.var_list()

    def key_of(s: State):
        return (s.label,) + tuple(s.valuation[v] for v in order)

    if set(g.init_valuation) != set(g.variables):
        raise CertifyError("oracle requires fully pinned parameters")
    init = State(g.init_label, dict(g.init_valuation))
    states: dict = {key_of(init): init}
    succ: dict = {}
    frontier = [init]
    while frontier:
        s = frontier.pop()
        k = key_of(s)
        if k in succ:
            continue
        nxt = enumerate_successors(g, s)
        if nxt is None:
            raise CertifyError(
                f"state space not enumerable at {s.label} (relational update)"
            )
        succ[k] = [key_of(x) for x in nxt]
        for x in nxt:
            kx = key_of(x)
            if kx not in states:
                if len(states) >= cap:
                    raise CertifyError(f"reachable state space exceeds cap {cap}")
                states[kx] = x
                frontier.append(x)

    in_target = {k: g.in_target(s) for k, s in states.items()}
    owner = {k: g.owner(s.label) for k, s in states.items()}

    # backward attractor fixpoint with levels
    level: dict = {k: 0 for k in states if in_target[k]}
    changed = True
    current = 1
    while changed:
        changed = False
        for k in states:
            if k in level:
                continue
            succs = succ[k]
            if owner[k] == REACH:
                if any(x in level for x in succs):
                    level[k] = current
                    changed = True
            else:
                if succs and all(x in level for x in succs):
                    level[k] = current
                    changed = True
        current += 1

    winner = REACH if key_of(init) in level else SAFE
    sigma: dict = {}
    for k in states:
        if owner[k] == REACH and k in level and not in_target[k]:
            best = None
            for x in succ[k]:
                if x in level and (best is None or level[x] < level[best]):
                    best = x
            sigma[k] = best

    ranking = {k: Fraction(-1) for k in states}
    if winner == REACH:
        # forward accessibility under sigma
        accessible = set()
        stack = [key_of(init)]
        while stack:
            k = stack.pop()
            if k in accessible:
                continue
            accessible.add(k)
            if in_target[k]:
                continue
            if owner[k] == REACH:
                stack.append(sigma[k])
            else:
                stack.extend(succ[k])
        # ranks by increasing attractor level
        for k in sorted(accessible, key=lambda k: level[k]):
            if in_target[k]:
                ranking[k] = Fraction(0)
            elif owner[k] == REACH:
                ranking[k] = ranking[sigma[k]] + 1
            else:
                ranking[k] = max(ranking[x] for x in succ[k]) + 1
    return OracleResult(
        winner=winner,
        ranking=ranking,
        strategy=sigma,
        states=len(states),
    )
