"""SMT-LIB 2 emission, external solver processes and model parsing.

Existential systems are rendered to deterministic, byte-stable SMT-LIB 2
documents under the nonlinear-real-arithmetic logic, one ``declare-const``
per unknown and one assertion per constraint, with provenance comments.
Backends are external executables selected by name (``z3``, ``mathsat``,
``cvc5``), discoverable on PATH or through the ``RGAMES_Z3`` /
``RGAMES_MATHSAT`` / ``RGAMES_CVC5`` environment variables; the bundled
fallback backend (``polysat``) runs as ``python -m rgames.polysat`` and
speaks the same protocol, so the driver is solver-agnostic.

Model values are parsed exactly: integers, decimals and ``(/ p q)`` terms
become rationals; algebraic root expressions are approximated numerically to
a configurable number of digits and the outcome is flagged approximate.
"""

from __future__ import annotations

import os
import shutil
import subprocess
import sys as _sys
import threading
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .poly import Monomial, Polynomial
from .psatz import ESConstraint, ExistentialSystem


class SmtError(Exception):
    pass


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------


def _smt_rational(c: Fraction) -> str:
    if c < 0:
        return f"(- {_smt_rational(-c)})"
    if c.denominator == 1:
        return str(c.numerator)
    return f"(/ {c.numerator} {c.denominator})"


def _smt_monomial(m: Monomial, coeff: Fraction) -> str:
    factors = []
    for v, e in sorted(m.exponents.items()):
        factors.extend([v] * e)
    if not factors:
        return _smt_rational(coeff)
    if coeff == 1 and len(factors) == 1:
        return factors[0]
    parts = [] if coeff == 1 else [_smt_rational(coeff)]
    parts.extend(factors)
    if len(parts) == 1:
        return parts[0]
    return "(* " + " ".join(parts) + ")"


def smt_poly(p: Polynomial, order: dict[str, int]) -> str:
    """Deterministic prefix rendering of a polynomial over unknowns."""
    if p.is_zero():
        return "0"

    def key(m: Monomial):
        exps = m.exponents
        return (m.degree(), tuple(sorted((order.get(v, 1 << 30), e) for v, e in exps.items())))

    monos = sorted(p.terms, key=key)
    parts = [_smt_monomial(m, p.terms[m]) for m in monos]
    if len(parts) == 1:
        return parts[0]
    return "(+ " + " ".join(parts) + ")"


def emit_smtlib(system: ExistentialSystem, comment: str = "") -> str:
    """Render to SMT-LIB 2; identical systems yield byte-identical documents."""
    order = {u: i for i, u in enumerate(system.unknowns)}
    lines = []
    if comment:
        for line in comment.splitlines():
            lines.append(f"; {line}")
    lines.append(f"; mode: {system.mode}")
    lines.append("(set-option :produce-models true)")
    lines.append("(set-logic QF_NRA)")
    for u in system.unknowns:
        lines.append(f"(declare-const {u} Real)")
    for c in system.constraints:
        lines.append(f"; {c.origin}")
        body = smt_poly(c.poly, order)
        op = "=" if c.rel == "=" else ">="
        lines.append(f"(assert ({op} {body} 0))")
    lines.append("(check-sat)")
    lines.append("(get-model)")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Backend:
    name: str
    argv: tuple[str, ...]  # template; '{file}' is replaced by the document path

    def command(self, path: str) -> list[str]:
        return [a.replace("{file}", path) for a in self.argv]


_ENV_VARS = {"z3": "RGAMES_Z3", "mathsat": "RGAMES_MATHSAT", "cvc5": "RGAMES_CVC5"}


def find_backend(name: str) -> Optional[Backend]:
    """Resolve a backend by name via environment override or PATH."""
    if name == "polysat":
        return Backend("polysat", (_sys.executable, "-m", "rgames.polysat", "{file}"))
    env = _ENV_VARS.get(name)
    path = os.environ.get(env) if env else None
    if not path:
        path = shutil.which(name)
    if not path:
        return None
    if name == "z3":
        return Backend("z3", (path, "{file}"))
    if name == "mathsat":
        return Backend("mathsat", (path, "-model", "{file}"))
    if name == "cvc5":
        return Backend("cvc5", (path, "--lang", "smt2", "{file}"))
    return Backend(name, (path, "{file}"))


def available_backends(names: list[str]) -> list[Backend]:
    out = []
    for n in names:
        b = find_backend(n)
        if b is not None:
            out.append(b)
    return out


def default_backends() -> list[Backend]:
    """External solvers when present, the bundled fallback otherwise."""
    out = available_backends(["z3", "mathsat", "cvc5"])
    if not out:
        out = [find_backend("polysat")]
    return out


# ---------------------------------------------------------------------------
# Outcome and model parsing
# ---------------------------------------------------------------------------


@dataclass
class SolverOutcome:
    status: str  # Sat | Unsat | Unknown | Timeout | SolverError
    model: Optional[dict[str, Fraction]] = None
    raw: str = ""
    elapsed: float = 0.0
    approximate: bool = False
    backend: str = ""

    def is_sat(self) -> bool:
        return self.status == "Sat"


def _sexp_tokens(text: str):
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


def _parse_sexps(text: str) -> list:
    stack: list[list] = [[]]
    for tok in _sexp_tokens(text):
        if tok == "(":
            stack.append([])
        elif tok == ")":
            done = stack.pop()
            if not stack:
                raise SmtError("unbalanced model output")
            stack[-1].append(done)
        else:
            stack[-1].append(tok)
    return stack[0]


ROOT_DIGITS_DEFAULT = 12


def _eval_value(node, digits: int) -> tuple[Fraction, bool]:
    """Evaluate a model value s-expression to (rational, approximate)."""
    if isinstance(node, str):
        if "?" in node:  # decimal approximation marker
            return Fraction(node.replace("?", "")), True
        return Fraction(node), False
    if not node:
        raise SmtError("empty value expression")
    head = node[0]
    if head == "-" and len(node) == 2:
        v, ap = _eval_value(node[1], digits)
        return -v, ap
    if head == "/" and len(node) == 3:
        a, ap1 = _eval_value(node[1], digits)
        b, ap2 = _eval_value(node[2], digits)
        return a / b, ap1 or ap2
    if head in ("+", "*", "-"):
        vals = [_eval_value(x, digits) for x in node[1:]]
        ap = any(a for _, a in vals)
        out = vals[0][0]
        for v, _ in vals[1:]:
            if head == "+":
                out += v
            elif head == "*":
                out *= v
            else:
                out -= v
        return out, ap
    if head == "root-obj":
        return _approx_root(node, digits), True
    if head == "to_real" and len(node) == 2:
        return _eval_value(node[1], digits)
    raise SmtError(f"unsupported model value {node!r}")


def _approx_root(node, digits: int) -> Fraction:
    """Numeric approximation of a z3 (root-obj poly k) algebraic value."""
    import numpy as np

    poly_node, k = node[1], int(node[2])
    coeffs: dict[int, Fraction] = {}

    def walk(nd, scale=Fraction(1)):
        if isinstance(nd, str):
            if nd == "x":
                coeffs[1] = coeffs.get(1, Fraction(0)) + scale
            else:
                coeffs[0] = coeffs.get(0, Fraction(0)) + scale * Fraction(nd)
            return
        head = nd[0]
        if head == "+":
            for child in nd[1:]:
                walk(child, scale)
        elif head == "-" and len(nd) == 2:
            walk(nd[1], -scale)
        elif head == "*":
            const = scale
            var_deg = 0
            for child in nd[1:]:
                if isinstance(child, list) and child and child[0] == "^":
                    var_deg += int(child[2])
                elif child == "x":
                    var_deg += 1
                else:
                    v, _ = _eval_value(child, ROOT_DIGITS_DEFAULT)
                    const *= v
            coeffs[var_deg] = coeffs.get(var_deg, Fraction(0)) + const
        elif head == "^":
            var_deg = int(nd[2])
            coeffs[var_deg] = coeffs.get(var_deg, Fraction(0)) + scale
        else:
            v, _ = _eval_value(nd, ROOT_DIGITS_DEFAULT)
            coeffs[0] = coeffs.get(0, Fraction(0)) + scale * v

    walk(poly_node)
    deg = max(coeffs)
    arr = [float(coeffs.get(d, Fraction(0))) for d in range(deg, -1, -1)]
    roots = sorted(r.real for r in np.roots(arr) if abs(r.imag) < 1e-9)
    if not roots or k > len(roots):
        raise SmtError("cannot isolate algebraic root")
    return Fraction(roots[k - 1]).limit_denominator(10**digits)


def parse_solver_output(text: str, digits: int = ROOT_DIGITS_DEFAULT) -> SolverOutcome:
    """Parse status line plus optional (define-fun ...) model entries."""
    status = None
    model_text_lines = []
    for line in text.splitlines():
        stripped = line.strip()
        if status is None and stripped in ("sat", "unsat", "unknown"):
            status = stripped
            continue
        model_text_lines.append(line)
    if status is None:
        return SolverOutcome(status="SolverError", raw=text)
    if status == "unsat":
        return SolverOutcome(status="Unsat", raw=text)
    if status == "unknown":
        return SolverOutcome(status="Unknown", raw=text)
    model: dict[str, Fraction] = {}
    approximate = False
    try:
        nodes = _parse_sexps("\n".join(model_text_lines))
    except SmtError:
        nodes = []

    def visit(nd):
        nonlocal approximate
        if not isinstance(nd, list):
            return
        if len(nd) >= 5 and nd[0] == "define-fun" and nd[3] == "Real":
            name = nd[1]
            try:
                val, ap = _eval_value(nd[4], digits)
            except (SmtError, ValueError, ZeroDivisionError):
                return
            model[name] = val
            approximate |= ap
            return
        for child in nd:
            visit(child)

    for nd in nodes:
        visit(nd)
    return SolverOutcome(status="Sat", model=model, approximate=approximate, raw=text)


# ---------------------------------------------------------------------------
# Running backends
# ---------------------------------------------------------------------------


def run_backend(
    doc: str,
    backend: Backend,
    timeout: float,
    file_path: str,
    digits: int = ROOT_DIGITS_DEFAULT,
    cancel: Optional[threading.Event] = None,
) -> SolverOutcome:
    """Write the document, run the solver process, parse its output.

    The child is killed at the timeout (status Timeout) or when the cancel
    event fires (status Unknown).  A missing executable or a crash without a
    status line yields SolverError.
    """
    os.makedirs(os.path.dirname(file_path) or ".", exist_ok=True)
    with open(file_path, "w") as fh:
        fh.write(doc)
    start = time.monotonic()
    env = dict(os.environ)
    env.setdefault("RGAMES_POLYSAT_BUDGET", str(max(1.0, timeout * 0.95)))
    try:
        proc = subprocess.Popen(
            backend.command(file_path),
            stdout=subprocess.PIPE,
            stderr=subprocess.STDOUT,
            text=True,
            start_new_session=True,
            env=env,
        )
    except OSError as e:
        return SolverOutcome(status="SolverError", raw=str(e), backend=backend.name)

    out_chunks: list[str] = []

    def pump():
        try:
            data = proc.stdout.read()
            if data:
                out_chunks.append(data)
        except ValueError:
            pass

    reader = threading.Thread(target=pump, daemon=True)
    reader.start()
    deadline = start + timeout
    timed_out = False
    cancelled = False
    while True:
        if proc.poll() is not None:
            break
        if cancel is not None and cancel.is_set():
            cancelled = True
            _kill(proc)
            break
        if time.monotonic() > deadline:
            timed_out = True
            _kill(proc)
            break
        time.sleep(0.02)
    proc.wait()
    reader.join(timeout=5)
    elapsed = time.monotonic() - start
    raw = "".join(out_chunks)
    if cancelled:
        return SolverOutcome(status="Unknown", raw=raw, elapsed=elapsed, backend=backend.name)
    if timed_out:
        return SolverOutcome(status="Timeout", raw=raw, elapsed=elapsed, backend=backend.name)
    outcome = parse_solver_output(raw, digits)
    outcome.elapsed = elapsed
    outcome.backend = backend.name
    if outcome.status == "SolverError" and proc.returncode not in (0, 1):
        outcome.raw = f"exit {proc.returncode}: {raw}"
    return outcome


@dataclass
class PortfolioTask:
    doc: str
    file_path: str
    backend: Backend
    tag: str = ""


def run_portfolio(
    tasks: list[PortfolioTask], timeout: float, digits: int = ROOT_DIGITS_DEFAULT
) -> list[tuple[PortfolioTask, SolverOutcome]]:
    """Run tasks concurrently; the first Sat cancels everything else."""
    cancel = threading.Event()
    results: list[Optional[SolverOutcome]] = [None] * len(tasks)

    def work(i: int):
        results[i] = run_backend(
            tasks[i].doc, tasks[i].backend, timeout, tasks[i].file_path, digits, cancel
        )
        if results[i].is_sat():
            cancel.set()

    threads = [threading.Thread(target=work, args=(i,)) for i in range(len(tasks))]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return [(tasks[i], results[i]) for i in range(len(tasks))]


def _kill(proc: subprocess.Popen):
    try:
        os.killpg(os.getpgid(proc.pid), 9)
    except (ProcessLookupError, PermissionError, OSError):
        try:
            proc.kill()
        except OSError:
            pass


# ---------------------------------------------------------------------------
# Model post-processing
# ---------------------------------------------------------------------------


def round_model(
    model: dict[str, Fraction], max_denominator: int
) -> dict[str, Fraction]:
    """Continued-fraction rounding with a denominator cap."""
    return {k: v.limit_denominator(max_denominator) for k, v in model.items()}


def exact_recheck(
    system: ExistentialSystem,
    outcome: SolverOutcome,
    denominator_caps: tuple[int, ...] = (1, 16, 256, 10**4, 10**9, 10**15),
) -> Optional[dict[str, Fraction]]:
    """Exact-rational validation of a model against the emitted system.

    Exact models are checked directly; approximate ones are rounded through a
    ladder of denominator caps and re-verified.  Returns the first model that
    satisfies every constraint exactly, else None.
    """
    if outcome.model is None:
        return None
    if not outcome.approximate:
        if system.satisfied_by(outcome.model):
            return outcome.model
    for cap in denominator_caps:
        rounded = round_model(outcome.model, cap)
        if system.satisfied_by(rounded):
            return rounded
    return None
