"""End-to-end driver and command-line interface.

``solve`` runs the full pipeline: parse, normalize, expand targets once,
iterate a template-degree ladder with disjunct-choice candidate systems,
translate to existential constraints, portfolio-solve via external backend
processes, then extract and *mandatorily* re-check every claimed solution
(exact system recheck plus the sampling checker) before reporting CERTIFIED.
Absence of a certificate is always reported as UNKNOWN, never as a win for
the opposing player.

Other subcommands: ``check`` (re-validate a stored certificate), ``play``
(simulate seeded plays against a policy), ``oracle`` (exact finite-game
solution), ``emit`` (write the translated SMT-LIB system), and ``bench``
(run a manifest of games and tabulate the results).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from . import certify, game as game_mod, smt
from .constraints import (
    TemplateSet,
    build_templates,
    collect_constraints,
    constraint_counts,
    implication_split,
)
from .game import GameError, GameSpec, ParamSpec, normalize_game, parse_game, pre_expand
from .poly import Monomial, Polynomial, render_fraction
from .psatz import PsatzError, SosConfig, translate_candidate

CERTIFIED = "CERTIFIED"
UNKNOWN = "UNKNOWN"
ERROR = "ERROR"


@dataclass
class RunConfig:
    degrees: list[tuple[int, int]] = field(default_factory=lambda: [(1, 1), (2, 1), (2, 2)])
    sos: SosConfig = field(default_factory=SosConfig)
    pre: bool = True
    backends: list[str] = field(default_factory=list)
    timeout: float = 150.0
    deadline: float = 900.0
    params: dict[str, object] = field(default_factory=dict)
    seed: int = 0
    outdir: str = "runs"
    samples: int = 2000
    plays: int = 25
    max_steps: int = 400
    emit_only: bool = False
    choice_cap: int = 64

    def describe(self) -> dict:
        return {
            "degrees": self.degrees,
            "sos_degree": self.sos.multiplier_degree,
            "pre": self.pre,
            "backends": self.backends or ["auto"],
            "timeout": self.timeout,
            "deadline": self.deadline,
            "params": {k: str(v) for k, v in self.params.items()},
            "seed": self.seed,
            "samples": self.samples,
        }


@dataclass
class RunResult:
    status: str
    degree: Optional[tuple[int, int]] = None
    certificate: Optional[certify.Certificate] = None
    strategy: Optional[certify.Strategy] = None
    report: Optional[certify.CheckReport] = None
    error: str = ""
    stats: dict = field(default_factory=dict)


def apply_params(g: GameSpec, overrides: dict[str, object]) -> GameSpec:
    """Pin or un-pin parameters from the command line."""
    if not overrides:
        return g
    params = list(g.params)
    names = {p.name for p in params}
    for name, value in overrides.items():
        if name not in names:
            raise GameError(f"game has no parameter {name}")
        new = []
        for p in params:
            if p.name != name:
                new.append(p)
            elif value == "symbolic":
                if p.constraint is None:
                    raise GameError(
                        f"parameter {name} has no constraint to use symbolically"
                    )
                new.append(ParamSpec(name, constraint=p.constraint))
            else:
                new.append(ParamSpec(name, pin=Fraction(value)))
        params = new
    from dataclasses import replace

    return replace(g, params=tuple(params))


def prepare_game(path: str, cfg: RunConfig) -> tuple[GameSpec, dict]:
    with open(path) as fh:
        text = fh.read()
    g = parse_game(text)
    g = apply_params(g, cfg.params)
    g = normalize_game(g, seed=cfg.seed)
    info = {"pre": {}}
    if cfg.pre:
        g, rep = pre_expand(g, seed=cfg.seed + 1)
        info["pre"] = {"expanded": rep.expanded, "fallback": rep.fallback}
    return g, info


def _resolve_backends(names: list[str]) -> list[smt.Backend]:
    if names:
        out = smt.available_backends(names)
        if not out:
            raise GameError(f"no requested backend available: {names}")
        return out
    return smt.default_backends()


def solve_command(path: str, cfg: RunConfig) -> RunResult:
    t_start = time.monotonic()
    stats: dict = {"stages": {}, "attempts": []}
    try:
        g, info = prepare_game(path, cfg)
    except GameError as e:
        return RunResult(status=ERROR, error=str(e))
    stats["pre"] = info.get("pre", {})
    backends = None
    if not cfg.emit_only:
        try:
            backends = _resolve_backends(cfg.backends)
        except GameError as e:
            return RunResult(status=ERROR, error=str(e))
    os.makedirs(cfg.outdir, exist_ok=True)

    deadline = t_start + cfg.deadline
    emitted = 0
    for degree, sdegree in cfg.degrees:
        if time.monotonic() > deadline:
            break
        try:
            ts = build_templates(g, degree, sdegree)
            groups = collect_constraints(g, ts)
            stats.setdefault("constraint_counts", constraint_counts(groups))
            candidates = implication_split(groups, choice_cap=cfg.choice_cap)
        except (GameError, PsatzError) as e:
            return RunResult(status=ERROR, error=str(e))
        for cand in candidates:
            if time.monotonic() > deadline:
                break
            attempt = {
                "degree": [degree, sdegree],
                "choice": cand.describe(),
                "implications": len(cand.implications),
            }
            try:
                t0 = time.monotonic()
                system = translate_candidate(
                    cand.implications, cfg.sos, mode="auto",
                    template_unknowns=ts.all_unknowns(),
                )
                doc = smt.emit_smtlib(
                    system, comment=f"degree {degree}/{sdegree} choice {cand.describe()}"
                )
                attempt["translate_seconds"] = round(time.monotonic() - t0, 3)
                attempt["mode"] = system.mode
                attempt["unknowns"] = len(system.unknowns)
                attempt["constraints"] = len(system.constraints)
            except PsatzError as e:
                attempt["error"] = str(e)
                stats["attempts"].append(attempt)
                continue
            doc_path = os.path.join(cfg.outdir, f"candidate_{emitted}.smt2")
            emitted += 1
            if cfg.emit_only:
                with open(doc_path, "w") as fh:
                    fh.write(doc)
                attempt["emitted"] = doc_path
                stats["attempts"].append(attempt)
                continue
            budget = min(cfg.timeout, max(5.0, deadline - time.monotonic()))
            tasks = [
                smt.PortfolioTask(
                    doc,
                    doc_path if i == 0 else doc_path.replace(".smt2", f".{b.name}.smt2"),
                    b,
                    tag=b.name,
                )
                for i, b in enumerate(backends)
            ]
            results = smt.run_portfolio(tasks, budget)
            attempt["backends"] = {
                t.backend.name: r.status for t, r in results if r is not None
            }
            stats["attempts"].append(attempt)
            for task, outcome in results:
                if outcome is None or not outcome.is_sat():
                    continue
                model = smt.exact_recheck(system, outcome)
                if model is None:
                    attempt["recheck"] = "model failed exact recheck; downgraded"
                    continue
                cert, strat = certify.extract_solution(model, ts, outcome.approximate)
                report = certify.check_certificate(
                    g, cert, strat, samples=cfg.samples, seed=cfg.seed
                )
                attempt["checker"] = report.summary()
                if not report.ok:
                    continue
                plays_ok, bound, play_stats = _bound_plays(g, cert, strat, cfg)
                attempt["plays"] = play_stats
                if not plays_ok:
                    continue
                stats["elapsed"] = round(time.monotonic() - t_start, 3)
                result = RunResult(
                    status=CERTIFIED,
                    degree=(degree, sdegree),
                    certificate=cert,
                    strategy=strat,
                    report=report,
                    stats=stats,
                )
                _write_artifacts(path, g, cfg, result, ts, model)
                return result
    stats["elapsed"] = round(time.monotonic() - t_start, 3)
    result = RunResult(status=UNKNOWN, stats=stats)
    _write_artifacts(path, g, cfg, result, None, None)
    return result


def _bound_plays(g, cert, strat, cfg) -> tuple[bool, Optional[int], dict]:
    bound = certify.step_bound(cert, g)
    outcomes = {"ReachedTarget": 0, "NotReached": 0, "Stuck": 0}
    worst = 0
    for k in range(cfg.plays):
        play = certify.simulate_play(
            g, strat, cert, policy="random", max_steps=cfg.max_steps, seed=cfg.seed + k
        )
        outcomes[play.outcome] += 1
        worst = max(worst, play.steps)
    ok = outcomes["ReachedTarget"] == cfg.plays and (bound is None or worst <= bound)
    return ok, bound, {"bound": bound, "worst_steps": worst, **outcomes}


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------


def _poly_json(p: Polynomial, order: list[str]) -> dict:
    out = {}
    for m in sorted(p.terms, key=lambda m: m.sort_key(order)):
        out[m.render()] = render_fraction(p.terms[m])
    return out


def certificate_json(
    g: GameSpec, cfg: RunConfig, result: RunResult
) -> dict:
    order = g.var_list()
    data = {
        "status": result.status,
        "degree": result.degree[0] if result.degree else None,
        "strategy_degree": result.degree[1] if result.degree else None,
        "certificate": {},
        "strategy": {},
        "approximate": bool(result.certificate and result.certificate.approximate),
        "stats": {
            "game": g.name,
            "params": {k: str(v) for k, v in cfg.params.items()},
            "pre": cfg.pre,
            "seed": cfg.seed,
        },
    }
    if result.certificate and result.certificate.polys is not None:
        data["certificate"] = {
            label: _poly_json(p, order) for label, p in result.certificate.polys.items()
        }
    if result.strategy:
        data["strategy"] = {
            label: {v: _poly_json(p, order) for v, p in moves.items()}
            for label, moves in result.strategy.moves.items()
        }
    return data


def _write_artifacts(path, g, cfg, result, ts, model):
    os.makedirs(cfg.outdir, exist_ok=True)
    summary = {
        "game": g.name,
        "file": path,
        "status": result.status,
        "config": cfg.describe(),
        "stats": result.stats,
        "error": result.error,
    }
    if result.report is not None:
        summary["check_report"] = result.report.to_dict()
        with open(os.path.join(cfg.outdir, "check_report.json"), "w") as fh:
            json.dump(result.report.to_dict(), fh, indent=1)
    with open(os.path.join(cfg.outdir, "result.json"), "w") as fh:
        json.dump(summary, fh, indent=1, default=str)
    if result.status == CERTIFIED:
        with open(os.path.join(cfg.outdir, "certificate.json"), "w") as fh:
            json.dump(certificate_json(g, cfg, result), fh, indent=1)


def load_certificate(path: str) -> tuple[certify.Certificate, certify.Strategy, dict]:
    with open(path) as fh:
        data = json.load(fh)

    def poly_of(entries: dict) -> Polynomial:
        total = Polynomial.zero()
        for mono_text, coeff in entries.items():
            term = Polynomial.constant(Fraction(coeff))
            if mono_text != "1":
                for factor in mono_text.split("*"):
                    if "^" in factor:
                        name, exp = factor.split("^")
                        term = term * Polynomial.variable(name) ** int(exp)
                    else:
                        term = term * Polynomial.variable(factor)
            total = total + term
        return total

    cert = certify.Certificate(
        polys={l: poly_of(entries) for l, entries in data["certificate"].items()},
        approximate=data.get("approximate", False),
    )
    strat = certify.Strategy(
        moves={
            label: {v: poly_of(entries) for v, entries in moves.items()}
            for label, moves in data["strategy"].items()
        }
    )
    return cert, strat, data


# ---------------------------------------------------------------------------
# argparse wiring
# ---------------------------------------------------------------------------


def _parse_degrees(text: str, strategy_degree: Optional[int]) -> list[tuple[int, int]]:
    """Ladder entries; each certificate degree D is tried with strategy
    degrees 1..D (cheapest first) unless one is pinned explicitly."""
    out: list[tuple[int, int]] = []
    for part in text.split(","):
        d = int(part)
        if strategy_degree is not None:
            out.append((d, strategy_degree))
        else:
            for sd in range(1, d + 1):
                out.append((d, sd))
    return out


def _parse_params(items: list[str]) -> dict[str, object]:
    out: dict[str, object] = {}
    for item in items or []:
        if "=" not in item:
            raise GameError(f"bad --param {item!r}; expected NAME=VALUE")
        name, value = item.split("=", 1)
        out[name] = "symbolic" if value == "symbolic" else Fraction(value)
    return out


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "degree", None):
        cfg.degrees = _parse_degrees(args.degree, getattr(args, "strategy_degree", None))
    cfg.sos = SosConfig(
        multiplier_degree=getattr(args, "sos_degree", 2),
        squares_per_multiplier=getattr(args, "sos_squares", None),
    )
    cfg.pre = not getattr(args, "no_pre", False)
    backend_arg = getattr(args, "backend", None)
    if backend_arg:
        if backend_arg == "smtlib-out":
            cfg.emit_only = True
        else:
            cfg.backends = backend_arg.split(",")
    cfg.timeout = getattr(args, "timeout", cfg.timeout)
    cfg.deadline = getattr(args, "deadline", cfg.deadline)
    cfg.params = _parse_params(getattr(args, "param", []))
    cfg.seed = getattr(args, "seed", 0)
    if getattr(args, "out", None):
        cfg.outdir = args.out
    cfg.samples = getattr(args, "samples", cfg.samples)
    if getattr(args, "plays", None):
        cfg.plays = args.plays
    return cfg


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="rgames",
        description="Ranking-certificate solver for polynomial reachability games",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--degree", default=None, help="certificate degree ladder, e.g. 1,2")
        p.add_argument("--strategy-degree", type=int, default=None)
        p.add_argument("--sos-degree", type=int, default=2)
        p.add_argument("--sos-squares", type=int, default=None)
        p.add_argument("--no-pre", action="store_true", help="disable target pre-expansion")
        p.add_argument("--backend", default=None, help="comma list or smtlib-out")
        p.add_argument("--timeout", type=float, default=150.0, help="seconds per attempt")
        p.add_argument("--deadline", type=float, default=900.0, help="overall seconds")
        p.add_argument("--param", action="append", default=[], help="NAME=VALUE or NAME=symbolic")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--samples", type=int, default=2000)
        p.add_argument("--plays", type=int, default=None)
        p.add_argument("-o", "--out", default=None, help="run directory")

    ps = sub.add_parser("solve", help="synthesize and validate a certificate")
    ps.add_argument("game")
    common(ps)
    ps.add_argument("--expect", choices=["certified", "unknown"], default=None)

    pc = sub.add_parser("check", help="re-validate a stored certificate")
    pc.add_argument("game")
    pc.add_argument("certificate")
    common(pc)

    pp = sub.add_parser("play", help="simulate plays under a stored certificate")
    pp.add_argument("game")
    pp.add_argument("certificate")
    pp.add_argument("--policy", default="random", choices=certify.POLICIES)
    pp.add_argument("--max-steps", type=int, default=400)
    common(pp)

    po = sub.add_parser("oracle", help="exact solution of a finite game")
    po.add_argument("game")
    po.add_argument("--cap", type=int, default=5000)
    po.add_argument("--validate", action="store_true")
    common(po)

    pe = sub.add_parser("emit", help="emit the translated constraint system")
    pe.add_argument("game")
    common(pe)

    pb = sub.add_parser("bench", help="run a benchmark manifest")
    pb.add_argument("manifest")
    common(pb)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        if args.command == "solve":
            cfg = _config_from_args(args)
            if not getattr(args, "out", None):
                base = os.path.splitext(os.path.basename(args.game))[0]
                cfg.outdir = os.path.join("runs", base)
            result = solve_command(args.game, cfg)
            print(f"{result.status}" + (f" (degree {result.degree})" if result.degree else ""))
            if result.error:
                print(f"error: {result.error}", file=sys.stderr)
            if result.report:
                print(result.report.summary())
            if result.status == ERROR:
                return 2
            if args.expect is not None:
                return 0 if result.status.lower() == args.expect else 1
            return 0 if result.status == CERTIFIED else 1

        if args.command == "check":
            cfg = _config_from_args(args)
            cert, strat, data = load_certificate(args.certificate)
            for k, v in (data.get("stats", {}).get("params") or {}).items():
                cfg.params.setdefault(k, "symbolic" if v == "symbolic" else Fraction(v))
            cfg.pre = data.get("stats", {}).get("pre", cfg.pre)
            g, _ = prepare_game(args.game, cfg)
            report = certify.check_certificate(
                g, cert, strat, samples=cfg.samples, seed=cfg.seed
            )
            print(report.summary())
            return 0 if report.ok else 1

        if args.command == "play":
            cfg = _config_from_args(args)
            cert, strat, data = load_certificate(args.certificate)
            for k, v in (data.get("stats", {}).get("params") or {}).items():
                cfg.params.setdefault(k, "symbolic" if v == "symbolic" else Fraction(v))
            cfg.pre = data.get("stats", {}).get("pre", cfg.pre)
            g, _ = prepare_game(args.game, cfg)
            bound = certify.step_bound(cert, g)
            plays = cfg.plays or 100
            outcomes = {"ReachedTarget": 0, "NotReached": 0, "Stuck": 0}
            worst = 0
            for k in range(plays):
                play = certify.simulate_play(
                    g, strat, cert, policy=args.policy,
                    max_steps=args.max_steps, seed=cfg.seed + k,
                )
                outcomes[play.outcome] += 1
                worst = max(worst, play.steps)
            print(
                f"plays={plays} outcomes={outcomes} worst_steps={worst} bound={bound}"
            )
            ok = outcomes["ReachedTarget"] == plays and (bound is None or worst <= bound)
            return 0 if ok else 1

        if args.command == "oracle":
            cfg = _config_from_args(args)
            g, _ = prepare_game(args.game, cfg)
            result = certify.finite_oracle(g, cap=args.cap)
            print(f"winner={result.winner} states={result.states}")
            if args.validate:
                problems = certify.check_oracle_ranking(g, result)
                print("ranking-valid" if not problems else f"INVALID: {problems[:5]}")
                return 0 if not problems else 2
            return 0

        if args.command == "emit":
            cfg = _config_from_args(args)
            cfg.emit_only = True
            if not getattr(args, "out", None):
                cfg.outdir = "emitted"
            result = solve_command(args.game, cfg)
            print(f"emitted to {cfg.outdir}")
            return 0 if result.status != ERROR else 2

        if args.command == "bench":
            return bench_command(args)
    except GameError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 2


def bench_command(args) -> int:
    with open(args.manifest) as fh:
        manifest = json.load(fh)
    base_dir = os.path.dirname(os.path.abspath(args.manifest))
    rows = []
    for row in manifest.get("rows", []):
        name = row.get("name", row["file"])
        cfg = RunConfig()
        opts = row.get("config", {})
        if "degree" in opts:
            cfg.degrees = _parse_degrees(str(opts["degree"]), opts.get("strategy_degree"))
        cfg.pre = opts.get("pre", True)
        cfg.timeout = float(opts.get("timeout", cfg.timeout))
        cfg.deadline = float(opts.get("deadline", cfg.deadline))
        cfg.samples = int(opts.get("samples", cfg.samples))
        cfg.seed = int(opts.get("seed", 0))
        cfg.params = {
            k: ("symbolic" if v == "symbolic" else Fraction(str(v)))
            for k, v in (opts.get("params") or {}).items()
        }
        outdir = getattr(args, "out", None) or "runs"
        cfg.outdir = os.path.join(outdir, name.replace("/", "_").replace(" ", "_"))
        path = row["file"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        t0 = time.monotonic()
        try:
            result = solve_command(path, cfg)
            status = result.status
        except Exception as e:  # keep the suite running
            status = ERROR
            result = RunResult(status=ERROR, error=str(e))
        elapsed = time.monotonic() - t0
        expect = row.get("expect")
        ok = expect is None or status.lower() == expect
        rows.append(
            {
                "name": name,
                "status": status,
                "seconds": round(elapsed, 1),
                "expected": expect,
                "ok": ok,
            }
        )
    width = max((len(r["name"]) for r in rows), default=10)
    print(f"{'benchmark'.ljust(width)}  status     seconds  expected")
    for r in rows:
        mark = "" if r["ok"] else "  <-- MISMATCH"
        print(
            f"{r['name'].ljust(width)}  {r['status']:<9}  {r['seconds']:>7}  "
            f"{r['expected'] or '-'}{mark}"
        )
    outdir = getattr(args, "out", None) or "runs"
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "bench.json"), "w") as fh:
        json.dump(rows, fh, indent=1)
    return 0 if all(r["ok"] for r in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
