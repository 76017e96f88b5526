"""
Command-line entry point ``nlgame``.

Every command prints one report on stdout::

    {"command": [...], "input_digest": "...", "results": {...},
     "versions": {...}, "wall_time": 0.12}

Logs go to stderr. Exit codes: 0 success, 2 bad input, 3 budget, 4 solver,
5 audit failure.
"""

import argparse
import io
import json
import logging
import platform
import sys
import time
from fractions import Fraction
from importlib import metadata
from typing import Any, Callable, Sequence

import numpy as np
import pandas as pd

from nlgame.config import Settings
from nlgame.exceptions import AuditFailure, NlgameError
from nlgame.game_file import BUILTIN_PREFIX, canonical_json, digest, load_game, load_joint, load_strategy
from nlgame.game_model import BUILTINS, Game, tensor_power
from nlgame.repetition_audit import (
    audit_repetition,
    constants,
    perturbed_target,
    product_optimum,
    repetition_bound,
    round_to_sns,
)
from nlgame.report_store import ReportStore
from nlgame.strategy_model import DeterministicStrategy
from nlgame.sweep_runner import STRATEGY_KINDS, SweepRunner
from nlgame.tensor_core import Channel
from nlgame.values import (
    ValueResult,
    classical_lp_value,
    classical_value,
    eta_lower_search,
    eta_upper_bound,
    ns_value,
    sns_value,
    threshold_value,
)

logger = logging.getLogger("nlgame")

SIGNIFICANT_DIGITS = 9


def fmt(x: float | None) -> float | None:
    """Round to nine significant digits for stable text output."""
    if x is None:
        return None
    x = float(x)
    if not np.isfinite(x):
        return x
    return float(f"{x:.{SIGNIFICANT_DIGITS}g}")


def _parse_fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None


def _versions() -> dict[str, str]:
    try:
        own = metadata.version("nlgame-repetition")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"nlgame": own, "numpy": np.__version__, "pandas": pd.__version__, "python": platform.python_version()}


def _witness_summary(witness: Any) -> dict[str, Any]:
    if isinstance(witness, DeterministicStrategy):
        return {"kind": "deterministic", "maps": [list(f) for f in witness.maps]}
    if isinstance(witness, Channel):
        support = int(np.count_nonzero(witness.mass > 1e-12))
        return {"kind": witness.normalization, "support": support, "cells": int(witness.mass.size)}
    return {"kind": type(witness).__name__}


def _value_payload(result: ValueResult) -> dict[str, Any]:
    payload = {
        "value": fmt(result.value),
        "status": result.status,
        "residual": fmt(result.residual),
        "witness": _witness_summary(result.witness),
    }
    if result.exact_value is not None:
        payload["value_fraction"] = str(result.exact_value)
    return payload


def cmd_value(args, settings: Settings) -> tuple[dict, Game]:
    game = load_game(args.game)
    solvers: dict[str, Callable[[], ValueResult]] = {
        "classical": lambda: classical_value(game, settings),
        "hvt": lambda: classical_lp_value(game, exact=args.exact, settings=settings),
        "ns": lambda: ns_value(game, exact=args.exact, settings=settings),
        "sns": lambda: sns_value(game, exact=args.exact, settings=settings),
    }
    result = solvers[args.strategy_class]()
    return {"game": game.name, "class": args.strategy_class, **_value_payload(result)}, game


def cmd_repeat(args, settings: Settings) -> tuple[dict, Game]:
    game = load_game(args.game)
    result = threshold_value(game, args.n, args.delta, args.strategy_class, exact=args.exact, settings=settings)
    return {
        "game": game.name,
        "class": args.strategy_class,
        "n": args.n,
        "delta": str(args.delta),
        **_value_payload(result),
    }, game


def cmd_bound(args, settings: Settings) -> tuple[dict, None]:
    consts = constants(args.m)
    return {
        "m": args.m,
        "n": args.n,
        "nu": args.nu,
        "c_prime": consts.c_prime,
        "c": fmt(consts.c),
        "bound": fmt(repetition_bound(args.m, args.n, args.nu)),
    }, None


def cmd_audit(args, settings: Settings) -> tuple[dict, Game]:
    game = load_game(args.game)
    if args.strategy in STRATEGY_KINDS:
        strategy = product_optimum(game, args.n, args.strategy, settings)
    else:
        rg = tensor_power(game, args.n, settings)
        strategy = load_strategy(args.strategy, rg.query_sizes, rg.response_sizes)
    report = audit_repetition(game, args.n, args.delta, strategy, settings=settings)
    results = report.to_dict()
    results["delta"] = str(args.delta)
    if not report.passed:
        first = report.failed_steps()[0]
        raise AuditFailure(first.name, f"slack {first.slack!r} below tolerance", results)
    return results, game


def cmd_round(args, settings: Settings) -> tuple[dict, Game]:
    game = load_game(args.game)
    if args.target == "ns-perturbed":
        target = perturbed_target(game, args.shift, np.random.default_rng(settings.seed))
    else:
        target = load_joint(args.target, game)
    result = round_to_sns(target, game)
    payload = result.to_dict()
    payload["achieved"] = fmt(payload["achieved"])
    payload["bound"] = fmt(payload["bound"])
    payload["eps"] = {k: fmt(v) for k, v in payload["eps"].items()}
    return {"game": game.name, **payload}, game


def cmd_eta(args, settings: Settings) -> tuple[dict, Game]:
    game = load_game(args.game)
    ns = ns_value(game, settings=settings)
    sns = sns_value(game, settings=settings).value
    lower = eta_lower_search(
        game, args.delta, args.restarts, settings.seed, jobs=settings.jobs, progress=args.verbose, ns=ns
    )
    return {
        "game": game.name,
        "delta": args.delta,
        "lower": fmt(lower.value),
        "upper": fmt(eta_upper_bound(game, args.delta, sns)),
        "sns": fmt(sns),
        "max_gap": fmt(lower.extra["max_gap"]),
    }, game


def cmd_sweep(args, settings: Settings) -> tuple[dict, None]:
    runner = SweepRunner(
        args.games, args.n, args.delta, args.strategies, settings=settings, progress=args.verbose
    )
    failures = runner.run_batch()
    frame = runner.to_frame()
    return {
        "progress": runner.get_progress_summary(),
        "failures": failures,
        "rows": json.loads(frame.to_json(orient="records")),
    }, None


COMMANDS: dict[str, Callable[..., tuple[dict, Game | None]]] = {
    "value": cmd_value,
    "repeat": cmd_repeat,
    "bound": cmd_bound,
    "audit": cmd_audit,
    "round": cmd_round,
    "eta": cmd_eta,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlgame",
        description="Values of multiprover nonlocal games and audits of the parallel repetition bound.",
    )
    parser.add_argument("--jobs", type=int, default=None, help="Worker threads for independent searches.")
    parser.add_argument("--exact", action="store_true", help="Solve LPs over exact rationals.")
    parser.add_argument("--tol", type=float, default=None, help="Membership tolerance (default 1e-9).")
    parser.add_argument("--seed", type=int, default=None, help="Seed for searches and samplers.")
    parser.add_argument("--output", choices=("json", "csv"), default="json")
    parser.add_argument("--cache", default=None, help="Cache directory for reports and sweeps.")
    parser.add_argument("--save", action="store_true", help="Store the results under the cache directory.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging and progress bars.")
    sub = parser.add_subparsers(dest="command", required=True)
    game_help = f"GameFile path or {BUILTIN_PREFIX}<name> ({', '.join(sorted(BUILTINS))})"

    p = sub.add_parser("value", help="Value under one strategy class.")
    p.add_argument("game", help=game_help)
    p.add_argument("--class", dest="strategy_class", choices=("classical", "hvt", "ns", "sns"), default="ns")

    p = sub.add_parser("repeat", help="Threshold value of the n-fold repetition.")
    p.add_argument("game", help=game_help)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--delta", type=_parse_fraction, required=True)
    p.add_argument("--class", dest="strategy_class", choices=("ns", "sns"), default="ns")

    p = sub.add_parser("bound", help="Evaluate exp(-n nu^2 / C_m).")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--nu", type=float, required=True)

    p = sub.add_parser("audit", help="Audit the repetition argument on one strategy.")
    p.add_argument("game", help=game_help)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--delta", type=_parse_fraction, required=True)
    p.add_argument("--strategy", default="ns-opt", help="ns-opt, sns-opt or a strategy file on G^n.")

    p = sub.add_parser("round", help="Round a joint to the closest sub-nonsignalling strategy.")
    p.add_argument("game", help=game_help)
    p.add_argument("--target", default="ns-perturbed", help="ns-perturbed or a joint file.")
    p.add_argument("--shift", type=float, default=0.01)

    p = sub.add_parser("eta", help="Lower and upper bounds on the approximate-NS value.")
    p.add_argument("game", help=game_help)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--restarts", type=int, default=64)

    p = sub.add_parser("sweep", help="Batch audits with a resumable index.")
    p.add_argument("--games", nargs="+", required=True)
    p.add_argument("--n", nargs="+", type=int, required=True)
    p.add_argument("--delta", nargs="+", type=_parse_fraction, required=True)
    p.add_argument("--strategies", nargs="+", choices=STRATEGY_KINDS, default=list(STRATEGY_KINDS))
    return parser


def _emit(report: dict, output: str, stream) -> None:
    if output == "csv":
        frame = pd.json_normalize(report["results"], sep=".")
        if "rows" in report["results"]:
            frame = pd.DataFrame(report["results"]["rows"])
        buffer = io.StringIO()
        frame.to_csv(buffer, index=False)
        stream.write(buffer.getvalue())
    else:
        stream.write(json.dumps(report, indent=2, sort_keys=True) + "\n")


def _store(settings: Settings, game: Game, command: str, argv: Sequence[str], results: dict) -> None:
    store = ReportStore(settings.cache_base, digest(game))
    store.ensure_game_fields(name=game.name, m=game.m, canonical=canonical_json(game))
    store.put(command, " ".join(argv), results)
    store.save()


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    start = time.perf_counter()
    report: dict[str, Any] = {"command": argv, "input_digest": None, "versions": _versions()}
    try:
        settings = Settings.from_env(jobs=args.jobs, tolerance=args.tol, seed=args.seed, cache_base=args.cache)
        logger.debug("command %s with %s", args.command, settings)
        results, game = COMMANDS[args.command](args, settings)
    except NlgameError as exc:
        partial = exc.report if isinstance(exc, AuditFailure) else None
        if partial is not None:
            report.update(results=partial, wall_time=time.perf_counter() - start)
            _emit(report, args.output, sys.stdout)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if game is not None:
        report["input_digest"] = digest(game)
        if args.save:
            _store(settings, game, args.command, argv, results)
    report["results"] = results
    report["wall_time"] = time.perf_counter() - start
    _emit(report, args.output, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
