"""
Numerical audit of the nonsignalling multiprover parallel repetition bound.

The audit replays the information-theoretic argument on a concrete
strategy for ``G^n``: condition the strategy's measure on the threshold
event, follow every inequality from the approximate nonsignalling gap up to
the change-of-measure divergence, single-letterize, and compare with the
approximate-NS value bound. Each inequality is recorded as an
``AuditStep`` with both sides and its slack.

Divergences are in bits; the final repetition bound uses the natural
exponential.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal

import mpmath
import numpy as np

from nlgame.config import DEFAULT_SETTINGS, Settings
from nlgame.exceptions import AuditFailure
from nlgame.game_model import Game, RepeatedGame, complement, proper_subsets, tensor_power, threshold_event
from nlgame.info_measures import (
    approx_ns_check,
    conditional_kl,
    dvar,
    kl,
    pinsker_bound,
    query_labels,
    response_labels,
)
from nlgame.lp_core import LpBuilder, solve
from nlgame.strategy_model import is_sub_nonsignalling, product_channel, subset_marginal
from nlgame.tensor_core import Channel, JointTable, repeated_layout
from nlgame.values import c_prime, marginal_selector, ns_value, sns_program, sns_value, value_of_joint

logger = logging.getLogger(__name__)

EQUALITY_TOL = 1e-9
INEQUALITY_TOL = 1e-9
ROUNDING_TOL = 1e-8

StrategyKind = Literal["ns-opt", "sns-opt"]


@dataclass(frozen=True)
class RepetitionConstants:
    m: int
    c_prime: int
    c: float


def constants(m: int) -> RepetitionConstants:
    """``C'_m = 2 (2^{m+1} - 3)`` and ``C_m = (2 ln 2)(C'_m + 1)^2``."""
    cp = c_prime(m)
    with mpmath.workdps(50):
        c = 2 * mpmath.log(2) * mpmath.mpf(cp + 1) ** 2
    return RepetitionConstants(m, cp, float(c))


def repetition_bound(m: int, n: int, nu: float) -> float:
    """``exp(-n nu^2 / C_m)``: bound on the SNS threshold value when ``Delta >= rho_SNS + nu``."""
    if not 0 < nu <= 1:
        raise ValueError(f"nu must lie in (0, 1], got {nu}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    with mpmath.workdps(50):
        c = 2 * mpmath.log(2) * mpmath.mpf(c_prime(m) + 1) ** 2
        return float(mpmath.exp(-mpmath.mpf(n) * mpmath.mpf(nu) ** 2 / c))


def _joint_array(game: Game | RepeatedGame, strategy: Channel) -> tuple[np.ndarray, np.ndarray]:
    query = game.query.mass
    sizes = tuple(game.query_sizes) + tuple(game.response_sizes)
    if strategy.mass.shape != sizes:
        raise ValueError(f"Strategy of shape {strategy.mass.shape} does not fit game alphabets {sizes}")
    weights = np.asarray(query).reshape(query.shape + (1,) * len(game.response_sizes))
    return weights * np.asarray(strategy.mass), np.asarray(query)


def _labels(m: int) -> list[str]:
    return query_labels(m) + response_labels(m)


@dataclass(frozen=True, eq=False)
class ChangedMeasure:
    """
    Attributes:
        joint: Conditioned distribution over (queries, responses).
        original: The strategy's (possibly subnormalized) joint.
        probability: ``P(C)`` under the original measure.
        exponent: ``log2(1 / P(C))`` in bits.
        divergence: ``D(conditioned || original)`` computed directly.
    """

    joint: JointTable
    original: JointTable
    probability: float
    exponent: float
    divergence: float

    @property
    def identity_gap(self) -> float:
        return abs(self.divergence - self.exponent)


def condition_on_event(
    strategy: Channel, game: Game | RepeatedGame, event: np.ndarray
) -> ChangedMeasure:
    """
    Condition ``P_X * strategy`` on ``event``.

    Raises:
        ValueError: if the event has zero probability under the strategy.
    """
    joint, _ = _joint_array(game, strategy)
    event = np.asarray(event, dtype=bool)
    if event.shape != joint.shape:
        raise ValueError(f"Event of shape {event.shape} does not fit joint {joint.shape}")
    probability = float(joint[event].sum())
    if probability <= 0:
        raise ValueError("Cannot condition on an event of zero probability")
    labels = _labels(len(game.query_sizes))
    original = JointTable.from_array(joint, labels, "subnormalized")
    conditioned = JointTable.normalized(np.where(event, joint, 0.0), labels)
    exponent = -math.log2(probability)
    divergence = kl(conditioned, original)
    logger.debug("condition_on_event: P(C)=%.6g exponent=%.6g bits", probability, exponent)
    return ChangedMeasure(conditioned, original, probability, exponent, divergence)


def _coordinate_digits(joint: JointTable, base_game: Game, n: int) -> np.ndarray:
    """Mass array with one axis per (party, coordinate) digit.

    Query digit ``(i, j)`` sits at axis ``i*n + j``, response digit ``(i, j)``
    at ``m*n + i*n + j``.
    """
    m = base_game.m
    q_sizes, r_sizes = base_game.query_sizes, base_game.response_sizes
    expected = tuple(s**n for s in q_sizes) + tuple(s**n for s in r_sizes)
    ordered = joint.transpose(_labels(m))
    if ordered.shape.sizes != expected:
        raise ValueError(f"Joint sizes {ordered.shape.sizes} are not the {n}-fold sizes {expected}")
    return np.asarray(ordered.mass).reshape(
        tuple(s for s in q_sizes for _ in range(n)) + tuple(s for s in r_sizes for _ in range(n))
    )


def _coordinate_marginal(digits: np.ndarray, m: int, n: int, j: int) -> np.ndarray:
    keep = [i * n + j for i in range(m)] + [m * n + i * n + j for i in range(m)]
    drop = tuple(a for a in range(digits.ndim) if a not in keep)
    return digits.sum(axis=drop) if drop else digits


def _infer_n(joint: JointTable, base_game: Game) -> int:
    sizes = base_game.query_sizes + base_game.response_sizes
    for base, size in zip(sizes, joint.transpose(_labels(base_game.m)).shape.sizes):
        if base > 1:
            return round(math.log(size, base))
    return 1


def per_coordinate_joint(joint: JointTable, base_game: Game, n: int, j: int) -> JointTable:
    """Marginal of coordinate ``j`` (0-based) of an n-fold joint."""
    digits = _coordinate_digits(joint, base_game, n)
    return JointTable.normalized(_coordinate_marginal(digits, base_game.m, n, j), _labels(base_game.m))


def single_letterize(joint: JointTable, base_game: Game, n: int | None = None) -> JointTable:
    """
    Average of the per-coordinate marginals of an n-fold joint laid out with
    party-major letters: the law of ``(X_J, U_J)`` for a uniform coordinate ``J``.
    """
    n = _infer_n(joint, base_game) if n is None else n
    digits = _coordinate_digits(joint, base_game, n)
    total = sum(_coordinate_marginal(digits, base_game.m, n, j) for j in range(n))
    return JointTable.normalized(total / n, _labels(base_game.m))


def power_joint(joint: JointTable, n: int) -> JointTable:
    """n-fold i.i.d. product of a single-copy joint in party-major layout."""
    m = len(joint.labels) // 2
    ordered = joint.transpose(_labels(m))
    sizes = ordered.shape.sizes
    table = np.asarray(ordered.mass)
    for _ in range(n - 1):
        table = np.multiply.outer(table, np.asarray(ordered.mass))
    array = repeated_layout(table, sizes[:m], sizes[m:], n)
    return JointTable.from_array(array, _labels(m), ordered.normalization)


def expected_wins(rg: RepeatedGame, joint: JointTable) -> float:
    ordered = joint.transpose(_labels(rg.m))
    return float(np.sum(rg.wins * np.asarray(ordered.mass)))


@dataclass(frozen=True, eq=False)
class RoundingResult:
    """
    Attributes:
        strategy: The closest sub-nonsignalling subchannel found.
        achieved: ``dvar(target, P_X * strategy)``.
        eps: ``eps_A`` per subset; the empty tuple holds ``eps_empty``.
        bound: ``eps_empty + 2 * sum of eps_A``.
    """

    strategy: Channel
    achieved: float
    eps: dict[tuple[int, ...], float]
    bound: float

    @property
    def passed(self) -> bool:
        return self.achieved <= self.bound + ROUNDING_TOL

    def to_dict(self) -> dict:
        return {
            "achieved": self.achieved,
            "bound": self.bound,
            "eps": {",".join(map(str, a)) or "empty": v for a, v in self.eps.items()},
            "passed": self.passed,
        }


def _local_distance(target: np.ndarray, game: Game, subset: tuple[int, ...]) -> float:
    """``min_Q dvar(P_{U_A X~}, P_X Q_{U_A|X_A})`` by an LP with absolute-value slacks."""
    nx = int(np.prod(game.query_sizes))
    select_x = marginal_selector(game.query_sizes, subset)
    n_xa = select_x.shape[0]
    n_ua = int(np.prod([game.response_sizes[i] for i in subset]))
    # target marginal over (x, u_A), flattened x outer
    drop = tuple(game.m + i for i in complement(subset, game.m))
    t_vec = (target.sum(axis=drop) if drop else target).reshape(-1)
    px = game.query_probs.reshape(-1)

    n_q, n_t = n_xa * n_ua, nx * n_ua
    builder = LpBuilder(n_q + n_t, name=f"eps-{subset}")
    objective = np.zeros(n_q + n_t)
    objective[n_q:] = -1.0
    builder.set_objective(objective)
    norm = np.zeros((n_xa, n_q + n_t))
    norm[:, :n_q] = np.kron(np.eye(n_xa), np.ones(n_ua))
    builder.add_rows(norm, "==", 1.0)
    lift = np.kron(select_x.T * px[:, None], np.eye(n_ua))
    upper = np.hstack([lift, np.eye(n_t)])
    lower = np.hstack([-lift, np.eye(n_t)])
    builder.add_rows(upper, ">=", t_vec)
    builder.add_rows(lower, ">=", -t_vec)
    builder.set_upper(slice(0, n_q), 1.0)
    solution = solve(builder.build())
    if not solution.optimal:
        raise AuditFailure("rounding", f"eps LP for subset {subset} ended {solution.status}")
    return max(0.0, -float(solution.objective))


def round_to_sns(target: JointTable, game: Game) -> RoundingResult:
    """
    Closest sub-nonsignalling strategy to ``target`` in L1, with the
    per-subset distances that bound it.
    """
    m = game.m
    ordered = target.transpose(_labels(m))
    t_arr = np.asarray(ordered.mass)
    if t_arr.shape != game.query_sizes + game.response_sizes:
        raise ValueError("Target does not match the game's alphabets")
    eps: dict[tuple[int, ...], float] = {}
    eps[()] = dvar(ordered.marginalize(query_labels(m)), game.query)
    for subset in proper_subsets(m):
        eps[subset] = _local_distance(t_arr, game, subset)
    bound = eps[()] + 2 * sum(v for a, v in eps.items() if a)

    base, _ = sns_program(game)
    nx = int(np.prod(game.query_sizes))
    nu = int(np.prod(game.response_sizes))
    n_p, n_base = nx * nu, base.num_vars
    builder = LpBuilder(n_base + n_p, name=f"round-{game.name}")
    objective = np.zeros(n_base + n_p)
    objective[n_base:] = -1.0
    builder.set_objective(objective)
    widened = np.hstack([base.matrix, np.zeros((base.num_rows, n_p))])
    for sense in ("<=", "==", ">="):
        rows = [k for k, s in enumerate(base.senses) if s == sense]
        if rows:
            builder.add_rows(widened[rows], sense, base.rhs[rows])
    weights = np.kron(np.diag(game.query_probs.reshape(-1)), np.eye(nu))
    pad = np.zeros((n_p, n_base - n_p))
    t_vec = t_arr.reshape(-1)
    builder.add_rows(np.hstack([weights, pad, np.eye(n_p)]), ">=", t_vec)
    builder.add_rows(np.hstack([-weights, pad, np.eye(n_p)]), ">=", -t_vec)
    builder.set_upper(slice(0, n_base), 1.0)
    solution = solve(builder.build())
    if not solution.optimal:
        raise AuditFailure("rounding", f"rounding LP ended {solution.status}")
    x = np.asarray(solution.x, dtype=float)
    strategy = Channel.cleaned(x[:n_p], game.query_shape, game.response_shape, "subchannel")
    achieved = dvar(ordered, strategy.joint(game.query))
    result = RoundingResult(strategy, achieved, eps, bound)
    logger.debug("round_to_sns %s: achieved %.6g, bound %.6g", game.name, achieved, bound)
    return result


@dataclass(frozen=True)
class AuditStep:
    name: str
    lhs: float | None
    rhs: float | None
    relation: str
    slack: float | None
    passed: bool
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "relation": self.relation,
            "slack": self.slack,
            "passed": self.passed,
            "note": self.note,
        }


def _step(name: str, lhs: float, rhs: float, relation: str, note: str = "") -> AuditStep:
    lhs, rhs = float(lhs), float(rhs)
    if relation == "==":
        slack = -abs(lhs - rhs) if math.isfinite(lhs) or math.isfinite(rhs) else 0.0
        passed = slack >= -EQUALITY_TOL
    else:
        slack = rhs - lhs if math.isfinite(rhs) or math.isfinite(lhs) else 0.0
        passed = slack >= -INEQUALITY_TOL
    if math.isnan(slack):
        passed = False
    return AuditStep(name, lhs, rhs, relation, slack, passed, note)


@dataclass(frozen=True, eq=False)
class AuditReport:
    game: str
    n: int
    delta: float
    probability: float
    exponent: float
    steps: list[AuditStep] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(s.passed for s in self.steps)

    def failed_steps(self) -> list[AuditStep]:
        return [s for s in self.steps if not s.passed]

    def to_dict(self) -> dict:
        return {
            "game": self.game,
            "n": self.n,
            "delta": self.delta,
            "probability": self.probability,
            "exponent": self.exponent,
            "passed": self.passed,
            "steps": [s.to_dict() for s in self.steps],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _subset_chain(
    measure: ChangedMeasure,
    strategy: Channel,
    rg: RepeatedGame,
    subset: tuple[int, ...],
    gap: float,
    q_witness: Channel,
) -> list[AuditStep]:
    m = rg.m
    tag = ",".join(str(i + 1) for i in subset)
    p_tilde = np.asarray(measure.joint.mass)
    drop_u = tuple(m + i for i in complement(subset, m))
    pt_ua_x = p_tilde.sum(axis=drop_u) if drop_u else p_tilde
    pt_x = p_tilde.sum(axis=tuple(range(m, 2 * m)))
    others = complement(subset, m)
    pt_xa = pt_x.sum(axis=others, keepdims=True)
    pt_ua_xa = pt_ua_x.sum(axis=others, keepdims=True)
    pt_x_b = pt_x.reshape(pt_x.shape + (1,) * len(subset))
    pt_xa_b = pt_xa.reshape(pt_xa.shape + (1,) * len(subset))
    with np.errstate(invalid="ignore", divide="ignore"):
        cond_full = np.where(pt_x_b > 0, pt_ua_x / np.where(pt_x_b > 0, pt_x_b, 1.0), 0.0)
        cond_local = np.where(pt_xa_b > 0, pt_ua_xa / np.where(pt_xa_b > 0, pt_xa_b, 1.0), 0.0)
    q_lifted = np.expand_dims(np.asarray(q_witness.mass), axis=others) if others else np.asarray(q_witness.mass)
    strategy_marginal = subset_marginal(strategy, subset)

    query_div = kl(measure.joint.marginalize(query_labels(m)), rg.query)
    local_to_q = conditional_kl(pt_ua_x, cond_local, q_lifted)
    full_to_q = conditional_kl(pt_ua_x, cond_full, q_lifted)
    full_to_strategy = conditional_kl(pt_ua_x, cond_full, strategy_marginal)
    px = np.asarray(rg.query.mass).reshape(rg.query_sizes + (1,) * len(subset))
    p_ua_x = px * strategy_marginal
    marginal_div = kl(
        JointTable.from_array(pt_ua_x, query_labels(m) + response_labels(m, subset)),
        JointTable.from_array(p_ua_x, query_labels(m) + response_labels(m, subset), "subnormalized"),
    )
    return [
        _step(f"chain[{tag}]: gap <= gap + D(local || Q)", gap, gap + local_to_q, "<="),
        _step(f"chain[{tag}]: conditional identity", gap + local_to_q, full_to_q + query_div, "=="),
        _step(
            f"chain[{tag}]: domination by Q", full_to_q + query_div, full_to_strategy + query_div, "<=",
            "uses the sub-nonsignalling witness",
        ),
        _step(f"chain[{tag}]: chain rule", full_to_strategy + query_div, marginal_div, "=="),
        _step(f"chain[{tag}]: marginalization", marginal_div, measure.divergence, "<="),
    ]


def audit_repetition(
    game: Game,
    n: int,
    delta: float | Fraction,
    strategy: Channel,
    *,
    sns: float | None = None,
    settings: Settings = DEFAULT_SETTINGS,
) -> AuditReport:
    """
    Replay the repetition argument on ``strategy`` for ``G^n`` at threshold ``delta``.

    Raises:
        AuditFailure: if the strategy is not sub-nonsignalling, does not fit
            the repeated game, or wins the threshold event with probability 0.
    """
    rg = tensor_power(game, n, settings)
    if strategy.mass.shape != rg.query_sizes + rg.response_sizes:
        raise AuditFailure(
            "precondition",
            f"strategy shape {strategy.mass.shape} does not fit {game.name}^{n}",
        )
    membership = is_sub_nonsignalling(strategy, tol=settings.tolerance)
    if not membership.passed:
        raise AuditFailure(
            "precondition",
            f"strategy is not sub-nonsignalling (max violation {membership.max_violation:.3e})",
        )
    event = threshold_event(rg, delta)
    try:
        measure = condition_on_event(strategy, rg, event)
    except ValueError as exc:
        raise AuditFailure("precondition", str(exc)) from exc

    delta_f = float(delta)
    exponent = measure.exponent / n
    report = AuditReport(game.name, n, delta_f, measure.probability, exponent)
    steps = report.steps
    steps.append(_step("change of measure: D(P~ || P) = log 1/P(C)", measure.divergence, measure.exponent, "=="))

    gaps = approx_ns_check(measure.joint, rg.as_game(), 0.0).gaps
    for subset in proper_subsets(rg.m):
        steps.extend(_subset_chain(measure, strategy, rg, subset, gaps[subset], membership.witness[subset]))

    wins = expected_wins(rg, measure.joint)
    steps.append(_step("threshold holds surely: n*Delta <= E[N]", n * delta_f, wins, "<="))

    letter = single_letterize(measure.joint, game, n)
    per_copy = value_of_joint(game, letter)
    steps.append(_step("additivity: E[N] = n * E[omega(J)]", wins, n * per_copy, "=="))
    steps.append(
        AuditStep(
            "superadditivity of the n-fold gap", None, None, "cited", None, True,
            "cited_external: validated only through single-letter feasibility",
        )
    )
    letter_report = approx_ns_check(letter, game, exponent)
    steps.append(_step("single-letter feasibility: max gap <= exponent", letter_report.max_gap, exponent, "<="))
    steps.append(_step("single-letter value: Delta <= E[omega(J)]", delta_f, per_copy, "<="))

    rho = sns_value(game, settings=settings).value if sns is None else sns
    slack_term = c_prime(game.m) * pinsker_bound(max(exponent, 0.0))
    steps.append(_step("approximate-NS value bound", per_copy, rho + slack_term, "<="))
    steps.append(_step("contrapositive: Delta <= rho_SNS + C' sqrt(2 ln2 exponent)", delta_f, rho + slack_term, "<="))

    if delta_f > rho:
        nu = min(delta_f - rho, 1.0)
        bound = repetition_bound(game.m, n, nu)
        steps.append(_step("repetition bound: P(C) <= exp(-n nu^2 / C_m)", measure.probability, bound, "<="))
    else:
        steps.append(
            AuditStep(
                "repetition bound: P(C) <= exp(-n nu^2 / C_m)", None, None, "n/a", None, True,
                f"not applicable: Delta={delta_f:.9g} <= rho_SNS={rho:.9g}",
            )
        )
    for s in steps:
        logger.debug("audit %s: %s (slack %s)", s.name, "pass" if s.passed else "FAIL", s.slack)
    return report


def product_optimum(
    game: Game, n: int, kind: StrategyKind, settings: Settings = DEFAULT_SETTINGS
) -> Channel:
    """n-fold product of the single-game NS or SNS optimizer, on ``G^n``'s alphabets."""
    if kind == "ns-opt":
        single = ns_value(game, settings=settings).witness
    elif kind == "sns-opt":
        single = sns_value(game, settings=settings).witness
    else:
        raise ValueError(f"Unknown strategy kind {kind!r}. Available: ['ns-opt', 'sns-opt']")
    tensor_power(game, n, settings)
    return product_channel([single] * n)


def perturbed_target(game: Game, shift: float, rng: np.random.Generator) -> JointTable:
    """``P_X`` times the NS optimum plus ``shift`` on one random cell, renormalized."""
    if shift < 0:
        raise ValueError(f"shift must be nonnegative, got {shift}")
    base = ns_value(game).witness.joint(game.query)
    mass = np.array(base.mass, dtype=float)
    cell = tuple(int(rng.integers(0, s)) for s in mass.shape)
    mass[cell] += shift
    return JointTable.normalized(mass, base.labels)
