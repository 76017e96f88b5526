"""
Game values under the classical, nonsignalling and sub-nonsignalling
strategy classes, threshold values of repeated games, and bounds on the
value of delta-approximate nonsignalling distributions.

LP variables for a channel ``P(u|x)`` are flattened with ``x`` outer and
``u`` inner, following the tensor_core convention.
"""

import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Literal, Sequence

import numpy as np
from tqdm import tqdm

from nlgame.config import DEFAULT_SETTINGS, Settings
from nlgame.exceptions import BudgetExceededError, SolverError
from nlgame.game_model import Game, proper_subsets, tensor_power
from nlgame.info_measures import approx_ns_check, pinsker_bound
from nlgame.lp_core import LinearProgram, LpBuilder, LpSolution, solve, solve_exact
from nlgame.strategy_model import DeterministicStrategy, to_channel
from nlgame.tensor_core import Channel, JointTable

logger = logging.getLogger(__name__)

StrategyClass = Literal["ns", "sns"]


def c_prime(m: int) -> int:
    """Slack multiplier ``2 (2^{m+1} - 3)`` of the approximate-NS value bound."""
    if m < 2:
        raise ValueError(f"Party count must be >= 2, got {m}")
    return 2 * (2 ** (m + 1) - 3)


@dataclass(frozen=True, eq=False)
class ValueResult:
    """
    Attributes:
        value: The computed value (a raw bound may exceed 1).
        witness: Optimizer (Channel, DeterministicStrategy or JointTable).
        status: Solver status or ``"enumerated"``/``"search"``.
        residual: Max constraint residual of the LP witness (0 otherwise).
        runtime: Wall time in seconds.
        exact_value: Exact rational value when available.
        extra: Method-specific details (e.g. SNS witnesses, LP sizes).
    """

    value: float
    witness: Any
    status: str
    residual: float = 0.0
    runtime: float = 0.0
    exact_value: Fraction | None = None
    extra: dict = field(default_factory=dict)


def value_of_channel(game: Game, ch: Channel) -> float:
    """``sum_x P_X(x) sum_u ch(u|x) omega(x, u)``."""
    expected = game.query_sizes + game.response_sizes
    if ch.mass.shape != expected:
        raise ValueError(f"Channel of shape {ch.mass.shape} does not fit game {game.name} {expected}")
    return float(np.sum(game.weighted_predicate() * ch.mass))


def value_of_joint(game: Game, joint: JointTable) -> float:
    """``E[omega(X~, U~)]`` for a joint laid out as (queries, responses)."""
    return float(np.sum(game.predicate * np.asarray(joint.mass)))


def _exact_value(game: Game, strategy: DeterministicStrategy) -> Fraction:
    exact = game.query_fractions()
    total = Fraction(0)
    for x in np.ndindex(*game.query_sizes):
        if game.predicate[x + strategy.respond(x)]:
            total += exact[x]
    return total


def _function_tables(q: int, r: int):
    return itertools.product(range(r), repeat=q)


def _strategy_count(game: Game) -> int:
    return math.prod(r**q for q, r in zip(game.query_sizes, game.response_sizes))


def classical_value(game: Game, settings: Settings = DEFAULT_SETTINGS) -> ValueResult:
    """
    Exact classical value by enumerating deterministic strategies.

    The last party's map is optimized pointwise for every choice of the
    other maps, so only ``prod_{i<m} |U_i|^{|X_i|}`` tuples are visited.

    Raises:
        BudgetExceededError: if the strategy count exceeds
            ``settings.enumeration_budget``.
    """
    start = time.perf_counter()
    count = _strategy_count(game)
    if count > settings.enumeration_budget:
        raise BudgetExceededError(
            f"classical enumeration of {game.name}", count, settings.enumeration_budget,
            "use ns_value or sns_value for an LP upper bound",
        )
    m = game.m
    weighted = game.weighted_predicate()
    last_q = game.query_sizes[-1]
    best_value, best_maps = -1.0, None
    heads = [_function_tables(q, r) for q, r in zip(game.query_sizes[:-1], game.response_sizes[:-1])]
    for maps in itertools.product(*heads):
        table = weighted
        # contract parties 0..m-2 by gathering u_i = f_i(x_i); the party axis
        # stays at position 0 of the remaining query axes after each step
        for i, f in enumerate(maps):
            u_axis = m - i
            gathered = np.take(table, list(f), axis=u_axis)
            table = np.diagonal(gathered, axis1=0, axis2=u_axis).sum(axis=-1)
        # table axes: (x_m, u_m) after summing the other queries
        table = table.reshape(last_q, game.response_sizes[-1])
        last = np.argmax(table, axis=1)
        value = float(table[np.arange(last_q), last].sum())
        if value > best_value + 1e-12:
            best_value = value
            best_maps = maps + (tuple(int(u) for u in last),)
    strategy = DeterministicStrategy(best_maps, game.response_sizes)
    exact = _exact_value(game, strategy)
    logger.debug("classical_value %s: %s over %d tuples", game.name, exact, count)
    return ValueResult(
        float(exact), strategy, "enumerated", 0.0, time.perf_counter() - start, exact,
        {"strategies": count},
    )


def _flat_sizes(game: Game) -> tuple[int, int]:
    return math.prod(game.query_sizes), math.prod(game.response_sizes)


def marginal_selector(sizes: Sequence[int], subset: Sequence[int]) -> np.ndarray:
    """0/1 matrix summing a flat table over ``sizes`` down to the ``subset`` axes."""
    total = math.prod(sizes)
    idx = np.unravel_index(np.arange(total), tuple(sizes))
    sub_sizes = tuple(sizes[i] for i in subset)
    rows = np.ravel_multi_index(tuple(idx[i] for i in subset), sub_sizes) if subset else np.zeros(total, dtype=int)
    selector = np.zeros((math.prod(sub_sizes), total))
    selector[rows, np.arange(total)] = 1.0
    return selector


def _reference_rows(sizes: Sequence[int], subset: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    """For every query ``x`` off the reference slice, its index and that of ``(x_A, 0)``."""
    total = math.prod(sizes)
    idx = np.unravel_index(np.arange(total), tuple(sizes))
    ref = [idx[i] if i in subset else np.zeros(total, dtype=int) for i in range(len(sizes))]
    ref_flat = np.ravel_multi_index(tuple(ref), tuple(sizes))
    moved = np.nonzero(ref_flat != np.arange(total))[0]
    return moved, ref_flat[moved]


def _objective(game: Game, exact: bool) -> np.ndarray:
    if not exact:
        return game.weighted_predicate().reshape(-1)
    q = game.query_fractions().reshape(game.query_sizes + (1,) * game.m)
    return (q * game.predicate.astype(int)).reshape(-1)


def _with_objective(lp: LinearProgram, objective: np.ndarray, exact: bool) -> LinearProgram:
    if not exact:
        return lp
    return replace(lp.to_exact(), objective=np.array(objective, dtype=object))


def _check_lp_budget(what: str, variables: int, settings: Settings) -> None:
    if variables > settings.lp_variable_budget:
        raise BudgetExceededError(
            what, variables, settings.lp_variable_budget,
            "the dense tableau grows quadratically; lower n or the alphabets",
        )


def ns_program(game: Game, exact: bool = False) -> LinearProgram:
    """LP over ``P(u|x)``: normalization rows plus NS equality rows for every proper subset."""
    nx, nu = _flat_sizes(game)
    builder = LpBuilder(nx * nu, name=f"ns-{game.name}")
    builder.set_objective(game.weighted_predicate().reshape(-1))
    builder.add_rows(np.kron(np.eye(nx), np.ones(nu)), "==", 1.0)
    for subset in proper_subsets(game.m):
        select_u = marginal_selector(game.response_sizes, subset)
        moved, ref = _reference_rows(game.query_sizes, subset)
        if moved.size == 0:
            continue
        n_ua = select_u.shape[0]
        block = np.zeros((moved.size * n_ua, nx * nu))
        for k, (x, x_ref) in enumerate(zip(moved, ref)):
            rows = slice(k * n_ua, (k + 1) * n_ua)
            block[rows, x * nu:(x + 1) * nu] += select_u
            block[rows, x_ref * nu:(x_ref + 1) * nu] -= select_u
        builder.add_rows(block, "==", 0.0)
    builder.set_upper(slice(None), 1.0)
    return _with_objective(builder.build(), _objective(game, exact), exact)


def sns_program(game: Game, exact: bool = False) -> tuple[LinearProgram, dict]:
    """
    LP over a subchannel ``P(u|x)`` plus one channel ``Q_A(u_A|x_A)`` per
    proper subset, with domination rows ``P(u_A|x) <= Q_A(u_A|x_A)``.

    Returns the program and the column offsets of each ``Q_A`` block.
    """
    nx, nu = _flat_sizes(game)
    subsets = proper_subsets(game.m)
    offsets, cursor = {}, nx * nu
    for subset in subsets:
        size = math.prod(game.query_sizes[i] for i in subset) * math.prod(
            game.response_sizes[i] for i in subset
        )
        offsets[subset] = (cursor, size)
        cursor += size
    builder = LpBuilder(cursor, name=f"sns-{game.name}")
    objective = np.zeros(cursor)
    objective[: nx * nu] = game.weighted_predicate().reshape(-1)
    builder.set_objective(objective)

    sub = np.zeros((nx, cursor))
    sub[:, : nx * nu] = np.kron(np.eye(nx), np.ones(nu))
    builder.add_rows(sub, "<=", 1.0)
    for subset in subsets:
        start, size = offsets[subset]
        select_u = marginal_selector(game.response_sizes, subset)
        select_x = marginal_selector(game.query_sizes, subset)
        n_xa, n_ua = select_x.shape[0], select_u.shape[0]
        norm = np.zeros((n_xa, cursor))
        norm[:, start:start + size] = np.kron(np.eye(n_xa), np.ones(n_ua))
        builder.add_rows(norm, "==", 1.0)
        dom = np.zeros((nx * n_ua, cursor))
        dom[:, : nx * nu] = np.kron(np.eye(nx), select_u)
        dom[:, start:start + size] = -np.kron(select_x.T, np.eye(n_ua))
        builder.add_rows(dom, "<=", 0.0)
    builder.set_upper(slice(None), 1.0)
    exact_objective = None
    if exact:
        exact_objective = np.array([Fraction(0)] * cursor, dtype=object)
        exact_objective[: nx * nu] = _objective(game, True)
    return _with_objective(builder.build(), exact_objective, exact), offsets


def _solved(lp: LinearProgram, exact: bool) -> LpSolution:
    solution = solve_exact(lp) if exact else solve(lp)
    if not solution.optimal:
        raise SolverError(f"LP {lp.name} ended with status {solution.status}")
    return solution


def _channel_from(game: Game, x: np.ndarray, normalization: str) -> Channel:
    values = np.asarray(x, dtype=float)
    return Channel.cleaned(values, game.query_shape, game.response_shape, normalization)


def ns_value(
    game: Game, *, exact: bool = False, settings: Settings = DEFAULT_SETTINGS
) -> ValueResult:
    """
    Nonsignalling value by linear programming.

    Raises:
        BudgetExceededError: if the channel has more than
            ``settings.lp_variable_budget`` cells.
        SolverError: if the LP is not solved to optimality.
    """
    start = time.perf_counter()
    nx, nu = _flat_sizes(game)
    _check_lp_budget(f"ns LP of {game.name}", nx * nu, settings)
    lp = ns_program(game, exact)
    solution = _solved(lp, exact)
    witness = _channel_from(game, solution.x, "channel")
    exact_value = solution.objective if exact else None
    value = float(solution.objective)
    logger.debug("ns_value %s: %.12g (%d iterations)", game.name, value, solution.iterations)
    return ValueResult(
        value, witness, solution.status, solution.residual, time.perf_counter() - start,
        exact_value, {"variables": lp.num_vars, "rows": lp.num_rows, "iterations": solution.iterations},
    )


def sns_value(
    game: Game, *, exact: bool = False, settings: Settings = DEFAULT_SETTINGS
) -> ValueResult:
    """
    Sub-nonsignalling value by linear programming; ``extra["witnesses"]``
    holds the dominating channels ``Q_A``.
    """
    start = time.perf_counter()
    lp_probe_vars = _flat_sizes(game)[0] * _flat_sizes(game)[1]
    _check_lp_budget(f"sns LP of {game.name}", lp_probe_vars, settings)
    lp, offsets = sns_program(game, exact)
    _check_lp_budget(f"sns LP of {game.name}", lp.num_vars, settings)
    solution = _solved(lp, exact)
    nx, nu = _flat_sizes(game)
    x = np.asarray(solution.x, dtype=float)
    witness = _channel_from(game, x[: nx * nu], "subchannel")
    witnesses = {}
    for subset, (offset, size) in offsets.items():
        in_shape = game.query_shape.select([game.query_shape.labels[i] for i in subset])
        out_shape = game.response_shape.select([game.response_shape.labels[i] for i in subset])
        witnesses[subset] = Channel.cleaned(x[offset:offset + size], in_shape, out_shape, "channel")
    value = float(solution.objective)
    logger.debug("sns_value %s: %.12g (%d iterations)", game.name, value, solution.iterations)
    return ValueResult(
        value, witness, solution.status, solution.residual, time.perf_counter() - start,
        solution.objective if exact else None,
        {
            "variables": lp.num_vars,
            "rows": lp.num_rows,
            "iterations": solution.iterations,
            "witnesses": witnesses,
        },
    )


def classical_lp_value(
    game: Game, *, exact: bool = False, settings: Settings = DEFAULT_SETTINGS
) -> ValueResult:
    """
    Classical value as an LP over mixtures of deterministic strategies.

    Equal to :func:`classical_value`; the optimum mixture is returned as the
    witness channel.
    """
    start = time.perf_counter()
    count = _strategy_count(game)
    _check_lp_budget(f"HVT LP of {game.name}", count, settings)
    tables = [list(_function_tables(q, r)) for q, r in zip(game.query_sizes, game.response_sizes)]
    vertices = [DeterministicStrategy(maps, game.response_sizes) for maps in itertools.product(*tables)]
    builder = LpBuilder(len(vertices), name=f"hvt-{game.name}")
    channels = [to_channel(v) for v in vertices]
    builder.set_objective(np.array([value_of_channel(game, ch) for ch in channels]))
    builder.add_rows(np.ones(len(vertices)), "==", 1.0)
    lp = builder.build()
    if exact:
        lp = replace(lp.to_exact(), objective=np.array([_exact_value(game, v) for v in vertices], dtype=object))
    solution = _solved(lp, exact)
    weights = np.asarray(solution.x, dtype=float)
    mixture = sum(w * ch.mass for w, ch in zip(weights, channels))
    witness = _channel_from(game, mixture, "channel")
    return ValueResult(
        float(solution.objective), witness, solution.status, solution.residual,
        time.perf_counter() - start, solution.objective if exact else None,
        {"vertices": len(vertices)},
    )


def threshold_value(
    game: Game,
    n: int,
    delta: float | Fraction,
    strategy_class: StrategyClass = "ns",
    *,
    exact: bool = False,
    settings: Settings = DEFAULT_SETTINGS,
) -> ValueResult:
    """
    Value of the threshold game ``G^{n,Delta}`` (win iff at least
    ``n*Delta`` coordinates win) under the NS or SNS class.
    """
    if strategy_class not in ("ns", "sns"):
        raise ValueError(f"Unknown strategy class {strategy_class!r}. Available: ['ns', 'sns']")
    rg = tensor_power(game, n, settings)
    _check_lp_budget(f"threshold LP of {game.name} (n={n})", rg.cells, settings)
    threshold = rg.threshold_game(delta)
    solver = ns_value if strategy_class == "ns" else sns_value
    result = solver(threshold, exact=exact, settings=settings)
    result.extra.update({"n": n, "delta": float(delta), "class": strategy_class})
    return result


def eta_upper_bound(game: Game, delta: float, sns: float | None = None) -> float:
    """``rho_SNS(G) + C'_m * sqrt(2 ln 2 * delta)``; may exceed 1."""
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    base = sns_value(game).value if sns is None else sns
    return base + c_prime(game.m) * pinsker_bound(delta)


def anchor_joint(game: Game, ns: ValueResult | None = None) -> JointTable:
    """``P_X`` times the NS-optimal channel: always exactly nonsignalling."""
    ns = ns_value(game) if ns is None else ns
    return ns.witness.joint(game.query)


def _mix(a: np.ndarray, b: np.ndarray, weight: float, labels) -> JointTable:
    return JointTable.normalized((1 - weight) * a + weight * b, labels)


def _pull_toward(
    game: Game, start: JointTable, proposal: np.ndarray, delta: float, steps: int = 20
) -> tuple[JointTable, float]:
    """Largest feasible mixing weight found by bisection from a feasible ``start``."""
    base = np.asarray(start.mass)
    full = _mix(base, proposal, 1.0, start.labels)
    if approx_ns_check(full, game, delta).passed:
        return full, 1.0
    lo, hi, best = 0.0, 1.0, start
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        candidate = _mix(base, proposal, mid, start.labels)
        if approx_ns_check(candidate, game, delta).passed:
            lo, best = mid, candidate
        else:
            hi = mid
    return best, lo


def _point_mass_candidates(game: Game, delta: float) -> list[JointTable]:
    """Joints with ``X~`` a point mass on ``x`` and the best response at ``x``."""
    found = []
    labels = game.query_shape.labels + game.response_shape.labels
    for x in np.ndindex(*game.query_sizes):
        px = game.query_probs[x]
        if px <= 0 or math.log2(1.0 / px) > delta + 1e-12:
            continue
        responses = game.predicate[x]
        u = np.unravel_index(int(np.argmax(responses)), responses.shape)
        mass = np.zeros(game.query_sizes + game.response_sizes)
        mass[x + tuple(int(c) for c in u)] = 1.0
        found.append(JointTable.from_array(mass, labels))
    return found


def _query_support(game: Game) -> np.ndarray:
    return (game.query_probs > 0).reshape(game.query_sizes + (1,) * len(game.response_sizes))


def _search_restart(
    game: Game, anchor: JointTable, delta: float, seed: int, restart: int, steps: int
) -> JointTable:
    rng = np.random.default_rng([seed, restart])
    current = anchor
    current_value = value_of_joint(game, current)
    for _ in range(steps):
        theta = rng.exponential(2.0)
        noise = rng.normal(0.0, 0.5, size=current.mass.shape)
        tilted = np.asarray(current.mass) * np.exp(theta * game.predicate + noise)
        spread = rng.dirichlet(np.ones(tilted.size)).reshape(tilted.shape) * _query_support(game)
        proposal = tilted / tilted.sum() + 1e-3 * spread
        candidate, _ = _pull_toward(game, current, proposal / proposal.sum(), delta)
        value = value_of_joint(game, candidate)
        if value > current_value:
            current, current_value = candidate, value
    return current


def eta_lower_search(
    game: Game,
    delta: float,
    restarts: int = 64,
    seed: int = 0,
    *,
    steps: int = 8,
    jobs: int = 1,
    progress: bool = False,
    ns: ValueResult | None = None,
) -> ValueResult:
    """
    Certified lower bound on the best expected win over delta-approximate
    nonsignalling distributions.

    Starts from ``P_X`` times the NS optimum and from point-mass witnesses,
    then runs seeded multi-start exponential tilting with bisection back
    toward the current feasible point. The best point is re-verified with
    :func:`approx_ns_check` before it is returned.
    """
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    start = time.perf_counter()
    ns = ns_value(game) if ns is None else ns
    anchor = anchor_joint(game, ns)
    candidates = [anchor]
    if delta > 0:
        candidates += _point_mass_candidates(game, delta)

        def run(r: int) -> JointTable:
            return _search_restart(game, anchor, delta, seed, r, steps)

        indices = range(restarts)
        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                found = list(tqdm(pool.map(run, indices), total=restarts, disable=not progress, desc="eta search"))
        else:
            found = [run(r) for r in tqdm(indices, disable=not progress, desc="eta search")]
        candidates += found

    best_index, best_value = 0, -1.0
    for k, joint in enumerate(candidates):
        value = value_of_joint(game, joint)
        if value > best_value + 1e-15:
            best_index, best_value = k, value
    best = candidates[best_index]
    report = approx_ns_check(best, game, delta)
    if not report.passed:
        raise SolverError(
            f"eta search returned an infeasible point (max gap {report.max_gap:.3e} > {delta})"
        )
    logger.debug("eta_lower_search %s delta=%g: %.9g", game.name, delta, best_value)
    return ValueResult(
        best_value, best, "search", 0.0, time.perf_counter() - start, None,
        {"candidates": len(candidates), "max_gap": report.max_gap, "delta": delta},
    )


def sample_approx_ns_joints(
    game: Game,
    delta: float,
    count: int,
    rng: np.random.Generator,
    anchor: JointTable | None = None,
) -> list[JointTable]:
    """
    Random certified delta-approximate nonsignalling joints.

    Each sample is a uniform Dirichlet joint on the support of ``P_X``, pulled
    toward ``anchor`` (``P_X`` times the NS optimum by default) until
    membership holds.
    """
    anchor = anchor_joint(game) if anchor is None else anchor
    base = np.asarray(anchor.mass)
    support = _query_support(game)
    samples = []
    for _ in range(count):
        proposal = rng.dirichlet(np.ones(base.size)).reshape(base.shape) * support
        proposal = proposal / proposal.sum()
        joint, _ = _pull_toward(game, anchor, proposal, delta)
        samples.append(joint)
    return samples
