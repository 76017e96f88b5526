"""
Strategy classes and membership checks.

Strategies are represented as ``Channel`` objects with inputs
``(X_1..X_m)`` and outputs ``(U_1..U_m)``. Deterministic strategies and HVT
mixtures are kept symbolically and converted on demand with ``to_channel``.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from nlgame.game_model import Game, complement, proper_subsets
from nlgame.lp_core import LpBuilder, solve
from nlgame.tensor_core import (
    AlphabetShape,
    Channel,
    query_label,
    repeated_layout,
    response_label,
)

logger = logging.getLogger(__name__)

SubNsWitness = dict[tuple[int, ...], Channel]


@dataclass(frozen=True, eq=False)
class DeterministicStrategy:
    """One response map per party: ``maps[i][x_i] = u_i``."""

    maps: tuple[tuple[int, ...], ...]
    response_sizes: tuple[int, ...]

    def __post_init__(self):
        maps = tuple(tuple(int(u) for u in f) for f in self.maps)
        sizes = tuple(int(s) for s in self.response_sizes)
        if len(maps) != len(sizes):
            raise ValueError(f"{len(maps)} maps given for {len(sizes)} parties")
        for i, (f, s) in enumerate(zip(maps, sizes)):
            if not f:
                raise ValueError(f"Party {i} map is empty")
            if any(u < 0 or u >= s for u in f):
                raise ValueError(f"Party {i} map {f} leaves response alphabet range(0, {s})")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "response_sizes", sizes)

    @classmethod
    def constant(cls, game: Game, value: int = 0) -> "DeterministicStrategy":
        return cls(tuple((value,) * s for s in game.query_sizes), game.response_sizes)

    @property
    def query_sizes(self) -> tuple[int, ...]:
        return tuple(len(f) for f in self.maps)

    def respond(self, x: Sequence[int]) -> tuple[int, ...]:
        return tuple(f[xi] for f, xi in zip(self.maps, x))


@dataclass(frozen=True, eq=False)
class HvtMixture:
    weights: np.ndarray
    components: tuple[DeterministicStrategy, ...]

    def __post_init__(self):
        weights = np.array(self.weights, dtype=float)
        components = tuple(self.components)
        if not components:
            raise ValueError("An HVT mixture needs at least one component")
        if weights.shape != (len(components),):
            raise ValueError(f"{weights.size} weights given for {len(components)} components")
        if np.any(weights < 0) or abs(float(weights.sum()) - 1.0) > 1e-12:
            raise ValueError("Mixture weights must be nonnegative and sum to 1")
        shapes = {(c.query_sizes, c.response_sizes) for c in components}
        if len(shapes) != 1:
            raise ValueError("Mixture components act on different alphabets")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", components)


@dataclass(frozen=True)
class MembershipReport:
    """Outcome of a strategy-class membership check."""

    passed: bool
    max_violation: float
    witness: Any = field(default=None, compare=False)

    def __bool__(self) -> bool:
        return self.passed


def _shapes(query_sizes: Sequence[int], response_sizes: Sequence[int]):
    m = len(query_sizes)
    return (
        AlphabetShape(tuple(query_sizes), tuple(query_label(i) for i in range(m))),
        AlphabetShape(tuple(response_sizes), tuple(response_label(i) for i in range(m))),
    )


def _deterministic_array(s: DeterministicStrategy) -> np.ndarray:
    m = len(s.maps)
    one_hot = [np.eye(r)[list(f)] for f, r in zip(s.maps, s.response_sizes)]
    table = one_hot[0]
    for block in one_hot[1:]:
        table = np.multiply.outer(table, block)
    # outer products interleave (x_i, u_i); move responses last
    perm = [2 * i for i in range(m)] + [2 * i + 1 for i in range(m)]
    return np.transpose(table, perm)


def to_channel(strategy: DeterministicStrategy | HvtMixture, game: Game | None = None) -> Channel:
    """
    The channel induced by a deterministic strategy or an HVT mixture.

    Raises:
        ValueError: if ``game`` is given and its alphabets differ from the strategy's.
    """
    first = strategy if isinstance(strategy, DeterministicStrategy) else strategy.components[0]
    if game is not None and (
        first.query_sizes != game.query_sizes or first.response_sizes != game.response_sizes
    ):
        raise ValueError(
            f"Strategy alphabets {first.query_sizes}/{first.response_sizes} do not match "
            f"game {game.name} ({game.query_sizes}/{game.response_sizes})"
        )
    if isinstance(strategy, DeterministicStrategy):
        array = _deterministic_array(strategy)
    else:
        array = sum(w * _deterministic_array(c) for w, c in zip(strategy.weights, strategy.components))
    q_shape, r_shape = _shapes(first.query_sizes, first.response_sizes)
    return Channel.cleaned(array, q_shape, r_shape, "channel")


def subset_marginal(ch: Channel, subset: Sequence[int]) -> np.ndarray:
    """Array ``P(u_A | x)`` with all input axes followed by the ``U_A`` axes."""
    m = ch.input_shape.ndim
    drop = tuple(m + i for i in range(m) if i not in subset)
    return ch.mass.sum(axis=drop) if drop else np.asarray(ch.mass)


def is_nonsignalling(ch: Channel, tol: float = 1e-9) -> MembershipReport:
    """
    Check that every proper subset's response marginal ignores the other queries.

    The witness of the largest violation is ``(A, x_A + u_A cell)``.
    """
    m = ch.input_shape.ndim
    worst, witness = 0.0, None
    for subset in proper_subsets(m):
        marginal = subset_marginal(ch, subset)
        others = complement(subset, m)
        spread = marginal.max(axis=others) - marginal.min(axis=others)
        if spread.size and float(spread.max()) > worst:
            worst = float(spread.max())
            cell = np.unravel_index(int(np.argmax(spread)), spread.shape)
            witness = (subset, tuple(int(c) for c in cell))
    logger.debug("is_nonsignalling: max violation %.3e", worst)
    return MembershipReport(worst <= tol, worst, witness)


def _dominating_channel(
    ceiling: np.ndarray, x_cells: int, u_cells: int, subset: tuple[int, ...], slack: float
):
    builder = LpBuilder(ceiling.size, name=f"sns-witness-{subset}")
    builder.add_rows(np.kron(np.eye(x_cells), np.ones(u_cells)), "==", 1.0)
    builder.add_rows(np.eye(ceiling.size), ">=", ceiling.reshape(-1) - slack)
    builder.set_upper(slice(None), 1.0)
    return solve(builder.build())


def is_sub_nonsignalling(ch: Channel, tol: float = 1e-9) -> MembershipReport:
    """
    Look for dominating channels ``Q_{U_A|X_A}`` for every proper subset ``A``.

    Each subset gets a feasibility LP over ``Q(u_A|x_A)`` with normalization
    rows and domination rows ``Q(u_A|x_A) >= max_{x_{A^c}} P(u_A|x)``; only
    if that fails is the bound relaxed by ``tol``. The witness is a
    ``SubNsWitness`` when every LP is feasible.
    """
    m = ch.input_shape.ndim
    sums = ch.output_sums()
    worst = max(0.0, float(sums.max(initial=0.0)) - 1.0)
    if worst > tol:
        return MembershipReport(False, worst, None)
    witness: SubNsWitness = {}
    passed = True
    for subset in proper_subsets(m):
        marginal = subset_marginal(ch, subset)
        others = complement(subset, m)
        ceiling = marginal.max(axis=others)
        x_cells = int(np.prod([ch.input_shape.sizes[i] for i in subset]))
        u_cells = ceiling.size // x_cells
        excess = ceiling.reshape(x_cells, u_cells).sum(axis=1) - 1.0
        worst = max(worst, float(excess.max(initial=0.0)))

        solution = _dominating_channel(ceiling, x_cells, u_cells, subset, 0.0)
        if not solution.optimal:
            solution = _dominating_channel(ceiling, x_cells, u_cells, subset, tol)
        if not solution.optimal:
            logger.debug("is_sub_nonsignalling: no witness for A=%s", subset)
            passed = False
            continue
        in_shape = ch.input_shape.select([query_label(i) for i in subset])
        out_shape = ch.output_shape.select([response_label(i) for i in subset])
        witness[subset] = Channel.cleaned(solution.x, in_shape, out_shape, "channel")
    return MembershipReport(passed and worst <= tol, worst, witness if passed else None)


def pr_box() -> Channel:
    """``P(u_1, u_2 | x_1, x_2) = 1/2 * [u_1 xor u_2 == x_1 and x_2]``."""
    array = np.zeros((2, 2, 2, 2))
    for x1, x2, u1, u2 in np.ndindex(2, 2, 2, 2):
        if (u1 ^ u2) == (x1 & x2):
            array[x1, x2, u1, u2] = 0.5
    q_shape, r_shape = _shapes((2, 2), (2, 2))
    return Channel(q_shape, r_shape, array, "channel")


def product_channel(channels: Sequence[Channel]) -> Channel:
    """
    Coordinatewise product of single-copy strategies, laid out with
    party-major repeated letters (the layout of ``RepeatedGame``).
    """
    if not channels:
        raise ValueError("product_channel needs at least one channel")
    first = channels[0]
    for ch in channels[1:]:
        if ch.input_shape != first.input_shape or ch.output_shape != first.output_shape:
            raise ValueError("All factors of a product channel must share alphabets")
    n = len(channels)
    table = np.asarray(first.mass)
    for ch in channels[1:]:
        table = np.multiply.outer(table, ch.mass)
    q_sizes, r_sizes = first.input_shape.sizes, first.output_shape.sizes
    array = repeated_layout(table, q_sizes, r_sizes, n)
    q_shape, r_shape = _shapes(tuple(s**n for s in q_sizes), tuple(s**n for s in r_sizes))
    normalization = (
        "channel" if all(ch.normalization == "channel" for ch in channels) else "subchannel"
    )
    return Channel(q_shape, r_shape, array, normalization)


def random_deterministic(
    query_sizes: Sequence[int], response_sizes: Sequence[int], rng: np.random.Generator
) -> DeterministicStrategy:
    """Uniform draw from the set of deterministic strategy tuples."""
    maps = tuple(
        tuple(int(u) for u in rng.integers(0, r, size=q))
        for q, r in zip(query_sizes, response_sizes)
    )
    return DeterministicStrategy(maps, tuple(response_sizes))


def random_hvt_mixture(
    query_sizes: Sequence[int],
    response_sizes: Sequence[int],
    rng: np.random.Generator,
    components: int = 4,
) -> HvtMixture:
    """Uniform deterministic components with symmetric Dirichlet(1) weights."""
    weights = rng.dirichlet(np.ones(components))
    weights = weights / weights.sum()
    parts = tuple(random_deterministic(query_sizes, response_sizes, rng) for _ in range(components))
    return HvtMixture(weights, parts)
