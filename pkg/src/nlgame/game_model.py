"""
Multiprover games, their parallel repetitions and the builtin catalogue.

A ``Game`` holds the query distribution ``P_X`` over the parties' query
alphabets and a dense 0/1 predicate table with axes
``(X_1, ..., X_m, U_1, ..., U_m)``. ``RepeatedGame`` builds the n-fold
version with party-major letters: party ``i`` answers one letter that
encodes its whole tuple ``(x_{i,1}, ..., x_{i,n})``.
"""

import itertools
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from nlgame.config import BUDGET_ENV_VAR, DEFAULT_SETTINGS, Settings
from nlgame.exceptions import BudgetExceededError, GameValidationError
from nlgame.tensor_core import (
    AlphabetShape,
    JointTable,
    MASS_TOL,
    party_major,
    query_label,
    repeated_layout,
    response_label,
)

logger = logging.getLogger(__name__)


def proper_subsets(m: int) -> list[tuple[int, ...]]:
    """Nonempty proper subsets of ``range(m)``, by size then lexicographically."""
    return [
        subset
        for size in range(1, m)
        for subset in itertools.combinations(range(m), size)
    ]


def complement(subset: Sequence[int], m: int) -> tuple[int, ...]:
    return tuple(i for i in range(m) if i not in subset)


@dataclass(frozen=True)
class Violation:
    kind: str
    cell: tuple[int, ...] | None
    value: float

    def __str__(self) -> str:
        where = f" at cell {self.cell}" if self.cell is not None else ""
        return f"{self.kind}{where} (value {self.value!r})"


@dataclass(frozen=True, eq=False)
class Game:
    """
    A game ``G = (P_X, omega)``.

    Attributes:
        query_probs: Query masses, one axis per party.
        predicate: Win table with axes ``(X_1..X_m, U_1..U_m)``.
        response_sizes: Response alphabet size per party.
        name: Display name.
        exact_query: Optional object array of ``Fraction`` mirroring
            ``query_probs`` exactly.
    """

    query_probs: np.ndarray
    predicate: np.ndarray
    response_sizes: tuple[int, ...]
    name: str = "game"
    exact_query: np.ndarray | None = None

    def __post_init__(self):
        query = np.array(self.query_probs, dtype=float, copy=True)
        predicate = np.array(self.predicate, dtype=float, copy=True)
        sizes = tuple(int(s) for s in self.response_sizes)
        expected = query.shape + sizes
        if predicate.shape != expected:
            try:
                predicate = predicate.reshape(expected)
            except ValueError:
                raise GameValidationError(
                    [Violation("predicate_shape", None, float(predicate.size))]
                ) from None
        query.setflags(write=False)
        predicate.setflags(write=False)
        object.__setattr__(self, "query_probs", query)
        object.__setattr__(self, "predicate", predicate)
        object.__setattr__(self, "response_sizes", sizes)
        if self.exact_query is not None:
            exact = np.array(self.exact_query, dtype=object).reshape(query.shape)
            exact.setflags(write=False)
            object.__setattr__(self, "exact_query", exact)

    @classmethod
    def from_exact(
        cls,
        exact_query: np.ndarray,
        predicate: np.ndarray,
        response_sizes: Sequence[int],
        name: str = "game",
    ) -> "Game":
        exact = np.array(exact_query, dtype=object)
        floats = np.vectorize(float, otypes=[float])(exact)
        return cls(floats, predicate, tuple(response_sizes), name, exact)

    @property
    def m(self) -> int:
        return self.query_probs.ndim

    @property
    def query_sizes(self) -> tuple[int, ...]:
        return tuple(self.query_probs.shape)

    @property
    def query_shape(self) -> AlphabetShape:
        return AlphabetShape(self.query_sizes, tuple(query_label(i) for i in range(self.m)))

    @property
    def response_shape(self) -> AlphabetShape:
        return AlphabetShape(
            self.response_sizes, tuple(response_label(i) for i in range(self.m))
        )

    @property
    def query(self) -> JointTable:
        return JointTable(self.query_shape, self.query_probs, "distribution")

    def query_fractions(self) -> np.ndarray:
        """Exact query masses; binary64 masses are converted without rounding."""
        if self.exact_query is not None:
            return self.exact_query
        return np.vectorize(Fraction, otypes=[object])(self.query_probs)

    def weighted_predicate(self) -> np.ndarray:
        """``P_X(x) * omega(x, u)`` with the predicate's axes."""
        k = self.m
        return self.query_probs.reshape(self.query_sizes + (1,) * k) * self.predicate

    def with_predicate(self, predicate: np.ndarray, name: str | None = None) -> "Game":
        return Game(
            self.query_probs,
            predicate,
            self.response_sizes,
            name or self.name,
            self.exact_query,
        )


def find_violations(game: Game) -> list[Violation]:
    """Every reason ``game`` is not a well-formed game (empty when valid)."""
    found: list[Violation] = []
    if game.m < 2:
        found.append(Violation("too_few_parties", None, float(game.m)))
    if len(game.response_sizes) != game.m:
        found.append(Violation("response_rank", None, float(len(game.response_sizes))))
    for i, s in enumerate(game.query_sizes + game.response_sizes):
        if s < 1:
            found.append(Violation("empty_alphabet", (i,), float(s)))
    q = game.query_probs
    for cell in np.argwhere(~np.isfinite(q) | (q < 0)):
        found.append(Violation("negative_mass", tuple(int(c) for c in cell), float(q[tuple(cell)])))
    if game.exact_query is not None:
        total = sum(game.exact_query.reshape(-1), Fraction(0))
        if total != 1:
            found.append(Violation("query_not_normalized", None, float(total)))
    elif abs(float(q.sum()) - 1.0) > MASS_TOL:
        found.append(Violation("query_not_normalized", None, float(q.sum())))
    p = game.predicate
    for cell in np.argwhere((p != 0) & (p != 1)):
        found.append(Violation("non_binary_predicate", tuple(int(c) for c in cell), float(p[tuple(cell)])))
    return found


def validate(game: Game) -> Game:
    """
    Return ``game`` unchanged if it is well formed.

    Raises:
        GameValidationError: listing every violation with its cell.
    """
    violations = find_violations(game)
    if violations:
        raise GameValidationError(violations)
    return game


@dataclass(frozen=True, eq=False)
class RepeatedGame:
    """The n-fold parallel repetition of ``base`` in party-major layout."""

    base: Game
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"Repetition count must be >= 1, got {self.n}")

    @property
    def m(self) -> int:
        return self.base.m

    @property
    def query_sizes(self) -> tuple[int, ...]:
        return tuple(s**self.n for s in self.base.query_sizes)

    @property
    def response_sizes(self) -> tuple[int, ...]:
        return tuple(s**self.n for s in self.base.response_sizes)

    @property
    def cells(self) -> int:
        return math.prod(self.query_sizes) * math.prod(self.response_sizes)

    @cached_property
    def query(self) -> JointTable:
        base = self.base.query_probs
        table = base
        for _ in range(self.n - 1):
            table = np.multiply.outer(table, base)
        grouped = party_major(table, self.base.query_sizes, self.n)
        shape = AlphabetShape(self.query_sizes, tuple(query_label(i) for i in range(self.m)))
        return JointTable(shape, grouped, "distribution")

    @cached_property
    def wins(self) -> np.ndarray:
        """Win count ``N(x, u)`` with party-major query axes then response axes."""
        pred = self.base.predicate.astype(np.int64)
        table = pred
        for _ in range(self.n - 1):
            table = np.add.outer(table, pred)
        counts = repeated_layout(
            table, self.base.query_sizes, self.base.response_sizes, self.n
        ).copy()
        counts.setflags(write=False)
        return counts

    def query_letter(self, x: Sequence[Sequence[int]]) -> tuple[int, ...]:
        """Party-major letters of per-coordinate query tuples ``x[j][i]``."""
        return _letters(x, self.base.query_sizes, self.n)

    def response_letter(self, u: Sequence[Sequence[int]]) -> tuple[int, ...]:
        return _letters(u, self.base.response_sizes, self.n)

    def as_game(self) -> Game:
        """``G^n`` with the all-coordinates-win predicate."""
        return self._with_predicate((self.wins == self.n).astype(float), f"{self.base.name}^{self.n}")

    def threshold_game(self, delta: float | Fraction) -> Game:
        """``G^{n,Delta}``: win iff at least ``n*Delta`` coordinates win."""
        event = threshold_event(self, delta)
        return self._with_predicate(event.astype(float), f"{self.base.name}^({self.n},{delta})")

    def _with_predicate(self, predicate: np.ndarray, name: str) -> Game:
        exact = None
        if self.base.exact_query is not None:
            exact = self.base.exact_query
            for _ in range(self.n - 1):
                exact = np.multiply.outer(exact, self.base.exact_query)
            exact = party_major(exact, self.base.query_sizes, self.n)
        return Game(self.query.mass, predicate, self.response_sizes, name, exact)


def _letters(tuples: Sequence[Sequence[int]], sizes: Sequence[int], n: int) -> tuple[int, ...]:
    if len(tuples) != n or any(len(t) != len(sizes) for t in tuples):
        raise ValueError(f"Expected {n} coordinate tuples of length {len(sizes)}")
    return tuple(
        int(np.ravel_multi_index(tuple(t[i] for t in tuples), (s,) * n))
        for i, s in enumerate(sizes)
    )


def tensor_power(game: Game, n: int, settings: Settings = DEFAULT_SETTINGS) -> RepeatedGame:
    """
    The n-fold repetition of ``game``.

    Raises:
        BudgetExceededError: if the repeated query x response table exceeds
            ``settings.budget_cells``.
    """
    rg = RepeatedGame(game, n)
    if rg.cells > settings.budget_cells:
        raise BudgetExceededError(
            f"{game.name} repeated {n} times", rg.cells, settings.budget_cells,
            f"raise {BUDGET_ENV_VAR} or lower n",
        )
    logger.debug("tensor_power: %s n=%d cells=%d", game.name, n, rg.cells)
    return rg


def win_count(
    rg: RepeatedGame, x: Sequence[Sequence[int]], u: Sequence[Sequence[int]]
) -> int:
    """Number of coordinates ``j`` with ``omega(x_j, u_j) = 1``."""
    if len(x) != rg.n or len(u) != rg.n:
        raise ValueError(f"Expected {rg.n} coordinates, got {len(x)} and {len(u)}")
    return int(sum(rg.base.predicate[tuple(xj) + tuple(uj)] for xj, uj in zip(x, u)))


def threshold_count(n: int, delta: float | Fraction) -> int:
    """
    Smallest win count ``k`` with ``k >= n*delta`` (exact comparison).

    Floats are read through their shortest decimal form, so ``0.2`` means 1/5
    rather than its binary64 neighbour.
    """
    if not 0 < delta <= 1:
        raise ValueError(f"Threshold must lie in (0, 1], got {delta}")
    exact = Fraction(repr(float(delta))) if isinstance(delta, float) else Fraction(delta)
    return math.ceil(exact * n)


def threshold_event(rg: RepeatedGame, delta: float | Fraction) -> np.ndarray:
    """Boolean table over (query, response): ``N(x, u) >= n*delta``."""
    return rg.wins >= threshold_count(rg.n, delta)


def _binary_game(
    name: str, m: int, support: Sequence[tuple[int, ...]], rule: Callable[[tuple, tuple], bool]
) -> Game:
    exact = np.full((2,) * m, Fraction(0), dtype=object)
    for cell in support:
        exact[cell] = Fraction(1, len(support))
    predicate = np.zeros((2,) * (2 * m))
    for x in itertools.product(range(2), repeat=m):
        for u in itertools.product(range(2), repeat=m):
            predicate[x + u] = 1.0 if rule(x, u) else 0.0
    return Game.from_exact(exact, predicate, (2,) * m, name)


def _pair_rule(equal: bool) -> Callable[[tuple, tuple], bool]:
    def rule(x: tuple, u: tuple) -> bool:
        ones = [i for i, xi in enumerate(x) if xi == 1]
        return all(
            (u[i] == u[j]) == equal for i, j in itertools.combinations(ones, 2)
        )
    return rule


_ALL_PAIRS = list(itertools.product(range(2), repeat=2))
_WEIGHT_TWO = [x for x in itertools.product(range(2), repeat=3) if sum(x) == 2]

BUILTINS: dict[str, Callable[[], Game]] = {
    "chsh": lambda: _binary_game(
        "chsh", 2, _ALL_PAIRS, lambda x, u: (u[0] ^ u[1]) == (x[0] & x[1])
    ),
    "anticorrelation": lambda: _binary_game(
        "anticorrelation", 3, _WEIGHT_TWO, _pair_rule(equal=False)
    ),
    "anticorrelation_literal": lambda: _binary_game(
        "anticorrelation_literal", 3, _WEIGHT_TWO, _pair_rule(equal=True)
    ),
    "constant_win": lambda: _binary_game("constant_win", 2, _ALL_PAIRS, lambda x, u: True),
    "constant_lose": lambda: _binary_game("constant_lose", 2, _ALL_PAIRS, lambda x, u: False),
}


def builtin(name: str) -> Game:
    """
    A named game from the builtin catalogue, with exact rational masses.

    Raises:
        ValueError: if ``name`` is unknown.
    """
    try:
        factory = BUILTINS[name]
    except KeyError:
        raise ValueError(
            f"Unknown builtin game {name!r}. Available: {sorted(BUILTINS)}"
        ) from None
    return factory()


def random_game(
    m: int,
    query_sizes: int | Sequence[int],
    response_sizes: int | Sequence[int],
    rng: np.random.Generator,
    name: str = "random",
) -> Game:
    """Dirichlet(1) query weights and Bernoulli(1/2) predicate entries."""
    qs = (query_sizes,) * m if isinstance(query_sizes, int) else tuple(query_sizes)
    rs = (response_sizes,) * m if isinstance(response_sizes, int) else tuple(response_sizes)
    weights = rng.dirichlet(np.ones(math.prod(qs))).reshape(qs)
    weights = weights / weights.sum()
    predicate = rng.integers(0, 2, size=qs + rs).astype(float)
    return validate(Game(weights, predicate, rs, name))


__all__ = [
    "Game",
    "RepeatedGame",
    "Violation",
    "builtin",
    "complement",
    "find_violations",
    "proper_subsets",
    "random_game",
    "tensor_power",
    "threshold_count",
    "threshold_event",
    "validate",
    "win_count",
]
