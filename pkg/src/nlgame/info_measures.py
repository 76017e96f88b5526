"""
Discrete information measures over ``JointTable`` objects.

Logarithms are base 2 throughout; ``0 * log(0 / q)`` is taken as 0. KL
divergence between subnormalized tables is the plain sum without any
normalization correction. ``dvar`` is the full L1 distance.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Sequence

import numpy as np

from nlgame.exceptions import InvalidAxisError
from nlgame.game_model import Game, complement, proper_subsets
from nlgame.tensor_core import JointTable, condition, query_label, response_label

logger = logging.getLogger(__name__)

PASS_TOL = 1e-9
CLAMP_TOL = 1e-12


def _aligned(p: JointTable, q: JointTable) -> tuple[np.ndarray, np.ndarray]:
    if q.labels != p.labels:
        q = q.transpose(p.labels)
    if p.shape.sizes != q.shape.sizes:
        raise ValueError(f"Shape mismatch: {p.shape.sizes} vs {q.shape.sizes}")
    return np.asarray(p.mass), np.asarray(q.mass)


def support_violation(p: JointTable, q: JointTable) -> tuple[int, ...] | None:
    """First cell where ``p > 0`` but ``q == 0`` (``None`` if absolutely continuous)."""
    pm, qm = _aligned(p, q)
    bad = np.argwhere((pm > 0) & (qm <= 0))
    return tuple(int(c) for c in bad[0]) if bad.size else None


def kl(p: JointTable, q: JointTable) -> float:
    """
    ``D(p || q)`` in bits.

    Returns ``inf`` when ``p`` puts mass where ``q`` has none; the offending
    cell is available from :func:`support_violation`.
    """
    pm, qm = _aligned(p, q)
    support = pm > 0
    if np.any(support & (qm <= 0)):
        logger.debug("kl: support violation at %s", support_violation(p, q))
        return math.inf
    ratio = np.log2(pm[support]) - np.log2(qm[support])
    return float(np.sum(pm[support] * ratio))


def entropy(table: JointTable) -> float:
    mass = np.asarray(table.mass).reshape(-1)
    mass = mass[mass > 0]
    return float(-np.sum(mass * np.log2(mass)))


def cond_mutual_info(
    joint: JointTable,
    a_axes: Iterable[Hashable],
    b_axes: Iterable[Hashable],
    c_axes: Iterable[Hashable] = (),
) -> float:
    """
    ``I(A ; B | C)`` in bits from entropy differences, clamped at 0 for noise.

    Raises:
        InvalidAxisError: if the axis sets overlap or name unknown axes.
        ValueError: if ``joint`` is not a normalized distribution.
    """
    a, b, c = list(a_axes), list(b_axes), list(c_axes)
    for x, y in ((a, b), (a, c), (b, c)):
        shared = set(x) & set(y)
        if shared:
            raise InvalidAxisError(f"Overlapping axis sets share {sorted(map(str, shared))}")
    if joint.normalization != "distribution":
        raise ValueError("Mutual information needs a normalized joint distribution")

    def h(labels: list) -> float:
        return entropy(joint.marginalize(labels)) if labels else 0.0

    value = h(a + c) + h(b + c) - h(a + b + c) - h(c)
    if -CLAMP_TOL < value < 0:
        return 0.0
    return max(value, 0.0)


def dvar(p: JointTable, q: JointTable) -> float:
    """L1 distance ``sum |p - q|`` (subnormalized tables allowed)."""
    pm, qm = _aligned(p, q)
    return float(np.abs(pm - qm).sum())


def pinsker_bound(d: float) -> float:
    """``sqrt(2 ln 2 * d)``: an upper bound on ``dvar`` given ``D`` in bits."""
    if d < 0:
        if d > -CLAMP_TOL:
            return 0.0
        raise ValueError(f"Divergence must be nonnegative, got {d}")
    return math.sqrt(2 * math.log(2) * d)


def query_labels(m: int) -> list[str]:
    return [query_label(i) for i in range(m)]


def response_labels(m: int, subset: Sequence[int] | None = None) -> list[str]:
    parties = range(m) if subset is None else subset
    return [response_label(i) for i in parties]


def _check_joint(joint: JointTable, game: Game) -> JointTable:
    expected = query_labels(game.m) + response_labels(game.m)
    if sorted(map(str, joint.labels)) != sorted(expected):
        raise ValueError(f"Joint axes {joint.labels} do not match game axes {tuple(expected)}")
    ordered = joint.transpose(expected)
    if ordered.shape.sizes != game.query_sizes + game.response_sizes:
        raise ValueError(
            f"Joint sizes {ordered.shape.sizes} do not match game sizes "
            f"{game.query_sizes + game.response_sizes}"
        )
    return ordered


def query_divergence(joint: JointTable, game: Game) -> float:
    """``D(P_X~ || P_X)`` for a joint over the game's query and response axes."""
    ordered = _check_joint(joint, game)
    return kl(ordered.marginalize(query_labels(game.m)), game.query)


@dataclass(frozen=True)
class ApproxNsReport:
    """
    Per-subset gaps ``I(U_A ; X_{A^c} | X_A) + D(P_X~ || P_X)`` in bits.
    """

    gaps: dict[tuple[int, ...], float]
    query_divergence: float
    delta: float
    max_gap: float = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        worst = max(self.gaps.values(), default=0.0)
        object.__setattr__(self, "max_gap", worst)
        object.__setattr__(self, "passed", worst <= self.delta + PASS_TOL)

    def to_dict(self) -> dict:
        return {
            "delta": self.delta,
            "gaps": {",".join(map(str, a)): g for a, g in self.gaps.items()},
            "max_gap": self.max_gap,
            "passed": self.passed,
            "query_divergence": self.query_divergence,
        }


def approx_ns_check(joint: JointTable, game: Game, delta: float) -> ApproxNsReport:
    """
    Test whether ``joint`` is a delta-approximate nonsignalling distribution
    for ``game``.

    Raises:
        ValueError: if the joint's axes or sizes do not match the game.
    """
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    ordered = _check_joint(joint, game)
    m = game.m
    divergence = kl(ordered.marginalize(query_labels(m)), game.query)
    gaps = {}
    for subset in proper_subsets(m):
        info = cond_mutual_info(
            ordered,
            response_labels(m, subset),
            [query_label(i) for i in complement(subset, m)],
            [query_label(i) for i in subset],
        )
        gaps[subset] = info + divergence
    report = ApproxNsReport(gaps, divergence, float(delta))
    logger.debug("approx_ns_check: max gap %.6g at delta %.6g", report.max_gap, delta)
    return report


def combined_divergence_identity(
    joint: JointTable, game: Game, subset: Sequence[int]
) -> tuple[float, float]:
    """
    Both sides of
    ``D(P_{U_A X~} || P_X * P_{U_A|X_A}) = I(U_A ; X_{A^c} | X_A) + D(P_X~ || P_X)``.

    Conditional cells with zero ``X_A`` mass are filled with the uniform
    conditional; they carry no joint mass and do not affect either side.
    """
    subset = tuple(subset)
    m = game.m
    if not subset or len(subset) >= m:
        raise ValueError(f"Subset {subset} is not a proper nonempty subset of {m} parties")
    ordered = _check_joint(joint, game)
    u_a = response_labels(m, subset)
    x_a = [query_label(i) for i in subset]
    others = complement(subset, m)

    target = ordered.marginalize(query_labels(m) + u_a)
    local = condition(ordered.marginalize(x_a + u_a), x_a)
    if local.undefined is not None and local.undefined.any():
        logger.debug("combined_divergence_identity: %d undefined cells", int(local.undefined.sum()))
    lifted = np.expand_dims(np.asarray(local.mass), axis=others) if others else np.asarray(local.mass)
    reference = game.query_probs.reshape(game.query_sizes + (1,) * len(subset)) * lifted
    lhs = kl(target, JointTable(target.shape, reference, "distribution"))
    rhs = cond_mutual_info(ordered, u_a, [query_label(i) for i in others], x_a) + kl(
        ordered.marginalize(query_labels(m)), game.query
    )
    return lhs, rhs


def conditional_kl(joint: np.ndarray, cond_p: np.ndarray, cond_q: np.ndarray) -> float:
    """
    ``D(P_{Y|X} || Q_{Y|X} | P_X)`` in bits, given the joint ``P_{XY}`` and
    both conditionals broadcast to the joint's shape.

    Returns ``inf`` if ``cond_q`` vanishes where the joint has mass.
    """
    joint = np.asarray(joint, dtype=float)
    support = joint > 0
    p = np.broadcast_to(cond_p, joint.shape)[support]
    q = np.broadcast_to(cond_q, joint.shape)[support]
    if np.any(q <= 0):
        return math.inf
    return float(np.sum(joint[support] * (np.log2(p) - np.log2(q))))
