"""
Dense probability tables over product alphabets.

Every table stores its masses as an ``numpy.ndarray`` whose axes follow the
declared ``AlphabetShape``. Flattening is row-major over the declared axis
order, so for axes ``(a_1, ..., a_k)`` with sizes ``(s_1, ..., s_k)`` the flat
index is ``((a_1*s_2 + a_2)*s_3 + ...)*s_k + a_k``. Channels put the input
axes first and the output axes last, which gives the ``(x outer, u inner)``
variable order used by the LP builders.

Tables are immutable once constructed: the underlying arrays are marked
read-only and every operation returns a new table.
"""

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Literal, Sequence

import numpy as np

from nlgame.exceptions import InvalidAxisError

logger = logging.getLogger(__name__)

MASS_TOL = 1e-12

Normalization = Literal["distribution", "subnormalized"]
ChannelNormalization = Literal["channel", "subchannel"]


def query_label(party: int) -> str:
    """Axis label of party ``party`` (0-based) query letters."""
    return f"X{party + 1}"


def response_label(party: int) -> str:
    """Axis label of party ``party`` (0-based) response letters."""
    return f"U{party + 1}"


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class AlphabetShape:
    sizes: tuple[int, ...]
    labels: tuple[Hashable, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        labels = tuple(self.labels)
        if len(sizes) != len(labels):
            raise InvalidAxisError(
                f"{len(sizes)} sizes given for {len(labels)} axis labels"
            )
        if any(s < 1 for s in sizes):
            raise ValueError(f"Alphabet sizes must be >= 1, got {sizes}")
        if len(set(labels)) != len(labels):
            raise InvalidAxisError(f"Duplicate axis labels in {labels}")
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def of(cls, pairs: Iterable[tuple[Hashable, int]]) -> "AlphabetShape":
        pairs = list(pairs)
        return cls(tuple(s for _, s in pairs), tuple(lbl for lbl, _ in pairs))

    @property
    def ndim(self) -> int:
        return len(self.sizes)

    @property
    def cells(self) -> int:
        return int(np.prod(self.sizes, dtype=np.int64)) if self.sizes else 1

    def axis(self, label: Hashable) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InvalidAxisError(
                f"Unknown axis {label!r}. Available axes: {list(self.labels)}"
            ) from None

    def axes(self, labels: Iterable[Hashable]) -> tuple[int, ...]:
        return tuple(self.axis(lbl) for lbl in labels)

    def size_of(self, label: Hashable) -> int:
        return self.sizes[self.axis(label)]

    def select(self, labels: Iterable[Hashable]) -> "AlphabetShape":
        """Sub-shape keeping ``labels`` in this shape's axis order."""
        wanted = set(labels)
        for lbl in wanted:
            self.axis(lbl)
        keep = [i for i, lbl in enumerate(self.labels) if lbl in wanted]
        return AlphabetShape(
            tuple(self.sizes[i] for i in keep), tuple(self.labels[i] for i in keep)
        )

    def concat(self, other: "AlphabetShape") -> "AlphabetShape":
        clash = set(self.labels) & set(other.labels)
        if clash:
            raise InvalidAxisError(f"Axis label collision: {sorted(map(str, clash))}")
        return AlphabetShape(self.sizes + other.sizes, self.labels + other.labels)

    def flatten(self, index: Sequence[int]) -> int:
        if len(index) != self.ndim:
            raise InvalidAxisError(f"Index {tuple(index)} has wrong rank for {self}")
        if not self.sizes:
            return 0
        return int(np.ravel_multi_index(tuple(int(i) for i in index), self.sizes))

    def unflatten(self, flat: int) -> tuple[int, ...]:
        if not self.sizes:
            if flat != 0:
                raise IndexError(f"Flat index {flat} out of range for scalar shape")
            return ()
        return tuple(int(i) for i in np.unravel_index(int(flat), self.sizes))


@dataclass(frozen=True, eq=False)
class JointTable:
    shape: AlphabetShape
    mass: np.ndarray
    normalization: Normalization = "distribution"

    def __post_init__(self):
        mass = _frozen(self.mass)
        if mass.shape != self.shape.sizes:
            try:
                mass = _frozen(mass.reshape(self.shape.sizes))
            except ValueError:
                raise ValueError(
                    f"Mass array of shape {mass.shape} does not fit {self.shape.sizes}"
                ) from None
        object.__setattr__(self, "mass", mass)
        if self.normalization not in ("distribution", "subnormalized"):
            raise ValueError(f"Unknown normalization {self.normalization!r}")
        if np.any(~np.isfinite(mass)) or np.any(mass < 0):
            bad = np.argwhere(~(mass >= 0))[0]
            raise ValueError(f"Negative or non-finite mass at cell {tuple(bad)}")
        total = float(mass.sum())
        if self.normalization == "distribution" and abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"Distribution masses sum to {total!r}, expected 1")
        if self.normalization == "subnormalized" and total > 1.0 + MASS_TOL:
            raise ValueError(f"Subnormalized masses sum to {total!r} > 1")

    @classmethod
    def from_array(
        cls,
        array: np.ndarray,
        labels: Sequence[Hashable],
        normalization: Normalization = "distribution",
    ) -> "JointTable":
        array = np.asarray(array, dtype=float)
        return cls(AlphabetShape(array.shape, tuple(labels)), array, normalization)

    @classmethod
    def uniform(cls, sizes: Sequence[int], labels: Sequence[Hashable]) -> "JointTable":
        shape = AlphabetShape(tuple(sizes), tuple(labels))
        return cls(shape, np.full(shape.sizes, 1.0 / shape.cells))

    @classmethod
    def normalized(
        cls, array: np.ndarray, labels: Sequence[Hashable]
    ) -> "JointTable":
        """Clip tiny negative noise and rescale to a distribution."""
        array = np.clip(np.asarray(array, dtype=float), 0.0, None)
        total = array.sum()
        if total <= 0:
            raise ValueError("Cannot normalize a table with zero total mass")
        return cls.from_array(array / total, labels)

    @property
    def labels(self) -> tuple[Hashable, ...]:
        return self.shape.labels

    def total(self) -> float:
        return float(self.mass.sum())

    def at(self, index: Sequence[int]) -> float:
        return float(self.mass[tuple(index)])

    def flat(self) -> np.ndarray:
        return self.mass.reshape(-1)

    def to_fractions(self, max_denominator: int | None = None) -> np.ndarray:
        """Exact-rational mirror of the masses (object array of ``Fraction``)."""
        def convert(v: float) -> Fraction:
            frac = Fraction(float(v))
            return frac.limit_denominator(max_denominator) if max_denominator else frac

        return np.vectorize(convert, otypes=[object])(self.mass)

    def relabel(self, mapping: dict[Hashable, Hashable]) -> "JointTable":
        labels = tuple(mapping.get(lbl, lbl) for lbl in self.labels)
        return JointTable(
            AlphabetShape(self.shape.sizes, labels), self.mass, self.normalization
        )

    def transpose(self, labels: Sequence[Hashable]) -> "JointTable":
        """Reorder axes to ``labels`` (a permutation of this table's labels)."""
        if sorted(map(str, labels)) != sorted(map(str, self.labels)):
            raise InvalidAxisError(f"{tuple(labels)} is not a permutation of {self.labels}")
        perm = self.shape.axes(labels)
        shape = AlphabetShape(tuple(self.shape.sizes[i] for i in perm), tuple(labels))
        return JointTable(shape, np.transpose(self.mass, perm), self.normalization)

    def marginalize(self, keep: Iterable[Hashable]) -> "JointTable":
        return marginalize(self, keep)

    def condition(self, given: Iterable[Hashable]) -> "Channel":
        return condition(self, given)


@dataclass(frozen=True, eq=False)
class Channel:
    """
    Conditional table ``W(output | input)`` stored with input axes first.

    ``undefined`` (optional) flags input cells whose conditioning mass was
    zero; those rows hold the uniform conditional.
    """

    input_shape: AlphabetShape
    output_shape: AlphabetShape
    mass: np.ndarray
    normalization: ChannelNormalization = "channel"
    undefined: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        self.input_shape.concat(self.output_shape)
        sizes = self.input_shape.sizes + self.output_shape.sizes
        mass = _frozen(self.mass)
        if mass.shape != sizes:
            try:
                mass = _frozen(mass.reshape(sizes))
            except ValueError:
                raise ValueError(
                    f"Channel array of shape {mass.shape} does not fit {sizes}"
                ) from None
        object.__setattr__(self, "mass", mass)
        if self.normalization not in ("channel", "subchannel"):
            raise ValueError(f"Unknown channel normalization {self.normalization!r}")
        if np.any(~np.isfinite(mass)) or np.any(mass < 0):
            bad = np.argwhere(~(mass >= 0))[0]
            raise ValueError(f"Negative or non-finite channel mass at cell {tuple(bad)}")
        sums = self.output_sums()
        if self.normalization == "channel":
            worst = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
            if worst > MASS_TOL:
                raise ValueError(f"Channel rows deviate from 1 by up to {worst!r}")
        elif sums.size and float(sums.max()) > 1.0 + MASS_TOL:
            raise ValueError(f"Subchannel row sums reach {float(sums.max())!r} > 1")
        if self.undefined is not None:
            flags = np.array(self.undefined, dtype=bool, copy=True)
            flags.setflags(write=False)
            object.__setattr__(self, "undefined", flags)

    @classmethod
    def from_array(
        cls,
        array: np.ndarray,
        input_labels: Sequence[Hashable],
        output_labels: Sequence[Hashable],
        normalization: ChannelNormalization = "channel",
    ) -> "Channel":
        array = np.asarray(array, dtype=float)
        k = len(input_labels)
        return cls(
            AlphabetShape(array.shape[:k], tuple(input_labels)),
            AlphabetShape(array.shape[k:], tuple(output_labels)),
            array,
            normalization,
        )

    @classmethod
    def cleaned(
        cls,
        array: np.ndarray,
        input_shape: AlphabetShape,
        output_shape: AlphabetShape,
        normalization: ChannelNormalization = "channel",
    ) -> "Channel":
        """
        Build a channel from solver output: clip negative noise, then rescale
        rows to sum 1 (channel) or cap rows above 1 (subchannel).
        """
        sizes = input_shape.sizes + output_shape.sizes
        array = np.clip(np.asarray(array, dtype=float).reshape(sizes), 0.0, None)
        axes = tuple(range(input_shape.ndim, len(sizes)))
        sums = array.sum(axis=axes, keepdims=True)
        if normalization == "channel":
            if np.any(sums <= 0):
                raise ValueError("Channel row with zero mass cannot be normalized")
            array = array / sums
        else:
            array = array / np.maximum(sums, 1.0)
        return cls(input_shape, output_shape, array, normalization)

    @property
    def input_labels(self) -> tuple[Hashable, ...]:
        return self.input_shape.labels

    @property
    def output_labels(self) -> tuple[Hashable, ...]:
        return self.output_shape.labels

    def output_sums(self) -> np.ndarray:
        axes = tuple(range(self.input_shape.ndim, self.mass.ndim))
        return self.mass.sum(axis=axes) if axes else self.mass.copy()

    def flat(self) -> np.ndarray:
        """Masses in ``(x outer, u inner)`` order."""
        return self.mass.reshape(-1)

    def joint(self, source: JointTable) -> JointTable:
        """Joint table ``source(x) * W(u|x)`` over input axes then output axes."""
        if source.labels != self.input_labels or source.shape.sizes != self.input_shape.sizes:
            raise InvalidAxisError(
                f"Source axes {source.labels} do not match channel inputs {self.input_labels}"
            )
        k = self.output_shape.ndim
        weights = source.mass.reshape(source.mass.shape + (1,) * k)
        total = float(source.total()) * float(self.output_sums().max(initial=0.0))
        normalization: Normalization = (
            "distribution"
            if self.normalization == "channel" and source.normalization == "distribution"
            else "subnormalized"
        )
        if normalization == "subnormalized" and total > 1.0 + MASS_TOL:
            raise ValueError("Joint of subnormalized inputs exceeds unit mass")
        return JointTable(
            self.input_shape.concat(self.output_shape), weights * self.mass, normalization
        )

    def output_marginal(self, keep: Iterable[Hashable]) -> "Channel":
        """Sum out the output axes not in ``keep``."""
        keep = list(keep)
        kept_shape = self.output_shape.select(keep)
        k_in = self.input_shape.ndim
        drop = tuple(
            k_in + i for i, lbl in enumerate(self.output_labels) if lbl not in kept_shape.labels
        )
        mass = self.mass.sum(axis=drop) if drop else self.mass
        return Channel(self.input_shape, kept_shape, mass, self.normalization)

    def scaled(self, factor: float) -> "Channel":
        if not 0.0 <= factor <= 1.0:
            raise ValueError(f"Scale factor must lie in [0, 1], got {factor}")
        return Channel(self.input_shape, self.output_shape, self.mass * factor, "subchannel")


def marginalize(table: JointTable, keep_axes: Iterable[Hashable]) -> JointTable:
    """
    Sum out every axis of ``table`` not in ``keep_axes``.

    Kept axes retain their order in ``table``. Keeping no axis returns the
    scalar total mass. The normalization class is preserved.
    """
    kept = table.shape.select(keep_axes)
    drop = tuple(i for i, lbl in enumerate(table.labels) if lbl not in kept.labels)
    mass = table.mass.sum(axis=drop) if drop else table.mass
    return JointTable(kept, np.asarray(mass), table.normalization)


def condition(table: JointTable, given_axes: Iterable[Hashable]) -> Channel:
    """
    Conditional table of the remaining axes given ``given_axes``.

    The result divides by the marginal over ``given_axes``; it is a normalized
    channel even when ``table`` is subnormalized. Cells whose conditioning
    mass is zero receive the uniform conditional and are flagged in
    ``Channel.undefined``.
    """
    given_shape = table.shape.select(given_axes)
    rest = [lbl for lbl in table.labels if lbl not in given_shape.labels]
    rest_shape = table.shape.select(rest)
    ordered = table.transpose(list(given_shape.labels) + rest)
    mass = ordered.mass
    axes = tuple(range(given_shape.ndim, mass.ndim))
    marg = mass.sum(axis=axes, keepdims=True) if axes else mass.copy()
    undefined = (marg <= 0).reshape(given_shape.sizes)
    with np.errstate(invalid="ignore", divide="ignore"):
        cond = np.where(marg > 0, mass / np.where(marg > 0, marg, 1.0), 1.0 / rest_shape.cells)
    if undefined.any():
        logger.debug("condition: %d zero-marginal input cells", int(undefined.sum()))
    channel = Channel.cleaned(cond, given_shape, rest_shape, "channel")
    return Channel(given_shape, rest_shape, channel.mass, "channel", undefined)


def product(a: JointTable, b: JointTable) -> JointTable:
    """Cellwise product table with ``a``'s axes followed by ``b``'s axes."""
    shape = a.shape.concat(b.shape)
    mass = np.multiply.outer(a.mass, b.mass)
    normalization: Normalization = (
        "distribution"
        if a.normalization == "distribution" and b.normalization == "distribution"
        else "subnormalized"
    )
    return JointTable(shape, mass, normalization)


def party_major(array: np.ndarray, sizes: Sequence[int], n: int) -> np.ndarray:
    """
    Regroup an array with coordinate-major axes ``(j=1: a_1..a_k, ..., j=n: a_1..a_k)``
    into party-major letters: axis ``i`` of the result enumerates the tuple
    ``(a_{i,1}, ..., a_{i,n})`` flattened row-major, with size ``sizes[i]**n``.
    """
    k = len(sizes)
    perm = [j * k + i for i in range(k) for j in range(n)]
    return np.transpose(array, perm).reshape(tuple(int(s) ** n for s in sizes))


def coordinate_major(array: np.ndarray, sizes: Sequence[int], n: int) -> np.ndarray:
    """Inverse of :func:`party_major`."""
    k = len(sizes)
    digits = array.reshape(tuple(int(s) for s in sizes for _ in range(n)))
    perm = [i * n + j for j in range(n) for i in range(k)]
    return np.transpose(digits, perm)


def repeated_layout(
    array: np.ndarray,
    query_sizes: Sequence[int],
    response_sizes: Sequence[int],
    n: int,
) -> np.ndarray:
    """
    Regroup an n-fold outer product of single-copy ``(x_1..x_m, u_1..u_m)``
    tables into party-major ``(X_1..X_m, U_1..U_m)`` letters.
    """
    m = len(query_sizes)
    # coordinate blocks (x_j, u_j) -> all x blocks, then all u blocks
    perm = [j * 2 * m + i for j in range(n) for i in range(m)]
    perm += [j * 2 * m + m + i for j in range(n) for i in range(m)]
    split = np.transpose(array, perm)
    x_part = [j * m + i for i in range(m) for j in range(n)]
    u_part = [n * m + j * m + i for i in range(m) for j in range(n)]
    sizes = tuple(int(s) ** n for s in query_sizes) + tuple(int(s) ** n for s in response_sizes)
    return np.transpose(split, x_part + u_part).reshape(sizes)
