"""
Dense linear programs and a bounded-variable primal simplex solver.

The solver works on a full tableau, which keeps it simple and
deterministic for the small dense programs the value computations build.
The same code runs over binary64 (``solve``) and over ``fractions.Fraction``
(``solve_exact``): the arrays switch to ``dtype=object`` and every
tolerance becomes exactly zero.

Programs are always maximizations with variables in ``[0, upper]``.
"""

import logging
import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import Literal, Sequence

import numpy as np

from nlgame.exceptions import SolverError

logger = logging.getLogger(__name__)

Sense = Literal["<=", "==", ">="]
Status = Literal["optimal", "infeasible", "unbounded"]

SENSES: tuple[str, ...] = ("<=", "==", ">=")
MAX_ITERATIONS = 1_000_000
DEGENERATE_SWITCH = 50
RESIDUAL_WARN = 1e-8
PIVOT_TOL = 1e-9
COST_TOL = 1e-9
ZERO_TOL = 1e-14
FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """
    ``max objective @ x`` subject to ``matrix[k] @ x <sense_k> rhs[k]`` and
    ``0 <= x <= upper``.

    Attributes:
        objective: Coefficients, one per variable.
        matrix: Dense constraint matrix (rows x variables).
        senses: One of ``"<="``, ``"=="``, ``">="`` per row.
        rhs: Right-hand sides.
        upper: Upper bounds (``inf`` when absent) or ``None``.
        name: Label used in logs and dumps.
    """

    objective: np.ndarray
    matrix: np.ndarray
    senses: tuple[str, ...]
    rhs: np.ndarray
    upper: np.ndarray | None = None
    name: str = "lp"

    def __post_init__(self):
        n = len(self.objective)
        matrix = self.matrix
        if matrix.ndim != 2 or (matrix.shape[0] and matrix.shape[1] != n):
            raise ValueError(
                f"Constraint matrix of shape {matrix.shape} does not match {n} variables"
            )
        if len(self.senses) != matrix.shape[0] or len(self.rhs) != matrix.shape[0]:
            raise ValueError("senses and rhs must have one entry per constraint row")
        bad = [s for s in self.senses if s not in SENSES]
        if bad:
            raise ValueError(f"Unknown constraint senses {sorted(set(bad))}. Available: {SENSES}")
        if not self.exact:
            for label, arr in (("objective", self.objective), ("matrix", matrix), ("rhs", self.rhs)):
                if not np.all(np.isfinite(np.asarray(arr, dtype=float))):
                    raise ValueError(f"Non-finite {label} coefficient in {self.name}")
        if self.upper is not None and len(self.upper) != n:
            raise ValueError("upper must have one entry per variable")

    @property
    def exact(self) -> bool:
        return self.objective.dtype == object

    @property
    def num_vars(self) -> int:
        return len(self.objective)

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    def upper_bounds(self) -> np.ndarray:
        if self.upper is None:
            return np.full(self.num_vars, np.inf, dtype=object if self.exact else float)
        return self.upper

    def to_exact(self) -> "LinearProgram":
        """Same program with every coefficient converted to ``Fraction``."""
        if self.exact:
            return self
        to_frac = np.vectorize(lambda v: Fraction(float(v)), otypes=[object])
        upper = None
        if self.upper is not None:
            upper = np.array(
                [Fraction(float(v)) if np.isfinite(v) else np.inf for v in self.upper],
                dtype=object,
            )
        return LinearProgram(
            to_frac(self.objective),
            to_frac(self.matrix) if self.matrix.size else np.zeros(self.matrix.shape, dtype=object),
            self.senses,
            to_frac(self.rhs) if len(self.rhs) else np.zeros(0, dtype=object),
            upper,
            self.name,
        )

    def dump(self) -> str:
        """
        Plain-text rendering: a header, ``vars``, ``maximize``, ``upper`` and
        one sparse ``row`` line per constraint (``index:coefficient`` pairs).
        """
        kind = "exact" if self.exact else "float"

        def fmt(v) -> str:
            return str(v) if self.exact else repr(float(v))

        def sparse(vec) -> str:
            return " ".join(f"{j}:{fmt(v)}" for j, v in enumerate(vec) if v != 0)

        lines = [f"# nlgame-lp {kind} {self.name}", f"vars {self.num_vars}"]
        lines.append(f"maximize {sparse(self.objective)}".rstrip())
        if self.upper is not None:
            finite = " ".join(
                f"{j}:{fmt(v)}" for j, v in enumerate(self.upper) if v != np.inf
            )
            lines.append(f"upper {finite}".rstrip())
        for row, sense, b in zip(self.matrix, self.senses, self.rhs):
            lines.append(f"row {sense} {fmt(b)} {sparse(row)}".rstrip())
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str) -> "LinearProgram":
        """Parse the output of :meth:`dump`."""
        lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("# nlgame-lp "):
            raise ValueError("Not an nlgame LP dump: missing header line")
        header = lines[0].split(maxsplit=3)
        exact = header[2] == "exact"
        name = header[3] if len(header) > 3 else "lp"
        dtype = object if exact else float
        parse = Fraction if exact else float

        def dense(tokens: Sequence[str], n: int, fill) -> np.ndarray:
            vec = np.array([fill] * n, dtype=dtype)
            for tok in tokens:
                j, v = tok.split(":", 1)
                vec[int(j)] = parse(v)
            return vec

        n = None
        objective = upper = None
        rows, senses, rhs = [], [], []
        for line in lines[1:]:
            key, *rest = line.split()
            if key == "vars":
                n = int(rest[0])
            elif n is None:
                raise ValueError("LP dump declares rows before 'vars'")
            elif key == "maximize":
                objective = dense(rest, n, parse(0))
            elif key == "upper":
                upper = dense(rest, n, np.inf)
            elif key == "row":
                senses.append(rest[0])
                rhs.append(parse(rest[1]))
                rows.append(dense(rest[2:], n, parse(0)))
            else:
                raise ValueError(f"Unknown LP dump line {key!r}")
        if n is None:
            raise ValueError("LP dump has no 'vars' line")
        if objective is None:
            objective = np.array([parse(0)] * n, dtype=dtype)
        matrix = np.array(rows, dtype=dtype).reshape(len(rows), n)
        return cls(objective, matrix, tuple(senses), np.array(rhs, dtype=dtype), upper, name)


class LpBuilder:
    """Accumulates row blocks and bounds, then freezes them into a ``LinearProgram``."""

    def __init__(self, num_vars: int, *, exact: bool = False, name: str = "lp"):
        self.num_vars = num_vars
        self.exact = exact
        self.name = name
        self._dtype = object if exact else float
        self._zero = Fraction(0) if exact else 0.0
        self.objective = np.array([self._zero] * num_vars, dtype=self._dtype)
        self.upper = np.full(num_vars, np.inf, dtype=self._dtype)
        self._blocks: list[np.ndarray] = []
        self._senses: list[str] = []
        self._rhs: list = []

    def set_objective(self, coefficients: np.ndarray) -> None:
        self.objective = np.asarray(coefficients, dtype=self._dtype).reshape(self.num_vars)

    def set_upper(self, indices, value) -> None:
        self.upper[indices] = value

    def add_rows(self, block: np.ndarray, sense: str, rhs) -> None:
        block = np.asarray(block, dtype=self._dtype).reshape(-1, self.num_vars)
        if np.ndim(rhs) == 0:
            rhs = [rhs] * block.shape[0]
        rhs = list(rhs)
        if len(rhs) != block.shape[0]:
            raise ValueError(f"{block.shape[0]} rows given with {len(rhs)} right-hand sides")
        self._blocks.append(block)
        self._senses.extend([sense] * block.shape[0])
        self._rhs.extend(rhs)

    def build(self) -> LinearProgram:
        if self._blocks:
            matrix = np.vstack(self._blocks)
        else:
            matrix = np.zeros((0, self.num_vars), dtype=self._dtype)
        upper = None if np.all(self.upper == np.inf) else self.upper
        return LinearProgram(
            self.objective,
            matrix,
            tuple(self._senses),
            np.array(self._rhs, dtype=self._dtype),
            upper,
            self.name,
        )


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: Status
    objective: float | Fraction | None
    x: np.ndarray | None
    residual: float
    iterations: int

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


class _BoundedSimplex:
    """Two-phase tableau simplex with bound flipping."""

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        self.exact = lp.exact
        zero = Fraction(0) if self.exact else 0.0
        one = Fraction(1) if self.exact else 1.0
        self.dtype = object if self.exact else float
        self.pivot_tol = zero if self.exact else PIVOT_TOL
        self.cost_tol = zero if self.exact else COST_TOL
        self.iterations = 0
        self.degenerate_run = 0
        self.bland = self.exact

        n, r = lp.num_vars, lp.num_rows
        slack_cols = [k for k, s in enumerate(lp.senses) if s != "=="]
        self.n_struct = n
        self.n_slack = len(slack_cols)
        a = np.array(lp.matrix, dtype=self.dtype).reshape(r, n)
        slack = np.array([[zero] * self.n_slack for _ in range(r)], dtype=self.dtype).reshape(r, self.n_slack)
        for col, k in enumerate(slack_cols):
            slack[k, col] = one if lp.senses[k] == "<=" else -one
        b = np.array(lp.rhs, dtype=self.dtype).reshape(r)
        negative = b < 0
        a[negative] *= -1
        slack[negative] *= -1
        b[negative] *= -1

        # rows whose slack has coefficient +1 start with that slack basic
        basis = [-1] * r
        for col, k in enumerate(slack_cols):
            if slack[k, col] == one:
                basis[k] = n + col
        art_rows = [k for k in range(r) if basis[k] < 0]
        self.n_art = len(art_rows)
        art = np.array([[zero] * self.n_art for _ in range(r)], dtype=self.dtype).reshape(r, self.n_art)
        for col, k in enumerate(art_rows):
            art[k, col] = one
            basis[k] = n + self.n_slack + col

        self.T = np.hstack([a, slack, art])
        self.beta = b
        self.basis = np.array(basis, dtype=np.int64)
        ub = lp.upper_bounds()
        self.ub = np.concatenate(
            [np.array(ub, dtype=self.dtype), np.full(self.n_slack + self.n_art, np.inf, dtype=self.dtype)]
        )
        self.at_upper = np.zeros(self.T.shape[1], dtype=bool)
        self.zero = zero
        logger.debug(
            "simplex %s: %d rows, %d vars, %d slacks, %d artificials, exact=%s",
            lp.name, r, n, self.n_slack, self.n_art, self.exact,
        )

    # --- helpers -----------------------------------------------------------

    def _reduced_costs(self, cost: np.ndarray) -> np.ndarray:
        if self.T.shape[0] == 0:
            return cost.copy()
        return cost - cost[self.basis] @ self.T

    def _choose_entering(self, d: np.ndarray) -> int | None:
        up = (d > self.cost_tol) & ~self.at_upper
        down = (d < -self.cost_tol) & self.at_upper
        eligible = up | down
        # basic columns have zero reduced cost up to noise; never re-enter them
        eligible[self.basis] = False
        candidates = np.nonzero(eligible)[0]
        if candidates.size == 0:
            return None
        if self.bland:
            return int(candidates[0])
        scores = np.abs(np.asarray(d[candidates], dtype=float))
        return int(candidates[int(np.argmax(scores))])

    def _pivot(self, row: int, col: int, d: np.ndarray) -> np.ndarray:
        T = self.T
        T[row] = T[row] / T[row, col]
        column = T[:, col].copy()
        column[row] = self.zero
        nz = np.nonzero(column)[0]
        if nz.size:
            T[nz] -= np.outer(column[nz], T[row])
            if not self.exact:
                block = T[nz]
                block[np.abs(block) < ZERO_TOL] = 0.0
                T[nz] = block
                T[nz, col] = 0.0
        d = d - d[col] * T[row]
        if not self.exact:
            d[np.abs(d) < ZERO_TOL] = 0.0
        d[col] = self.zero
        self.basis[row] = col
        return d

    def _ratio_test(self, j: int, alpha: np.ndarray):
        """Largest step for entering column ``j``: ``(t, leaving row or -1, to_upper)``."""
        limits = []
        dec = np.nonzero(alpha > self.pivot_tol)[0]
        if dec.size:
            limits.append((self.beta[dec] / alpha[dec], dec, False))
        inc = np.nonzero(alpha < -self.pivot_tol)[0]
        if inc.size:
            ub_b = self.ub[self.basis[inc]]
            finite = np.nonzero(ub_b != np.inf)[0]
            if finite.size:
                rows = inc[finite]
                limits.append(((ub_b[finite] - self.beta[rows]) / -alpha[rows], rows, True))
        best = None
        for values, rows, to_upper in limits:
            t_min = values.min()
            tie = self.zero if self.exact else PIVOT_TOL * (1 + abs(float(t_min)))
            pick = rows[np.nonzero(values <= t_min + tie)[0]]
            row = int(pick[np.argmin(self.basis[pick])])
            key = (t_min, int(self.basis[row]))
            if best is None or key < best[0]:
                best = (key, row, to_upper)
        if best is None or self.ub[j] < best[0][0]:
            return self.ub[j], -1, False
        return best[0][0], best[1], best[2]

    def _iterate(self, cost: np.ndarray) -> Status:
        d = self._reduced_costs(cost)
        while True:
            if self.iterations >= MAX_ITERATIONS:
                raise SolverError(
                    f"Simplex on {self.lp.name} stalled after {self.iterations} iterations"
                )
            j = self._choose_entering(d)
            if j is None:
                return "optimal"
            self.iterations += 1
            step = -1 if self.at_upper[j] else 1
            alpha = self.T[:, j] * step
            t, leave, leave_to_upper = self._ratio_test(j, alpha)
            if t == np.inf:
                return "unbounded"
            if not self.exact and t < 0:
                t = 0.0

            if t == 0:
                self.degenerate_run += 1
                if not self.bland and self.degenerate_run >= DEGENERATE_SWITCH:
                    logger.debug("simplex %s: switching to Bland's rule", self.lp.name)
                    self.bland = True
            else:
                self.degenerate_run = 0

            self.beta = self.beta - alpha * t
            if leave < 0:
                # entering variable runs to its opposite bound
                self.at_upper[j] = not self.at_upper[j]
                continue
            entering_value = (self.ub[j] if self.at_upper[j] else self.zero) + step * t
            self.at_upper[int(self.basis[leave])] = leave_to_upper
            self.at_upper[j] = False
            self.beta[leave] = entering_value
            d = self._pivot(leave, j, d)

    def _nonbasic_values(self) -> np.ndarray:
        values = np.array([self.zero] * self.T.shape[1], dtype=self.dtype)
        values[self.at_upper] = self.ub[self.at_upper]
        return values

    def _phase_one(self) -> bool:
        if self.n_art == 0:
            return True
        first_art = self.n_struct + self.n_slack
        cost = np.array([self.zero] * self.T.shape[1], dtype=self.dtype)
        cost[first_art:] = -1
        self._iterate(cost)
        art_rows = np.nonzero(self.basis >= first_art)[0]
        infeasibility = sum((self.beta[k] for k in art_rows), self.zero)
        if infeasibility > (self.zero if self.exact else FEASIBILITY_TOL):
            logger.debug("simplex %s: phase one infeasibility %s", self.lp.name, infeasibility)
            return False

        redundant = []
        scratch = np.array([self.zero] * self.T.shape[1], dtype=self.dtype)
        for k in art_rows:
            row = self.T[k, :first_art]
            if self.exact:
                candidates = np.nonzero(row != 0)[0]
                col = int(candidates[0]) if candidates.size else -1
            else:
                magnitude = np.abs(row)
                candidates = np.nonzero(magnitude > PIVOT_TOL)[0]
                col = int(candidates[np.argmax(magnitude[candidates])]) if candidates.size else -1
            if col < 0:
                redundant.append(k)
                continue
            value = self.ub[col] if self.at_upper[col] else self.zero
            self.at_upper[col] = False
            self._pivot(k, col, scratch)
            self.beta[k] = value
        if redundant:
            logger.debug("simplex %s: dropping %d redundant rows", self.lp.name, len(redundant))
            keep = np.setdiff1d(np.arange(len(self.basis)), redundant)
            self.T = self.T[keep]
            self.beta = self.beta[keep]
            self.basis = self.basis[keep]
        self.T = self.T[:, :first_art]
        self.ub = self.ub[:first_art]
        self.at_upper = self.at_upper[:first_art]
        return True

    def run(self) -> LpSolution:
        if not self._phase_one():
            return LpSolution("infeasible", None, None, float("inf"), self.iterations)
        cost = np.array([self.zero] * self.T.shape[1], dtype=self.dtype)
        cost[: self.n_struct] = np.array(self.lp.objective, dtype=self.dtype)
        if self._iterate(cost) == "unbounded":
            return LpSolution("unbounded", None, None, float("inf"), self.iterations)
        values = self._nonbasic_values()
        values[self.basis] = self.beta
        x = values[: self.n_struct]
        if not self.exact:
            x = np.clip(
                np.asarray(x, dtype=float), 0.0, np.asarray(self.ub[: self.n_struct], dtype=float)
            )
        objective = sum((c * v for c, v in zip(self.lp.objective, x)), self.zero)
        return LpSolution(
            "optimal",
            objective if self.exact else float(objective),
            x,
            residual(self.lp, x),
            self.iterations,
        )


def residual(lp: LinearProgram, x: np.ndarray) -> float:
    """Largest violation of any row or bound by ``x`` (as a float)."""
    worst = 0.0
    if lp.num_rows:
        lhs = lp.matrix @ x
        for value, sense, b in zip(lhs, lp.senses, lp.rhs):
            gap = float(value - b)
            if sense == "<=":
                worst = max(worst, gap)
            elif sense == ">=":
                worst = max(worst, -gap)
            else:
                worst = max(worst, abs(gap))
    xf = np.asarray(x, dtype=float)
    worst = max(worst, float(np.max(-xf, initial=0.0)))
    if lp.upper is not None:
        worst = max(worst, float(np.max(xf - np.asarray(lp.upper, dtype=float), initial=0.0)))
    return worst


def solve(lp: LinearProgram, *, retry_exact: bool = False) -> LpSolution:
    """
    Solve ``lp`` in binary64 arithmetic.

    Args:
        lp: The program (float data; exact programs are routed to
            :func:`solve_exact`).
        retry_exact: On a stalled float solve, rerun the program over
            ``Fraction`` instead of raising.

    Returns:
        LpSolution with status, objective, primal vector and max residual.

    Raises:
        SolverError: if the iteration cap is hit (and no retry is requested).
    """
    if lp.exact:
        return solve_exact(lp)
    try:
        solution = _BoundedSimplex(lp).run()
    except SolverError:
        if not retry_exact:
            raise
        logger.warning("Float simplex stalled on %s; retrying over rationals", lp.name)
        return solve_exact(lp.to_exact())
    if solution.optimal and solution.residual > RESIDUAL_WARN:
        warnings.warn(
            f"LP {lp.name} solved with residual {solution.residual:.3e}",
            UserWarning,
            stacklevel=2,
        )
    logger.debug(
        "solve %s: %s in %d iterations, objective=%s",
        lp.name, solution.status, solution.iterations, solution.objective,
    )
    return solution


def solve_exact(lp: LinearProgram) -> LpSolution:
    """Solve ``lp`` over ``Fraction``; float programs are converted exactly first."""
    exact = lp.to_exact()
    solution = _BoundedSimplex(exact).run()
    logger.debug(
        "solve_exact %s: %s in %d iterations", lp.name, solution.status, solution.iterations
    )
    return solution
