from fractions import Fraction

import numpy as np
import pytest

from nlgame.lp_core import LinearProgram, LpBuilder, residual, solve, solve_exact


@pytest.fixture
def textbook_lp() -> LinearProgram:
    """max x + y  s.t.  x + 2y <= 4,  3x + y <= 6."""
    builder = LpBuilder(2, name="textbook")
    builder.set_objective(np.array([1.0, 1.0]))
    builder.add_rows(np.array([[1.0, 2.0], [3.0, 1.0]]), "<=", [4.0, 6.0])
    return builder.build()


class TestLinearProgram:
    """Test suite for LinearProgram validation and text dumps."""

    def test_shape_mismatch(self):
        """Test that the matrix must match the variable count."""
        with pytest.raises(ValueError, match="does not match"):
            LinearProgram(np.zeros(3), np.zeros((1, 2)), ("<=",), np.zeros(1))

    def test_unknown_sense(self):
        """Test that senses are restricted and listed."""
        with pytest.raises(ValueError, match="Available"):
            LinearProgram(np.zeros(1), np.ones((1, 1)), ("<",), np.zeros(1))

    def test_non_finite_coefficient(self):
        """Test that NaN data is refused for float programs."""
        with pytest.raises(ValueError, match="Non-finite"):
            LinearProgram(np.array([np.nan]), np.ones((1, 1)), ("<=",), np.ones(1))

    def test_dump_load_preserves_program(self, textbook_lp):
        """Test that a dumped program parses back to the same data."""
        text = textbook_lp.dump()
        assert text.startswith("# nlgame-lp float textbook\n")
        back = LinearProgram.load(text)
        assert back.name == "textbook"
        assert back.senses == textbook_lp.senses
        np.testing.assert_array_equal(back.matrix, textbook_lp.matrix)
        np.testing.assert_array_equal(back.objective, textbook_lp.objective)

    def test_exact_dump_keeps_fractions(self, textbook_lp):
        """Test that exact dumps hold rational text."""
        exact = textbook_lp.to_exact()
        assert exact.exact
        back = LinearProgram.load(exact.dump())
        assert back.exact
        assert back.rhs[0] == Fraction(4)

    def test_load_rejects_foreign_text(self):
        """Test that a missing header is reported."""
        with pytest.raises(ValueError, match="header"):
            LinearProgram.load("vars 2\n")

    def test_builder_rhs_count(self):
        """Test that a block needs one right-hand side per row."""
        builder = LpBuilder(2)
        with pytest.raises(ValueError, match="right-hand sides"):
            builder.add_rows(np.eye(2), "<=", [1.0, 2.0, 3.0])


class TestSolve:
    """Test suite for the bounded simplex in float and exact arithmetic."""

    def test_textbook_optimum(self, textbook_lp):
        """Test the known optimum 14/5 at (8/5, 6/5)."""
        solution = solve(textbook_lp)
        assert solution.optimal
        assert solution.objective == pytest.approx(2.8)
        np.testing.assert_allclose(solution.x, [1.6, 1.2], atol=1e-12)
        assert solution.residual < 1e-12

    def test_exact_optimum(self, textbook_lp):
        """Test that the exact solver returns the rational optimum."""
        solution = solve_exact(textbook_lp)
        assert solution.objective == Fraction(14, 5)
        assert list(solution.x) == [Fraction(8, 5), Fraction(6, 5)]
        assert solution.residual == 0.0

    def test_equality_and_lower_rows(self):
        """Test a program mixing equality and >= rows."""
        builder = LpBuilder(3)
        builder.set_objective(np.array([-1.0, -2.0, -3.0]))
        builder.add_rows(np.ones(3), "==", 1.0)
        builder.add_rows(np.array([0.0, 1.0, 1.0]), ">=", 0.5)
        solution = solve(builder.build())
        assert solution.optimal
        assert solution.objective == pytest.approx(-1.5)
        np.testing.assert_allclose(solution.x, [0.5, 0.5, 0.0], atol=1e-12)

    def test_upper_bounds_flip(self):
        """Test that finite upper bounds are honored without explicit rows."""
        builder = LpBuilder(2)
        builder.set_objective(np.array([1.0, 1.0]))
        builder.set_upper(slice(None), 0.25)
        solution = solve(builder.build())
        assert solution.optimal
        assert solution.objective == pytest.approx(0.5)

    def test_infeasible(self):
        """Test the infeasible status."""
        builder = LpBuilder(1)
        builder.add_rows(np.ones(1), ">=", 2.0)
        builder.set_upper(0, 1.0)
        assert solve(builder.build()).status == "infeasible"

    def test_unbounded(self):
        """Test the unbounded status."""
        builder = LpBuilder(2)
        builder.set_objective(np.array([1.0, 0.0]))
        builder.add_rows(np.array([0.0, 1.0]), "<=", 1.0)
        assert solve(builder.build()).status == "unbounded"

    def test_residual_measures_worst_row(self, textbook_lp):
        """Test residual on an infeasible point."""
        assert residual(textbook_lp, np.array([2.0, 2.0])) == pytest.approx(2.0)
        assert residual(textbook_lp, np.array([-0.5, 0.0])) == pytest.approx(0.5)

    def test_degenerate_program_terminates(self):
        """Test a highly degenerate assignment polytope."""
        k = 5
        builder = LpBuilder(k * k)
        rng = np.random.default_rng(3)
        builder.set_objective(rng.integers(0, 3, size=k * k).astype(float))
        builder.add_rows(np.kron(np.eye(k), np.ones(k)), "==", 1.0)
        builder.add_rows(np.kron(np.ones(k), np.eye(k)), "==", 1.0)
        solution = solve(builder.build())
        assert solution.optimal
        exact = solve_exact(builder.build())
        assert float(exact.objective) == pytest.approx(solution.objective)
