from fractions import Fraction

import numpy as np
import pytest

from nlgame.config import Settings
from nlgame.exceptions import BudgetExceededError, GameValidationError
from nlgame.game_model import (
    BUILTINS,
    Game,
    RepeatedGame,
    builtin,
    complement,
    find_violations,
    proper_subsets,
    random_game,
    tensor_power,
    threshold_count,
    threshold_event,
    validate,
    win_count,
)


class TestSubsets:
    """Test suite for party subset helpers."""

    def test_proper_subsets_order(self):
        """Test that subsets come by size, then lexicographically."""
        assert proper_subsets(3) == [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2)]

    def test_proper_subsets_excludes_full_set(self):
        """Test that the whole party set is never listed."""
        assert (0, 1) not in proper_subsets(2)
        assert len(proper_subsets(4)) == 2**4 - 2

    def test_complement(self):
        """Test the complement of a subset."""
        assert complement((0, 2), 4) == (1, 3)


class TestGameValidation:
    """Test suite for Game construction and validation."""

    def test_builtins_are_valid(self):
        """Test that every builtin game passes validation."""
        for name in BUILTINS:
            game = builtin(name)
            assert find_violations(game) == []
            assert game.name == name

    def test_unknown_builtin_lists_available(self):
        """Test the error for an unknown builtin name."""
        with pytest.raises(ValueError, match="Available"):
            builtin("magic_square")

    def test_single_party_rejected(self):
        """Test that a one-party game is reported."""
        game = Game(np.array([0.5, 0.5]), np.ones((2, 2)), (2,))
        kinds = [v.kind for v in find_violations(game)]
        assert "too_few_parties" in kinds

    def test_every_violation_is_listed(self):
        """Test that validation collects all problems with their cells."""
        query = np.array([[0.5, 0.5], [-0.1, 0.0]])
        predicate = np.ones((2, 2, 2, 2))
        predicate[1, 0, 1, 1] = 0.5
        with pytest.raises(GameValidationError) as excinfo:
            validate(Game(query, predicate, (2, 2)))
        kinds = {v.kind: v for v in excinfo.value.violations}
        assert kinds["negative_mass"].cell == (1, 0)
        assert kinds["non_binary_predicate"].cell == (1, 0, 1, 1)
        assert "query_not_normalized" in kinds

    def test_exact_query_checked_exactly(self):
        """Test that exact masses must sum to exactly one."""
        exact = np.array([[Fraction(1, 3), Fraction(1, 3)], [Fraction(1, 3), Fraction(0)]], dtype=object)
        game = Game.from_exact(exact, np.ones((2, 2, 2, 2)), (2, 2))
        assert find_violations(game) == []
        skewed = exact.copy()
        skewed[1, 1] = Fraction(1, 10**15)
        bad = Game.from_exact(skewed, np.ones((2, 2, 2, 2)), (2, 2))
        assert [v.kind for v in find_violations(bad)] == ["query_not_normalized"]

    def test_predicate_shape_mismatch(self):
        """Test that a predicate of the wrong size cannot be built."""
        with pytest.raises(GameValidationError, match="predicate_shape"):
            Game(np.full((2, 2), 0.25), np.ones(5), (2, 2))

    def test_flat_predicate_is_reshaped(self):
        """Test that a flat predicate of the right size is accepted."""
        game = Game(np.full((2, 2), 0.25), np.ones(16), (2, 2))
        assert game.predicate.shape == (2, 2, 2, 2)

    def test_query_fractions(self):
        """Test exact masses for builtin and float games."""
        assert builtin("anticorrelation").query_fractions()[1, 1, 0] == Fraction(1, 3)
        float_game = Game(np.full((2, 2), 0.25), np.ones(16), (2, 2))
        assert float_game.query_fractions()[0, 0] == Fraction(1, 4)

    def test_random_game_is_valid(self):
        """Test that sampled games are well formed and reproducible."""
        a = random_game(2, 2, (2, 3), np.random.default_rng(7))
        b = random_game(2, 2, (2, 3), np.random.default_rng(7))
        assert a.response_sizes == (2, 3)
        np.testing.assert_array_equal(a.predicate, b.predicate)


class TestBuiltinCatalogue:
    """Test suite for the content of the builtin games."""

    def test_chsh_predicate(self):
        """Test the CHSH win condition u1 xor u2 == x1 and x2."""
        game = builtin("chsh")
        assert game.predicate[1, 1, 0, 1] == 1.0
        assert game.predicate[1, 1, 0, 0] == 0.0
        assert game.predicate[0, 1, 1, 1] == 1.0

    def test_anticorrelation_support(self):
        """Test that queries are uniform on weight-two strings."""
        game = builtin("anticorrelation")
        support = {tuple(int(c) for c in cell) for cell in np.argwhere(game.query_probs > 0)}
        assert support == {(1, 1, 0), (1, 0, 1), (0, 1, 1)}

    def test_anticorrelation_variants(self):
        """Test that the queried pair must disagree, or agree in the literal variant."""
        game = builtin("anticorrelation")
        literal = builtin("anticorrelation_literal")
        assert game.predicate[1, 1, 0, 0, 1, 1] == 1.0
        assert game.predicate[1, 1, 0, 1, 1, 0] == 0.0
        assert literal.predicate[1, 1, 0, 1, 1, 0] == 1.0
        assert literal.predicate[1, 1, 0, 0, 1, 0] == 0.0


class TestRepeatedGame:
    """Test suite for parallel repetition tables."""

    @pytest.fixture
    def chsh2(self) -> RepeatedGame:
        return tensor_power(builtin("chsh"), 2)

    def test_alphabets(self, chsh2):
        """Test party-major letter alphabets."""
        assert chsh2.query_sizes == (4, 4)
        assert chsh2.response_sizes == (4, 4)
        assert chsh2.cells == 256

    def test_query_is_product(self, chsh2):
        """Test that the repeated query distribution is uniform for CHSH."""
        np.testing.assert_allclose(chsh2.query.mass, np.full((4, 4), 1 / 16))

    def test_wins_match_win_count(self, chsh2):
        """Test the win table against the coordinate-wise count."""
        x = [(1, 1), (0, 1)]
        u = [(0, 1), (1, 1)]
        letters = chsh2.query_letter(x) + chsh2.response_letter(u)
        assert chsh2.wins[letters] == win_count(chsh2, x, u) == 2

    def test_win_count_rejects_wrong_length(self, chsh2):
        """Test that coordinate lists must have n entries."""
        with pytest.raises(ValueError):
            win_count(chsh2, [(0, 0)], [(0, 0)])

    def test_threshold_game_of_full_delta(self, chsh2):
        """Test that Delta = 1 gives the all-win game."""
        np.testing.assert_array_equal(chsh2.threshold_game(1).predicate, chsh2.as_game().predicate)

    def test_threshold_event_half(self, chsh2):
        """Test that Delta = 1/2 needs one win out of two."""
        event = threshold_event(chsh2, Fraction(1, 2))
        np.testing.assert_array_equal(event, chsh2.wins >= 1)

    def test_repeated_exact_masses(self, chsh2):
        """Test that exact query masses carry over to the repeated game."""
        assert chsh2.as_game().query_fractions()[0, 3] == Fraction(1, 16)

    def test_budget_exceeded(self):
        """Test that oversized powers raise with the budget hint."""
        with pytest.raises(BudgetExceededError, match="NLGAME_BUDGET_CELLS"):
            tensor_power(builtin("chsh"), 3, Settings(budget_cells=100))

    def test_zero_repetitions_rejected(self):
        """Test that n must be positive."""
        with pytest.raises(ValueError):
            RepeatedGame(builtin("chsh"), 0)


class TestThresholdCount:
    """Test suite for the exact threshold count."""

    @pytest.mark.parametrize(
        "n,delta,expected",
        [(3, Fraction(2, 3), 2), (10, 0.3, 3), (7, 1, 7), (5, Fraction(1, 100), 1), (4, Fraction(1, 2), 2)],
    )
    def test_ceiling(self, n, delta, expected):
        """Test k = ceil(n * Delta)."""
        assert threshold_count(n, delta) == expected

    @pytest.mark.parametrize("delta", [0, -0.1, 1.5])
    def test_out_of_range(self, delta):
        """Test that Delta outside (0, 1] is refused."""
        with pytest.raises(ValueError):
            threshold_count(4, delta)

    @pytest.mark.parametrize("n,delta", [(5, 0.2), (10, 0.1), (3, 1 / 3), (3, 2 / 3), (20, 0.35)])
    def test_float_reads_as_decimal(self, n, delta):
        """Test that float thresholds are not pushed up by their binary rounding."""
        exact = Fraction(str(delta))
        assert threshold_count(n, delta) == -(-exact.numerator * n // exact.denominator)

    @pytest.mark.parametrize("n,delta,expected", [(5, 0.2, 1), (10, 0.1, 1), (3, 1 / 3, 1)])
    def test_float_small_counts(self, n, delta, expected):
        """Test single-win thresholds given as floats."""
        assert threshold_count(n, delta) == expected

    def test_event_keeps_single_wins(self):
        """Test that the event at 0.2 over five copies keeps every cell with one win."""
        rg = tensor_power(builtin("chsh"), 5)
        event = threshold_event(rg, 0.2)
        assert np.array_equal(event, rg.wins >= 1)
        assert np.array_equal(event, threshold_event(rg, Fraction(1, 5)))
        assert event[rg.wins == 1].all()
