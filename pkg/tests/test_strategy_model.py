import numpy as np
import pytest

from nlgame.game_model import builtin
from nlgame.strategy_model import (
    DeterministicStrategy,
    HvtMixture,
    is_nonsignalling,
    is_sub_nonsignalling,
    pr_box,
    product_channel,
    random_deterministic,
    random_hvt_mixture,
    subset_marginal,
    to_channel,
)
from nlgame.tensor_core import Channel


def _signalling_channel() -> Channel:
    """Party 1 answers with party 2's query."""
    array = np.zeros((2, 2, 2, 2))
    for x1, x2 in np.ndindex(2, 2):
        array[x1, x2, x2, 0] = 1.0
    return Channel.from_array(array, ["X1", "X2"], ["U1", "U2"])


class TestDeterministicStrategy:
    """Test suite for deterministic strategies and their channels."""

    def test_out_of_range_response(self):
        """Test that maps must stay inside the response alphabet."""
        with pytest.raises(ValueError, match="leaves response alphabet"):
            DeterministicStrategy(((0, 2), (0, 1)), (2, 2))

    def test_respond(self):
        """Test coordinate-wise answers."""
        s = DeterministicStrategy(((1, 0), (0, 0)), (2, 2))
        assert s.respond((0, 1)) == (1, 0)

    def test_channel_is_point_mass(self):
        """Test that the induced channel puts mass one on the answer."""
        s = DeterministicStrategy(((1, 0), (0, 1)), (2, 2))
        ch = to_channel(s)
        assert ch.mass[0, 1, 1, 1] == 1.0
        np.testing.assert_allclose(ch.output_sums(), np.ones((2, 2)))

    def test_alphabet_mismatch(self):
        """Test that converting against the wrong game fails."""
        s = DeterministicStrategy(((0, 0, 0), (0, 0, 0)), (2, 2))
        with pytest.raises(ValueError, match="do not match"):
            to_channel(s, builtin("chsh"))

    def test_constant(self):
        """Test the constant strategy."""
        s = DeterministicStrategy.constant(builtin("anticorrelation"), 1)
        assert s.maps == ((1, 1), (1, 1), (1, 1))


class TestHvtMixture:
    """Test suite for hidden-variable mixtures."""

    def test_weights_must_sum_to_one(self):
        """Test weight validation."""
        s = DeterministicStrategy(((0, 0), (0, 0)), (2, 2))
        with pytest.raises(ValueError, match="sum to 1"):
            HvtMixture(np.array([0.5, 0.2]), (s, s))

    def test_mixture_channel_is_average(self):
        """Test that the mixture channel averages its components."""
        a = DeterministicStrategy(((0, 0), (0, 0)), (2, 2))
        b = DeterministicStrategy(((1, 1), (1, 1)), (2, 2))
        ch = to_channel(HvtMixture(np.array([0.25, 0.75]), (a, b)))
        assert ch.mass[0, 0, 0, 0] == pytest.approx(0.25)
        assert ch.mass[1, 0, 1, 1] == pytest.approx(0.75)

    def test_random_mixture_is_nonsignalling(self):
        """Test that random HVT mixtures are nonsignalling channels."""
        rng = np.random.default_rng(11)
        for _ in range(100):
            components = int(rng.integers(1, 8))
            mixture = random_hvt_mixture((2, 3, 2), (2, 2, 3), rng, components=components)
            report = is_nonsignalling(to_channel(mixture))
            assert report.passed
            assert report.max_violation <= 1e-12

    @pytest.mark.slow
    def test_random_mixture_is_sub_nonsignalling(self):
        """Test that random HVT mixtures of two and three parties pass the SNS check."""
        rng = np.random.default_rng(12)
        shapes = [((2, 2), (2, 2)), ((2, 3), (3, 2)), ((2, 3, 2), (2, 2, 3))]
        for k in range(100):
            query_sizes, response_sizes = shapes[k % len(shapes)]
            mixture = random_hvt_mixture(query_sizes, response_sizes, rng, components=int(rng.integers(1, 8)))
            assert is_sub_nonsignalling(to_channel(mixture)).passed


class TestNonsignalling:
    """Test suite for the NS and SNS membership checks."""

    def test_pr_box_is_nonsignalling(self):
        """Test that the PR box passes with uniform marginals."""
        report = is_nonsignalling(pr_box())
        assert report.passed
        assert report.max_violation == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(subset_marginal(pr_box(), (0,)), np.full((2, 2, 2), 0.5))

    def test_signalling_channel_detected(self):
        """Test that signalling is reported with its witness subset."""
        report = is_nonsignalling(_signalling_channel())
        assert not report
        assert report.max_violation == pytest.approx(1.0)
        assert report.witness[0] == (0,)

    def test_deterministic_is_nonsignalling(self):
        """Test that local deterministic strategies pass both checks."""
        s = random_deterministic((2, 2, 2), (2, 2, 2), np.random.default_rng(0))
        ch = to_channel(s)
        assert is_nonsignalling(ch).passed
        assert is_sub_nonsignalling(ch).passed

    def test_sub_nonsignalling_witness_dominates(self):
        """Test that SNS witnesses are channels above every marginal."""
        sub = pr_box().scaled(0.5)
        report = is_sub_nonsignalling(sub)
        assert report.passed
        for subset, q in report.witness.items():
            ceiling = subset_marginal(sub, subset).max(axis=tuple(i for i in range(2) if i not in subset))
            assert np.all(q.mass >= ceiling - 1e-12)
            np.testing.assert_allclose(q.output_sums(), 1.0)

    def test_signalling_subchannel_can_be_sub_nonsignalling(self):
        """Test that dropping mass from a signalling channel can make it SNS."""
        array = np.asarray(_signalling_channel().mass) * 0.5
        ch = Channel.from_array(array, ["X1", "X2"], ["U1", "U2"], "subchannel")
        assert not is_nonsignalling(ch).passed
        assert is_sub_nonsignalling(ch).passed

    def test_signalling_channel_is_not_sub_nonsignalling(self):
        """Test that a full signalling channel has no dominating witness."""
        report = is_sub_nonsignalling(_signalling_channel())
        assert not report.passed
        assert report.witness is None


class TestProductChannel:
    """Test suite for coordinatewise products."""

    def test_product_of_pr_boxes(self):
        """Test that two PR boxes form an NS channel on letter alphabets."""
        ch = product_channel([pr_box(), pr_box()])
        assert ch.input_shape.sizes == (4, 4)
        assert ch.output_shape.sizes == (4, 4)
        assert is_nonsignalling(ch).passed
        # both parties see (1, 1) as letter 3; party 1 answers (0, 1), party 2 answers (1, 0)
        assert ch.mass[3, 3, 1, 2] == pytest.approx(0.25)

    def test_subchannel_product_flagged(self):
        """Test that any subchannel factor makes a subchannel product."""
        ch = product_channel([pr_box(), pr_box().scaled(0.5)])
        assert ch.normalization == "subchannel"

    def test_empty_product(self):
        """Test that at least one factor is needed."""
        with pytest.raises(ValueError):
            product_channel([])
