import json
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from nlgame.exceptions import GameFileError, GameValidationError
from nlgame.game_file import (
    canonical_json,
    digest,
    dump_game,
    load_game,
    load_strategy,
    parse,
    parse_joint,
    parse_strategy,
    serialize,
)
from nlgame.game_model import builtin


def _dense_doc(**overrides) -> dict:
    doc = {
        "name": "flat",
        "m": 2,
        "query_alphabets": [2, 2],
        "response_alphabets": [2, 2],
        "query": {"kind": "dense", "masses": ["1/4", "1/4", "1/4", "1/4"]},
        "predicate": [1] * 16,
    }
    doc.update(overrides)
    return doc


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as tmp:
        yield Path(tmp)


class TestParse:
    """Test suite for GameFile parsing."""

    def test_dense_document(self):
        """Test a dense query with rational strings."""
        game = parse(_dense_doc())
        assert game.name == "flat"
        assert game.query_fractions()[1, 0] == Fraction(1, 4)
        assert game.predicate.shape == (2, 2, 2, 2)

    def test_support_document_with_wins(self):
        """Test support entries and a win list."""
        doc = _dense_doc(
            query={"kind": "support", "entries": [[[0, 1], "1/3"], [[1, 0], "2/3"]]},
            predicate={"wins": [[[0, 1], [1, 1]]]},
        )
        game = parse(doc)
        assert game.query_fractions()[1, 0] == Fraction(2, 3)
        assert game.query_probs[0, 0] == 0.0
        assert game.predicate.sum() == 1.0
        assert game.predicate[0, 1, 1, 1] == 1.0

    def test_decimal_strings_are_exact(self):
        """Test that decimal strings sum exactly while binary floats do not."""
        masses = ["0.1"] * 10
        doc = _dense_doc(query_alphabets=[2, 5], query={"kind": "dense", "masses": masses}, predicate=[0] * 40)
        assert parse(doc).query_fractions()[0, 0] == Fraction(1, 10)
        doc["query"]["masses"] = [0.1] * 10
        with pytest.raises(GameFileError, match="expected exactly 1"):
            parse(doc)

    @pytest.mark.parametrize(
        "query",
        [
            {"kind": "dense", "masses": ["1/2", "1/2"]},
            {"kind": "dense", "masses": [True, 0, 0, 0]},
            {"kind": "dense", "masses": ["-1/4", "1/2", "1/2", "1/4"]},
            {"kind": "dense", "masses": ["a", "1/4", "1/4", "1/4"]},
            {"kind": "histogram", "masses": []},
            {"kind": "support", "entries": [[[0, 0], "1/2"], [[0, 0], "1/2"]]},
            {"kind": "support", "entries": [[[0, 2], "1"]]},
        ],
    )
    def test_bad_queries(self, query):
        """Test that malformed query sections raise GameFileError."""
        with pytest.raises(GameFileError):
            parse(_dense_doc(query=query))

    def test_party_count_mismatch(self):
        """Test that 'm' must agree with the alphabets."""
        with pytest.raises(GameFileError, match="disagrees"):
            parse(_dense_doc(m=3))

    def test_non_binary_predicate(self):
        """Test that predicate entries must be 0 or 1."""
        with pytest.raises(GameFileError, match="0 or 1"):
            parse(_dense_doc(predicate=[2] * 16))

    def test_unknown_predicate_form(self):
        """Test that predicate forms are listed."""
        with pytest.raises(GameFileError, match="Available"):
            parse(_dense_doc(predicate={"sparse": []}))

    def test_single_party_fails_validation(self):
        """Test that a well-formed document can still be an invalid game."""
        doc = _dense_doc(
            m=1,
            query_alphabets=[2],
            response_alphabets=[2],
            query={"kind": "dense", "masses": ["1/2", "1/2"]},
            predicate=[1, 0, 0, 1],
        )
        with pytest.raises(GameValidationError, match="too_few_parties"):
            parse(doc)


class TestSerialize:
    """Test suite for canonical serialization and digests."""

    @pytest.mark.parametrize("name", ["chsh", "anticorrelation", "constant_lose"])
    def test_builtin_survives_serialization(self, name):
        """Test that parse(serialize(g)) keeps the game and its digest."""
        game = builtin(name)
        back = parse(json.loads(json.dumps(serialize(game))))
        np.testing.assert_array_equal(back.predicate, game.predicate)
        assert digest(back) == digest(game)

    def test_digest_depends_on_content(self):
        """Test that names and predicates change the digest."""
        game = builtin("chsh")
        assert digest(game) != digest(game.with_predicate(1 - game.predicate))
        assert digest(game) != digest(game.with_predicate(game.predicate, name="other"))
        assert len(digest(game)) == 64

    def test_canonical_json_is_compact(self):
        """Test the canonical form has sorted keys and no spaces."""
        text = canonical_json(builtin("chsh"))
        assert " " not in text
        assert text.index('"m"') < text.index('"name"')

    def test_dump_and_load(self, temp_dir):
        """Test writing a GameFile and loading it by path."""
        path = temp_dir / "chsh.json"
        dump_game(builtin("chsh"), path)
        assert digest(load_game(path)) == digest(builtin("chsh"))

    def test_load_builtin_prefix(self):
        """Test builtin references."""
        assert load_game("builtin:chsh").name == "chsh"
        with pytest.raises(ValueError, match="Available"):
            load_game("builtin:nope")

    def test_missing_and_corrupt_files(self, temp_dir):
        """Test file errors."""
        with pytest.raises(GameFileError, match="No such file"):
            load_game(temp_dir / "missing.json")
        bad = temp_dir / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(GameFileError, match="not valid JSON"):
            load_game(bad)


class TestStrategyFiles:
    """Test suite for strategy and target documents."""

    def test_deterministic_strategy(self):
        """Test a deterministic strategy document."""
        doc = {"kind": "deterministic", "maps": [[0, 1], [1, 1]], "response_alphabets": [2, 2]}
        ch = parse_strategy(doc, (2, 2), (2, 2))
        assert ch.mass[1, 0, 1, 1] == 1.0

    def test_channel_strategy(self, temp_dir):
        """Test a subchannel strategy document loaded from disk."""
        doc = {
            "kind": "channel",
            "normalization": "subchannel",
            "query_alphabets": [2, 2],
            "response_alphabets": [2, 2],
            "masses": ["1/8"] * 16,
        }
        path = temp_dir / "s.json"
        path.write_text(json.dumps(doc))
        ch = load_strategy(path, (2, 2), (2, 2))
        assert ch.normalization == "subchannel"
        np.testing.assert_allclose(ch.output_sums(), 0.5)

    def test_channel_rows_checked(self):
        """Test that an overfull channel is refused."""
        doc = {
            "kind": "channel",
            "query_alphabets": [2, 2],
            "response_alphabets": [2, 2],
            "masses": ["1/2"] * 16,
        }
        with pytest.raises(GameFileError, match="Invalid strategy channel"):
            parse_strategy(doc, (2, 2), (2, 2))

    def test_alphabet_mismatch(self):
        """Test that strategies must match the requested alphabets."""
        doc = {"kind": "deterministic", "maps": [[0, 1], [1, 1]], "response_alphabets": [2, 2]}
        with pytest.raises(GameFileError, match="do not match"):
            parse_strategy(doc, (4, 4), (4, 4))

    def test_unknown_kind(self):
        """Test that strategy kinds are listed."""
        with pytest.raises(GameFileError, match="Available"):
            parse_strategy({"kind": "quantum"}, (2, 2), (2, 2))

    def test_joint_target(self):
        """Test a target joint over the game's alphabets."""
        joint = parse_joint({"kind": "joint", "masses": ["1/16"] * 16}, builtin("chsh"))
        assert joint.labels == ("X1", "X2", "U1", "U2")
        with pytest.raises(GameFileError):
            parse_joint({"kind": "joint", "masses": ["1/8"] * 16}, builtin("chsh"))
