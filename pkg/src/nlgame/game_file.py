"""
GameFile ingestion and canonical serialization.

A GameFile is a JSON document::

    {
      "name": "chsh",
      "m": 2,
      "query_alphabets": [2, 2],
      "response_alphabets": [2, 2],
      "query": {"kind": "support", "entries": [[[0, 0], "1/4"], ...]},
      "predicate": {"wins": [[[0, 0], [0, 0]], ...]}
    }

``query`` may instead be ``{"kind": "dense", "masses": [...]}`` with one
entry per query tuple in row-major order. ``predicate`` may be a bare flat
0/1 list, ``{"dense": [...]}`` or ``{"wins": [[x, u], ...]}``. Masses are
rational strings (``"1/3"``), integers or decimal strings and must sum to
exactly 1.

Strategy files describe a channel on some alphabets::

    {"kind": "channel", "normalization": "subchannel",
     "query_alphabets": [...], "response_alphabets": [...], "masses": [...]}

or a deterministic strategy ``{"kind": "deterministic", "maps": [[...], ...],
"response_alphabets": [...]}``. Target files for rounding use
``{"kind": "joint", "masses": [...]}`` over the game's alphabets.
"""

import hashlib
import json
import logging
import math
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from nlgame.exceptions import GameFileError
from nlgame.game_model import Game, builtin, validate
from nlgame.strategy_model import DeterministicStrategy, to_channel
from nlgame.tensor_core import AlphabetShape, Channel, JointTable, query_label, response_label

logger = logging.getLogger(__name__)

BUILTIN_PREFIX = "builtin:"


def _rational(value: Any, where: str) -> Fraction:
    if isinstance(value, bool):
        raise GameFileError(f"{where}: boolean {value!r} is not a mass")
    if isinstance(value, (int, str)):
        try:
            result = Fraction(value)
        except (ValueError, ZeroDivisionError):
            raise GameFileError(f"{where}: cannot parse {value!r} as a rational") from None
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise GameFileError(f"{where}: non-finite mass {value!r}")
        result = Fraction(value)
    else:
        raise GameFileError(f"{where}: expected a number or rational string, got {type(value).__name__}")
    if result < 0:
        raise GameFileError(f"{where}: negative mass {value!r}")
    return result


def _sizes(doc: dict, key: str) -> tuple[int, ...]:
    raw = doc.get(key)
    if not isinstance(raw, list) or not raw:
        raise GameFileError(f"'{key}' must be a nonempty list of alphabet sizes")
    if any(isinstance(s, bool) or not isinstance(s, int) or s < 1 for s in raw):
        raise GameFileError(f"'{key}' entries must be positive integers, got {raw}")
    return tuple(raw)


def _index(raw: Any, sizes: Sequence[int], where: str) -> tuple[int, ...]:
    if not isinstance(raw, list) or len(raw) != len(sizes):
        raise GameFileError(f"{where}: expected an index of length {len(sizes)}, got {raw!r}")
    for k, (v, s) in enumerate(zip(raw, sizes)):
        if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < s:
            raise GameFileError(f"{where}: coordinate {k} = {v!r} leaves range(0, {s})")
    return tuple(raw)


def _parse_query(section: Any, sizes: tuple[int, ...]) -> np.ndarray:
    if not isinstance(section, dict):
        raise GameFileError("'query' must be an object with a 'kind'")
    kind = section.get("kind")
    exact = np.full(sizes, Fraction(0), dtype=object)
    if kind == "dense":
        masses = section.get("masses")
        if not isinstance(masses, list) or len(masses) != math.prod(sizes):
            raise GameFileError(
                f"dense query needs {math.prod(sizes)} masses, got "
                f"{len(masses) if isinstance(masses, list) else type(masses).__name__}"
            )
        for k, v in enumerate(masses):
            exact.flat[k] = _rational(v, f"query mass {k}")
    elif kind == "support":
        entries = section.get("entries")
        if not isinstance(entries, list):
            raise GameFileError("support query needs an 'entries' list")
        for k, entry in enumerate(entries):
            if not isinstance(entry, list) or len(entry) != 2:
                raise GameFileError(f"query entry {k} must be [index, mass]")
            cell = _index(entry[0], sizes, f"query entry {k}")
            if exact[cell] != 0:
                raise GameFileError(f"query entry {k}: duplicate cell {list(cell)}")
            exact[cell] = _rational(entry[1], f"query entry {k}")
    else:
        raise GameFileError(f"Unknown query kind {kind!r}. Available: ['dense', 'support']")
    total = sum(exact.reshape(-1), Fraction(0))
    if total != 1:
        raise GameFileError(f"query masses sum to {total}, expected exactly 1")
    return exact


def _binary_list(raw: Any, size: int, where: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != size:
        raise GameFileError(
            f"{where} needs {size} entries, got {len(raw) if isinstance(raw, list) else type(raw).__name__}"
        )
    if any(isinstance(v, bool) or v not in (0, 1) for v in raw):
        raise GameFileError(f"{where} entries must be 0 or 1")
    return np.array(raw, dtype=float)


def _parse_predicate(section: Any, q_sizes: tuple[int, ...], r_sizes: tuple[int, ...]) -> np.ndarray:
    shape = q_sizes + r_sizes
    if isinstance(section, list):
        return _binary_list(section, math.prod(shape), "predicate").reshape(shape)
    if not isinstance(section, dict) or len(section) != 1:
        raise GameFileError("'predicate' must be a flat list, {'dense': [...]} or {'wins': [...]}")
    if "dense" in section:
        return _binary_list(section["dense"], math.prod(shape), "predicate.dense").reshape(shape)
    if "wins" in section:
        wins = section["wins"]
        if not isinstance(wins, list):
            raise GameFileError("predicate.wins must be a list of [query, response] pairs")
        table = np.zeros(shape)
        for k, pair in enumerate(wins):
            if not isinstance(pair, list) or len(pair) != 2:
                raise GameFileError(f"predicate win {k} must be [query, response]")
            x = _index(pair[0], q_sizes, f"predicate win {k} query")
            u = _index(pair[1], r_sizes, f"predicate win {k} response")
            table[x + u] = 1.0
        return table
    raise GameFileError(f"Unknown predicate form {sorted(section)}. Available: ['dense', 'wins']")


def parse(doc: dict) -> Game:
    """
    Build a validated ``Game`` from a decoded GameFile document.

    Raises:
        GameFileError: if the document is malformed.
        GameValidationError: if the resulting game is not well formed.
    """
    if not isinstance(doc, dict):
        raise GameFileError(f"GameFile must be a JSON object, got {type(doc).__name__}")
    q_sizes = _sizes(doc, "query_alphabets")
    r_sizes = _sizes(doc, "response_alphabets")
    m = doc.get("m", len(q_sizes))
    if m != len(q_sizes) or m != len(r_sizes):
        raise GameFileError(
            f"'m' = {m} disagrees with {len(q_sizes)} query and {len(r_sizes)} response alphabets"
        )
    name = doc.get("name", "game")
    if not isinstance(name, str):
        raise GameFileError("'name' must be a string")
    exact = _parse_query(doc.get("query"), q_sizes)
    predicate = _parse_predicate(doc.get("predicate"), q_sizes, r_sizes)
    return validate(Game.from_exact(exact, predicate, r_sizes, name))


def serialize(game: Game) -> dict:
    """Canonical GameFile document: support query and sorted win list."""
    exact = game.query_fractions()
    entries = [
        [list(cell), str(exact[cell])]
        for cell in (tuple(int(c) for c in idx) for idx in np.ndindex(*game.query_sizes))
        if exact[cell] != 0
    ]
    wins = [
        [[int(c) for c in cell[: game.m]], [int(c) for c in cell[game.m:]]]
        for cell in np.argwhere(game.predicate == 1)
    ]
    return {
        "name": game.name,
        "m": game.m,
        "query_alphabets": list(game.query_sizes),
        "response_alphabets": list(game.response_sizes),
        "query": {"kind": "support", "entries": entries},
        "predicate": {"wins": wins},
    }


def canonical_json(game: Game) -> str:
    return json.dumps(serialize(game), sort_keys=True, separators=(",", ":"))


def digest(game: Game) -> str:
    """SHA-256 of the canonical serialization."""
    return hashlib.sha256(canonical_json(game).encode("utf-8")).hexdigest()


def _read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise GameFileError(f"No such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise GameFileError(f"{path} is not valid JSON: {exc}") from None


def load_game(source: str | Path) -> Game:
    """Load ``builtin:<name>`` or a GameFile path."""
    text = str(source)
    if text.startswith(BUILTIN_PREFIX):
        return builtin(text[len(BUILTIN_PREFIX):])
    game = parse(_read_json(Path(text)))
    logger.debug("load_game: %s from %s", game.name, text)
    return game


def dump_game(game: Game, path: str | Path) -> None:
    Path(path).write_text(json.dumps(serialize(game), indent=2, sort_keys=True), encoding="utf-8")


def _float_masses(raw: Any, size: int, where: str) -> np.ndarray:
    if not isinstance(raw, list) or len(raw) != size:
        raise GameFileError(
            f"{where} needs {size} masses, got {len(raw) if isinstance(raw, list) else type(raw).__name__}"
        )
    return np.array([float(_rational(v, f"{where} {k}")) for k, v in enumerate(raw)])


def parse_strategy(doc: Any, query_sizes: Sequence[int], response_sizes: Sequence[int]) -> Channel:
    """
    Build a strategy channel on the given alphabets from a strategy document.

    Raises:
        GameFileError: if the document is malformed or its alphabets differ.
    """
    if not isinstance(doc, dict):
        raise GameFileError("Strategy file must be a JSON object")
    q_sizes, r_sizes = tuple(query_sizes), tuple(response_sizes)
    kind = doc.get("kind")
    if kind == "deterministic":
        try:
            strategy = DeterministicStrategy(tuple(tuple(f) for f in doc["maps"]), _sizes(doc, "response_alphabets"))
        except (KeyError, TypeError, ValueError) as exc:
            raise GameFileError(f"Bad deterministic strategy: {exc}") from None
        if strategy.query_sizes != q_sizes or strategy.response_sizes != r_sizes:
            raise GameFileError(
                f"Strategy alphabets {strategy.query_sizes}/{strategy.response_sizes} "
                f"do not match {q_sizes}/{r_sizes}"
            )
        return to_channel(strategy)
    if kind == "channel":
        if _sizes(doc, "query_alphabets") != q_sizes or _sizes(doc, "response_alphabets") != r_sizes:
            raise GameFileError(
                f"Strategy alphabets {doc.get('query_alphabets')}/{doc.get('response_alphabets')} "
                f"do not match {list(q_sizes)}/{list(r_sizes)}"
            )
        normalization = doc.get("normalization", "channel")
        if normalization not in ("channel", "subchannel"):
            raise GameFileError(f"Unknown normalization {normalization!r}. Available: ['channel', 'subchannel']")
        masses = _float_masses(doc.get("masses"), math.prod(q_sizes + r_sizes), "strategy mass")
        m = len(q_sizes)
        try:
            return Channel(
                AlphabetShape(q_sizes, tuple(query_label(i) for i in range(m))),
                AlphabetShape(r_sizes, tuple(response_label(i) for i in range(m))),
                masses.reshape(q_sizes + r_sizes),
                normalization,
            )
        except ValueError as exc:
            raise GameFileError(f"Invalid strategy channel: {exc}") from None
    raise GameFileError(f"Unknown strategy kind {kind!r}. Available: ['channel', 'deterministic']")


def load_strategy(path: str | Path, query_sizes: Sequence[int], response_sizes: Sequence[int]) -> Channel:
    return parse_strategy(_read_json(Path(path)), query_sizes, response_sizes)


def parse_joint(doc: Any, game: Game) -> JointTable:
    """A target joint over ``game``'s (query, response) alphabets."""
    if not isinstance(doc, dict) or doc.get("kind") != "joint":
        raise GameFileError("Target file must be an object with kind 'joint'")
    sizes = game.query_sizes + game.response_sizes
    masses = _float_masses(doc.get("masses"), math.prod(sizes), "joint mass")
    labels = list(game.query_shape.labels + game.response_shape.labels)
    try:
        return JointTable.from_array(masses.reshape(sizes), labels)
    except ValueError as exc:
        raise GameFileError(f"Invalid target joint: {exc}") from None


def load_joint(path: str | Path, game: Game) -> JointTable:
    return parse_joint(_read_json(Path(path)), game)
