import json
import os
import tempfile
import warnings
from pathlib import Path
from typing import Any, Mapping


def atomic_write_json(path: Path, data: Any, *, sort_keys: bool = True) -> None:
    """Write ``data`` through a temporary file in the same directory, fsync, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(
        mode="w", suffix=".tmp", dir=path.parent, delete=False, encoding="utf-8"
    ) as tf:
        json.dump(data, tf, indent=2, sort_keys=sort_keys)
        tf.flush()
        os.fsync(tf.fileno())
        tmp_name = tf.name
    os.replace(tmp_name, path)


def read_json_or_reset(path: Path, what: str) -> dict[str, Any]:
    """Read a JSON object, warning and returning ``{}`` when the file is corrupt."""
    if not path.exists():
        return {}
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        warnings.warn(f"{path!s} is corrupt; resetting {what} to empty", UserWarning, stacklevel=3)
        return {}
    if not isinstance(data, dict):
        warnings.warn(f"{path!s} does not hold an object; resetting {what} to empty", UserWarning, stacklevel=3)
        return {}
    return data


class ReportStore:
    """
    JSON persistence of command results for one game.

    Reports live at ``cache_base/<digest>/reports.json`` keyed by command and
    a parameter key, e.g. ``{"reports": {"value": {"class=ns": {...}}}}``.
    Writes are atomic; the results objects are stored with sorted keys so
    identical inputs give byte-identical files.
    """

    __slots__ = (
        "cache_base",
        "game_digest",
        "sort_keys",
        "reports_path",
        "_data",
        "_dirty",
    )

    def __init__(self, cache_base: Path, game_digest: str, *, sort_keys: bool = True):
        self.cache_base = Path(cache_base)
        self.game_digest = game_digest
        self.sort_keys = sort_keys
        self.reports_path = self.cache_base / self.game_digest / "reports.json"
        self._data: dict[str, Any] | None = None
        self._dirty = False

    def load(self) -> dict[str, Any]:
        """Lazily load (or initialize) the report tree.

        A corrupt file triggers a ``UserWarning`` and an empty tree.
        """
        if self._data is None:
            self._data = read_json_or_reset(self.reports_path, "reports")
        return self._data

    def save(self) -> None:
        if not self._dirty:
            return
        atomic_write_json(self.reports_path, self._data, sort_keys=self.sort_keys)
        self._dirty = False

    def unload(self) -> None:
        """Drop the in-memory tree; the next ``load`` re-reads the file."""
        self._data = None
        self._dirty = False

    def ensure_game_fields(self, *, name: str, m: int, canonical: str) -> None:
        """Record the game's identity (overwritten only when it differs)."""
        data = self.load()
        fields = {"digest": self.game_digest, "name": name, "m": m, "game": canonical}
        for k, v in fields.items():
            if data.get(k) != v:
                data[k] = v
                self._dirty = True

    def put(self, command: str, key: str, results: Mapping[str, Any]) -> None:
        data = self.load()
        section = data.setdefault("reports", {}).setdefault(command, {})
        results = dict(results)
        if section.get(key) != results:
            section[key] = results
            self._dirty = True

    def get(self, command: str, key: str) -> dict[str, Any] | None:
        return self.load().get("reports", {}).get(command, {}).get(key)

    def remove(self, command: str) -> None:
        reports = self.load().get("reports", {})
        if command in reports:
            reports.pop(command)
            self._dirty = True

    def summary(self) -> dict[str, Any]:
        data = self.load()
        reports = data.get("reports", {})
        return {
            "game": {"digest": data.get("digest"), "name": data.get("name"), "m": data.get("m")},
            "commands": {command: sorted(entries) for command, entries in reports.items()},
        }
