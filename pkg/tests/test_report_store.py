import json
import tempfile
from pathlib import Path

import pytest

from nlgame.report_store import ReportStore, atomic_write_json, read_json_or_reset


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as tmp:
        yield Path(tmp)


@pytest.fixture
def store(temp_dir):
    return ReportStore(temp_dir, "abc123")


class TestJsonHelpers:
    """Test suite for the atomic JSON helpers."""

    def test_atomic_write_creates_parents(self, temp_dir):
        """Test that missing directories are created and no temp file is left."""
        path = temp_dir / "a" / "b" / "data.json"
        atomic_write_json(path, {"b": 1, "a": 2})
        assert json.loads(path.read_text()) == {"a": 2, "b": 1}
        assert list(path.parent.glob("*.tmp")) == []

    def test_sorted_keys(self, temp_dir):
        """Test that keys are written in sorted order."""
        path = temp_dir / "data.json"
        atomic_write_json(path, {"z": 1, "a": 2})
        text = path.read_text()
        assert text.index('"a"') < text.index('"z"')

    def test_missing_file_is_empty(self, temp_dir):
        """Test that a missing file reads as an empty object."""
        assert read_json_or_reset(temp_dir / "none.json", "reports") == {}

    def test_corrupt_file_warns(self, temp_dir):
        """Test that corrupt JSON warns and resets."""
        path = temp_dir / "bad.json"
        path.write_text("{oops")
        with pytest.warns(UserWarning, match="corrupt"):
            assert read_json_or_reset(path, "reports") == {}

    def test_non_object_warns(self, temp_dir):
        """Test that a JSON list is not accepted as a report tree."""
        path = temp_dir / "list.json"
        path.write_text("[1, 2]")
        with pytest.warns(UserWarning, match="does not hold an object"):
            assert read_json_or_reset(path, "reports") == {}


class TestReportStore:
    """Test suite for ReportStore."""

    def test_paths(self, store, temp_dir):
        """Test that reports live under the game digest."""
        assert store.reports_path == temp_dir / "abc123" / "reports.json"

    def test_put_get_save_reload(self, store, temp_dir):
        """Test that stored reports survive a reload."""
        store.put("value", "class=ns", {"value": 1.0})
        store.save()
        fresh = ReportStore(temp_dir, "abc123")
        assert fresh.get("value", "class=ns") == {"value": 1.0}
        assert fresh.get("value", "class=sns") is None
        assert fresh.get("audit", "n=1") is None

    def test_save_only_when_dirty(self, store):
        """Test that an untouched store writes nothing."""
        store.load()
        store.save()
        assert not store.reports_path.exists()

    def test_identical_put_is_clean(self, store):
        """Test that re-putting equal results does not dirty the store."""
        store.put("value", "k", {"v": 1})
        store.save()
        mtime = store.reports_path.stat().st_mtime_ns
        store.put("value", "k", {"v": 1})
        assert not store._dirty
        store.save()
        assert store.reports_path.stat().st_mtime_ns == mtime

    def test_game_fields(self, store):
        """Test that identity fields are recorded and summarized."""
        store.ensure_game_fields(name="chsh", m=2, canonical="{}")
        store.put("value", "class=ns", {"value": 1.0})
        store.put("value", "class=classical", {"value": 0.75})
        summary = store.summary()
        assert summary["game"] == {"digest": "abc123", "name": "chsh", "m": 2}
        assert summary["commands"] == {"value": ["class=classical", "class=ns"]}

    def test_remove(self, store):
        """Test dropping a command section."""
        store.put("audit", "n=1", {"passed": True})
        store.remove("audit")
        assert store.get("audit", "n=1") is None
        store.remove("audit")
        assert store.summary()["commands"] == {}

    def test_unload_discards_unsaved(self, store):
        """Test that unload drops unsaved changes."""
        store.put("value", "k", {"v": 1})
        store.unload()
        assert store.get("value", "k") is None

    def test_corrupt_reports_reset(self, store):
        """Test that a corrupt reports file warns and starts over."""
        store.reports_path.parent.mkdir(parents=True)
        store.reports_path.write_text("not json")
        with pytest.warns(UserWarning):
            assert store.load() == {}
