import json
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from nlgame.game_file import digest
from nlgame.game_model import builtin
from nlgame.sweep_runner import SweepRunner


@pytest.fixture
def temp_dir():
    with tempfile.TemporaryDirectory() as tmp:
        yield Path(tmp)


def _runner(cache, **overrides) -> SweepRunner:
    config = {
        "games": ["builtin:chsh"],
        "ns": [1],
        "deltas": ["1"],
        "strategies": ["ns-opt", "sns-opt"],
        "cache_base": cache,
    }
    config.update(overrides)
    return SweepRunner(**config)


class TestSweepConfig:
    """Test suite for SweepRunner configuration checks."""

    @pytest.mark.parametrize(
        "overrides,message",
        [
            ({"games": []}, "game"),
            ({"ns": []}, "repetition count"),
            ({"ns": [0]}, ">= 1"),
            ({"deltas": []}, "threshold"),
            ({"deltas": ["3/2"]}, r"\(0, 1\]"),
            ({"deltas": [0]}, r"\(0, 1\]"),
            ({"strategies": []}, "strategy kind"),
            ({"strategies": ["hvt-opt"]}, "Available"),
        ],
    )
    def test_invalid_config(self, temp_dir, overrides, message):
        """Test that bad configurations are refused up front."""
        with pytest.raises(ValueError, match=message):
            _runner(temp_dir, **overrides)

    def test_deltas_are_exact(self, temp_dir):
        """Test that threshold strings are parsed as fractions."""
        runner = _runner(temp_dir, deltas=["2/3", 1])
        assert [str(d) for d in runner.deltas] == ["2/3", "1"]

    def test_cache_base_overrides_settings(self, temp_dir):
        """Test that the explicit cache directory wins."""
        runner = _runner(temp_dir)
        assert runner.settings.cache_base == temp_dir
        assert runner.index_path == temp_dir / "sweep_index.json"


class TestSweepRun:
    """Test suite for running and resuming sweeps."""

    def test_run_writes_index(self, temp_dir):
        """Test that a run audits every configuration and persists them."""
        runner = _runner(temp_dir)
        failures = runner.run_batch()
        assert failures == []
        index = json.loads(runner.index_path.read_text())
        entry = index[digest(builtin("chsh"))]
        assert entry["name"] == "chsh"
        assert set(entry["1"]["1"]) == {"ns-opt", "sns-opt"}
        assert entry["1"]["1"]["ns-opt"]["passed"] is True
        assert entry["1"]["1"]["ns-opt"]["probability"] == pytest.approx(1.0, abs=1e-9)

    def test_rerun_skips_completed(self, temp_dir):
        """Test that a second runner resumes without repeating audits."""
        _runner(temp_dir).run_batch()
        again = _runner(temp_dir)
        with patch.object(SweepRunner, "_timed_audit") as audit:
            again.run_batch()
        audit.assert_not_called()
        assert again.get_progress_summary()["completed_configs"] == 2

    def test_unloadable_game_is_recorded(self, temp_dir):
        """Test that a bad source is a failure, not an exception."""
        runner = _runner(temp_dir, games=["builtin:nope", "builtin:chsh"], strategies=["ns-opt"])
        failures = runner.run_batch()
        assert len(failures) == 1
        assert failures[0]["game"] == "builtin:nope"
        assert runner.get_progress_summary()["completed_configs"] == 1

    def test_audit_errors_are_recorded(self, temp_dir):
        """Test that an audit error is stored in the index and listed."""
        runner = _runner(temp_dir, strategies=["ns-opt"])
        with patch.object(SweepRunner, "_timed_audit", side_effect=ValueError("boom")):
            failures = runner.run_batch()
        assert failures[0]["error"] == "boom"
        summary = runner.get_progress_summary()
        assert summary["errors"] == 1
        assert runner.to_frame().loc[0, "error"] == "boom"

    def test_corrupt_index_resets(self, temp_dir):
        """Test that a corrupt index warns and the sweep starts over."""
        (temp_dir / "sweep_index.json").write_text("{broken")
        with pytest.warns(UserWarning):
            runner = _runner(temp_dir)
        assert runner.seen == {}


class TestSweepSummaries:
    """Test suite for frames and summaries."""

    @pytest.fixture
    def finished(self, temp_dir):
        runner = _runner(temp_dir)
        runner.run_batch()
        return runner

    def test_frame(self, finished):
        """Test one sorted row per configuration."""
        frame = finished.to_frame()
        assert list(frame.columns) == [
            "game", "n", "delta", "strategy", "passed", "probability", "exponent", "duration", "error",
        ]
        assert list(frame["strategy"]) == ["ns-opt", "sns-opt"]
        assert frame["passed"].all()

    def test_progress_summary(self, finished):
        """Test progress counters."""
        summary = finished.get_progress_summary()
        assert summary["config_progress"] == "2/2"
        assert summary["config_completion_rate"] == 1.0
        assert summary["failed_audits"] == 0

    def test_timing_summary(self, finished):
        """Test timing statistics per strategy kind."""
        timing = finished.get_timing_summary()
        assert timing["audit_times"]["count"] == 2
        assert set(timing["by_strategy"]) == {"ns-opt", "sns-opt"}
        assert timing["audit_times"]["min"] <= timing["audit_times"]["max"]

    def test_print_summaries(self, finished, capsys):
        """Test the printed summaries."""
        finished.print_progress_summary()
        finished.print_timing_summary()
        out = capsys.readouterr().out
        assert "Configurations: 2/2" in out
        assert "By Strategy:" in out
