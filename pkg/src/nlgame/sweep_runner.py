"""
SweepRunner: batch audits of the repetition bound over many configurations.

Runs ``audit_repetition`` for every combination of game, repetition count,
threshold and strategy kind, with a persistent "seen" index so an
interrupted sweep resumes where it stopped.

Usage:
    runner = SweepRunner(
        games=["builtin:chsh", "builtin:anticorrelation"],
        ns=[1, 2],
        deltas=["2/3", "1"],
        strategies=["ns-opt", "sns-opt"],
        cache_base=".nlgame_cache",
    )
    runner.run_batch()
    runner.print_progress_summary()
    runner.print_timing_summary()
"""

import logging
import time
from dataclasses import replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import pandas as pd
from tqdm import tqdm

from nlgame.config import DEFAULT_SETTINGS, Settings
from nlgame.exceptions import NlgameError
from nlgame.game_file import digest, load_game
from nlgame.game_model import Game
from nlgame.repetition_audit import audit_repetition, product_optimum
from nlgame.report_store import atomic_write_json, read_json_or_reset

logger = logging.getLogger(__name__)

STRATEGY_KINDS = ("ns-opt", "sns-opt")


class SweepRunner:
    """
    Crash-safe batch of repetition audits.

    Features:
    - Persistent "seen" index written atomically after every game
    - Completed configurations are skipped on restart
    - Per-audit timing and a failure list that never aborts the batch
    - Progress and timing summaries

    Attributes:
        games: Game sources (GameFile paths or ``builtin:<name>``)
        ns: Repetition counts
        deltas: Thresholds as exact fractions
        strategies: Strategy kinds (``ns-opt``/``sns-opt``)
        settings: Shared settings (budgets, tolerance, cache base)
        seen: In-memory index ``digest -> n -> delta -> kind -> record``
        failures: Errors collected during the current run
    """

    def __init__(
        self,
        games: Sequence[str],
        ns: Sequence[int],
        deltas: Sequence[str | float | Fraction],
        strategies: Sequence[str] = STRATEGY_KINDS,
        cache_base: str | Path | None = None,
        settings: Settings = DEFAULT_SETTINGS,
        progress: bool = False,
    ):
        """
        Args:
            games: GameFile paths or ``builtin:<name>`` references
            ns: Repetition counts to audit
            deltas: Thresholds in (0, 1]; strings such as ``"2/3"`` are parsed exactly
            strategies: Strategy kinds to audit
            cache_base: Directory for the seen index (defaults to ``settings.cache_base``)
            settings: Budgets and tolerances passed to every audit
            progress: Show a tqdm bar over configurations

        Raises:
            ValueError: If the configuration is empty or out of range
        """
        self.games = list(games)
        self.ns = [int(n) for n in ns]
        self.deltas = [Fraction(d) for d in deltas]
        self.strategies = list(strategies)
        if cache_base is not None:
            settings = replace(settings, cache_base=Path(cache_base))
        self.settings = settings
        self.cache_base = Path(settings.cache_base)
        self.progress = progress
        self.failures: list[dict[str, Any]] = []

        self._validate_config()

        self.index_path = self.cache_base / "sweep_index.json"
        self.seen = self._load_seen_index()
        self.cache_base.mkdir(parents=True, exist_ok=True)

    def _validate_config(self) -> None:
        if not self.games:
            raise ValueError("At least one game must be specified")
        if not self.ns:
            raise ValueError("At least one repetition count must be specified")
        if any(n < 1 for n in self.ns):
            raise ValueError(f"Repetition counts must be >= 1, got {self.ns}")
        if not self.deltas:
            raise ValueError("At least one threshold must be specified")
        for d in self.deltas:
            if not 0 < d <= 1:
                raise ValueError(f"Threshold must lie in (0, 1], got {d}")
        if not self.strategies:
            raise ValueError("At least one strategy kind must be specified")
        for kind in self.strategies:
            if kind not in STRATEGY_KINDS:
                raise ValueError(f"Unknown strategy kind {kind!r}. Available: {list(STRATEGY_KINDS)}")

    def _load_seen_index(self) -> dict[str, Any]:
        seen = read_json_or_reset(self.index_path, "sweep index")
        logger.info("sweep index: %d games already seen", len(seen))
        return seen

    def _save_seen_index(self) -> None:
        atomic_write_json(self.index_path, self.seen)

    def _configs(self) -> list[tuple[str, int, Fraction, str]]:
        return [
            (source, n, delta, kind)
            for source in self.games
            for n in self.ns
            for delta in self.deltas
            for kind in self.strategies
        ]

    def _timed_audit(self, game: Game, n: int, delta: Fraction, kind: str) -> dict[str, Any]:
        start = time.perf_counter()
        strategy = product_optimum(game, n, kind, self.settings)  # type: ignore[arg-type]
        report = audit_repetition(game, n, delta, strategy, settings=self.settings)
        failed = [s.name for s in report.failed_steps()]
        return {
            "passed": report.passed,
            "probability": report.probability,
            "exponent": report.exponent,
            "failed_steps": failed,
            "duration": time.perf_counter() - start,
        }

    def run_batch(self) -> list[dict[str, Any]]:
        """
        Audit every configuration not yet in the seen index.

        The index is saved after each game. Errors are recorded in the index
        and in ``failures`` and the batch moves on.

        Returns:
            The failures collected during this run.
        """
        self.failures = []
        configs = self._configs()
        loaded: dict[str, tuple[Game, str] | None] = {}
        logger.info(
            "sweep: %d games x %d n x %d deltas x %d strategies",
            len(self.games), len(self.ns), len(self.deltas), len(self.strategies),
        )
        current_source = None
        for source, n, delta, kind in tqdm(configs, disable=not self.progress, desc="sweep"):
            if source != current_source and current_source is not None:
                self._save_seen_index()
            current_source = source
            if source not in loaded:
                try:
                    game = load_game(source)
                except (NlgameError, ValueError) as exc:
                    self.failures.append({"game": source, "error": str(exc)})
                    logger.warning("sweep: cannot load %s: %s", source, exc)
                    loaded[source] = None
                    continue
                loaded[source] = (game, digest(game))
            entry = loaded[source]
            if entry is None:
                continue
            game, key = entry
            game_map = self.seen.setdefault(key, {"name": game.name})
            delta_map = game_map.setdefault(str(n), {}).setdefault(str(delta), {})
            if kind in delta_map:
                logger.debug("sweep: skipping %s n=%d delta=%s %s", game.name, n, delta, kind)
                continue
            try:
                record = self._timed_audit(game, n, delta, kind)
            except (NlgameError, ValueError) as exc:
                record = {"error": str(exc)}
                logger.warning("sweep: %s n=%d delta=%s %s failed: %s", game.name, n, delta, kind, exc)
            delta_map[kind] = record
            if "error" in record or not record["passed"]:
                self.failures.append(
                    {"game": game.name, "n": n, "delta": str(delta), "strategy": kind, **record}
                )
        self._save_seen_index()
        logger.info("sweep finished with %d failures", len(self.failures))
        return self.failures

    def _records(self):
        for key, game_map in self.seen.items():
            name = game_map.get("name", key[:8])
            for n, by_delta in game_map.items():
                if n == "name":
                    continue
                for delta, by_kind in by_delta.items():
                    for kind, record in by_kind.items():
                        yield name, int(n), delta, kind, record

    def to_frame(self) -> pd.DataFrame:
        """One row per recorded configuration, sorted for stable CSV output."""
        rows = [
            {
                "game": name,
                "n": n,
                "delta": delta,
                "strategy": kind,
                "passed": record.get("passed"),
                "probability": record.get("probability"),
                "exponent": record.get("exponent"),
                "duration": record.get("duration"),
                "error": record.get("error", ""),
            }
            for name, n, delta, kind, record in self._records()
        ]
        columns = ["game", "n", "delta", "strategy", "passed", "probability", "exponent", "duration", "error"]
        frame = pd.DataFrame(rows, columns=columns)
        return frame.sort_values(["game", "n", "delta", "strategy"], ignore_index=True)

    def get_progress_summary(self) -> dict[str, Any]:
        total = len(self._configs())
        done = errors = failed = 0
        for _, _, _, _, record in self._records():
            done += 1
            if "error" in record:
                errors += 1
            elif not record.get("passed"):
                failed += 1
        return {
            "total_configs": total,
            "completed_configs": done,
            "config_progress": f"{done}/{total}",
            "config_completion_rate": done / total if total > 0 else 0,
            "failed_audits": failed,
            "errors": errors,
        }

    def get_timing_summary(self) -> dict[str, Any]:
        durations: list[float] = []
        by_strategy: dict[str, list[float]] = {}
        for _, _, _, kind, record in self._records():
            if "duration" in record:
                durations.append(record["duration"])
                by_strategy.setdefault(kind, []).append(record["duration"])

        def stats(values: list[float]) -> dict[str, float]:
            return {
                "count": len(values),
                "total": sum(values),
                "avg": sum(values) / len(values) if values else 0,
                "min": min(values) if values else 0,
                "max": max(values) if values else 0,
            }

        return {
            "audit_times": stats(durations),
            "by_strategy": {kind: stats(values) for kind, values in by_strategy.items()},
        }

    def print_progress_summary(self) -> None:
        summary = self.get_progress_summary()
        print("Sweep Progress Summary:")
        print(f"Configurations: {summary['config_progress']} ({summary['config_completion_rate']:.1%})")
        print(f"Failed audits: {summary['failed_audits']}, errors: {summary['errors']}")
        print()

    def print_timing_summary(self) -> None:
        timing = self.get_timing_summary()
        audits = timing["audit_times"]
        print("Timing Summary:")
        print(f"  Count: {audits['count']}")
        print(f"  Total: {audits['total']:.2f}s")
        print(f"  Average: {audits['avg']:.2f}s")
        if audits["count"] > 0:
            print(f"  Range: {audits['min']:.2f}s - {audits['max']:.2f}s")
        if timing["by_strategy"]:
            print("\nBy Strategy:")
            for kind, stats in timing["by_strategy"].items():
                print(f"  {kind}: {stats['avg']:.2f}s avg ({stats['count']} audits)")
        print()
