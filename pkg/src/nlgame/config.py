import os
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping

BUDGET_ENV_VAR = "NLGAME_BUDGET_CELLS"


@dataclass(frozen=True)
class Settings:
    """
    Run-time knobs shared by the value, audit and CLI layers.

    Attributes:
        budget_cells: Maximum number of cells of any dense table
            (repeated query x response tables, channels).
        enumeration_budget: Maximum number of deterministic strategy tuples
            enumerated by ``classical_value``.
        lp_variable_budget: Maximum number of LP variables built by the
            value functions (the tableau is dense).
        tolerance: Default membership tolerance for strategy checks.
        seed: Seed for randomized searches and samplers.
        jobs: Worker threads for independent LP solves and search restarts.
        cache_base: Directory for report and sweep persistence.
    """

    budget_cells: int = 10_000_000
    enumeration_budget: int = 10_000_000
    lp_variable_budget: int = 20_000
    tolerance: float = 1e-9
    seed: int = 0
    jobs: int = 1
    cache_base: Path = Path(".nlgame_cache")

    @classmethod
    def from_env(cls, environ: Mapping[str, str] | None = None, **overrides) -> "Settings":
        """Build settings from defaults, the environment, then explicit overrides."""
        env = os.environ if environ is None else environ
        settings = cls()
        raw = env.get(BUDGET_ENV_VAR)
        if raw:
            try:
                budget = int(raw)
            except ValueError:
                raise ValueError(f"{BUDGET_ENV_VAR} must be an integer, got {raw!r}")
            if budget < 1:
                raise ValueError(f"{BUDGET_ENV_VAR} must be positive, got {budget}")
            settings = replace(settings, budget_cells=budget)
        clean = {k: v for k, v in overrides.items() if v is not None}
        if "cache_base" in clean:
            clean["cache_base"] = Path(clean["cache_base"])
        return replace(settings, **clean)


DEFAULT_SETTINGS = Settings()
