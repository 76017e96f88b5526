from .game_model import Game, builtin
from .repetition_audit import audit_repetition
from .sweep_runner import SweepRunner
from .values import classical_value, ns_value, sns_value, threshold_value

__all__ = [
    "Game",
    "SweepRunner",
    "audit_repetition",
    "builtin",
    "classical_value",
    "ns_value",
    "sns_value",
    "threshold_value",
]
