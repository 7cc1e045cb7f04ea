# Self-coordination package
from src.selfcoord.fictitious import Punishment, SelfCoordinationSolution, augment, self_coordination
from src.selfcoord.meanvar import MarketData, mv_backward, mv_control, mv_punishment

__all__ = [
    "Punishment",
    "SelfCoordinationSolution",
    "augment",
    "self_coordination",
    "MarketData",
    "mv_backward",
    "mv_control",
    "mv_punishment",
]
