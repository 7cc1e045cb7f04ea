# Game package
from src.game.model import GLQDynamics, GLQProblem, LQProblem, NoiseSpec, PlayerCost, stationary_cost, validate
from src.game.riccati import (
    NumericalBreakdownError,
    RecursionForm,
    Verdict,
    backward_pass,
    check_solvability,
    convexity_pass,
)
from src.game.tree import ScenarioTree, build_tree
from src.game.equilibrium import EquilibriumLaw, solve_on_tree, synthesize_law

__all__ = [
    "GLQDynamics",
    "GLQProblem",
    "LQProblem",
    "NoiseSpec",
    "PlayerCost",
    "stationary_cost",
    "validate",
    "NumericalBreakdownError",
    "RecursionForm",
    "Verdict",
    "backward_pass",
    "check_solvability",
    "convexity_pass",
    "ScenarioTree",
    "build_tree",
    "EquilibriumLaw",
    "solve_on_tree",
    "synthesize_law",
]
