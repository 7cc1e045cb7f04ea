# Evaluation package
from src.evaluate.moments import expected_tail_cost, expected_tail_costs, precommit_baseline
from src.evaluate.montecarlo import monte_carlo_tail_cost
from src.evaluate.oracle import OracleResult, tree_oracle_equilibrium
from src.evaluate.sweep import SweepResult, mv_sweep, sweep

__all__ = [
    "expected_tail_cost",
    "expected_tail_costs",
    "precommit_baseline",
    "monte_carlo_tail_cost",
    "OracleResult",
    "tree_oracle_equilibrium",
    "SweepResult",
    "mv_sweep",
    "sweep",
]
