# fictitious-lq/src/evaluate/oracle.py
"""
Brute-force equilibrium on a scenario tree.

Every node control is an unknown. With the adjoints eliminated by exact backward
substitution, both players' stationarity conditions are affine in the controls,
so the system is assembled column by column and solved by pseudoinverse.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from src.config import ORACLE_MAX_UNKNOWNS, ORACLE_RESIDUAL_ATOL, Tolerances, config
from src.game.equilibrium import EquilibriumLaw, adjoints, node_residuals, simulate_law
from src.game.model import GLQProblem
from src.game.tree import ScenarioTree, build_tree, propagate
from src.utils.numkit import pinv

logger = logging.getLogger(__name__)


@dataclass
class OracleResult:
    """Node controls of the tree equilibrium, or the reason there is none."""
    controls: List[np.ndarray] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    residual: float = 0.0
    unknowns: int = 0
    error: Optional[str] = None

    @property
    def is_error(self) -> bool:
        return self.error is not None

    @classmethod
    def from_error(cls, error: str, residual: float = 0.0, unknowns: int = 0) -> "OracleResult":
        return cls(residual=residual, unknowns=unknowns, error=error)

    def root_control(self) -> np.ndarray:
        return self.controls[0][0]


def _unflatten(tree: ScenarioTree, x: np.ndarray, dim: int) -> List[np.ndarray]:
    out, offset = [], 0
    for level in range(tree.depth):
        size = tree.n_nodes(level) * dim
        out.append(x[offset:offset + size].reshape(tree.n_nodes(level), dim))
        offset += size
    return out


def tree_oracle_equilibrium(problem: GLQProblem, t: int, y, tree: Optional[ScenarioTree] = None,
                            tol: Optional[Tolerances] = None) -> OracleResult:
    """
    Solve the node-wise stationarity system of both players on a full tree.

    Returns:
        OracleResult with per-level node controls, or from_error when the tree is too
        large or the system is inconsistent
    """
    tol = tol or config.tolerances
    tree = tree or build_tree(problem.noise, t, problem.N)
    if tree.t != t or tree.N != problem.N:
        return OracleResult.from_error(f"Tree spans [{tree.t}, {tree.N}], expected [{t}, {problem.N}]")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    dim = problem.m1 + problem.m2
    unknowns = sum(tree.n_nodes(level) for level in range(tree.depth)) * dim
    if unknowns > ORACLE_MAX_UNKNOWNS:
        return OracleResult.from_error(f"{unknowns} unknowns exceed the oracle limit {ORACLE_MAX_UNKNOWNS}",
                                       unknowns=unknowns)

    def residual(x: np.ndarray) -> np.ndarray:
        controls = _unflatten(tree, x, dim)
        states = propagate(problem, tree, y, controls)
        Y, Z = adjoints(problem, t, tree, states, controls)
        return np.concatenate([r.reshape(-1) for r in node_residuals(problem, t, tree, states, controls, Y, Z)])

    r0 = residual(np.zeros(unknowns))
    J = np.empty((r0.size, unknowns))
    for j in range(unknowns):
        e = np.zeros(unknowns)
        e[j] = 1.0
        J[:, j] = residual(e) - r0

    x = -pinv(J, tol) @ r0
    gap = float(np.max(np.abs(J @ x + r0), initial=0.0))
    if gap > ORACLE_RESIDUAL_ATOL * (1.0 + float(np.max(np.abs(r0), initial=0.0))):
        logger.warning(f"Tree oracle: inconsistent stationarity system (residual {gap:.3e})")
        return OracleResult.from_error(f"No tree equilibrium: residual {gap:.3e}", residual=gap,
                                       unknowns=unknowns)

    controls = _unflatten(tree, x, dim)
    states = propagate(problem, tree, y, controls)
    logger.info(f"Tree oracle solved {unknowns} unknowns, residual {gap:.3e}")
    return OracleResult(controls=controls, states=states, residual=gap, unknowns=unknowns)


def compare_with_law(problem: GLQProblem, law: EquilibriumLaw, result: OracleResult,
                     tree: Optional[ScenarioTree] = None) -> float:
    """Max node-wise gap between oracle controls and the law's closed loop on the tree."""
    if result.is_error:
        raise ValueError(f"Oracle result carries an error: {result.error}")
    tree = tree or build_tree(problem.noise, law.t, problem.N)
    _, controls = simulate_law(problem, law, tree)
    return max((float(np.max(np.abs(a - b), initial=0.0)) for a, b in zip(controls, result.controls)),
               default=0.0)
