# fictitious-lq/src/game/equilibrium.py
"""
Open-loop equilibrium synthesis and tree verification.

The law is (u; v)_k = K_k (X_k - E_t X_k) + Kbar_k E_t X_k + c_k with the gains of
backward_pass. On a scenario tree the adjoint BSDEs are solved by exact conditional
expectation, which gives the stationarity residuals, the closed-form adjoint gaps
and the perturbation checks of both players' inequalities.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import Tolerances, config
from src.game.model import GLQProblem
from src.game.riccati import ConvexityBundle, RiccatiBundle
from src.game.tree import ScenarioTree, propagate, random_controls, step, tree_cost
from src.utils.numkit import in_range, pinv

logger = logging.getLogger(__name__)

INEQUALITY_ATOL = 1e-9


class EquilibriumError(Exception):
    """Custom exception for laws that do not match their problem or tree."""
    pass


@dataclass
class EquilibriumLaw:
    """Affine open-loop law on the state deviation and the nominal mean path."""
    t: int
    N: int
    m1: int
    m2: int
    Kdev: Dict[int, np.ndarray]
    Kbar: Dict[int, np.ndarray]
    c: Dict[int, np.ndarray]
    mean_path: Dict[int, np.ndarray]  # E_t X*_k, k = t..N

    def control(self, k: int, X: np.ndarray, mean: Optional[np.ndarray] = None) -> np.ndarray:
        """Stacked (u; v) for node states X (rows)."""
        mean = self.mean_path[k] if mean is None else mean
        X = np.atleast_2d(X)
        return (X - mean) @ self.Kdev[k].T + (self.Kbar[k] @ mean + self.c[k])[None, :]

    def mean_control(self, k: int) -> np.ndarray:
        return self.Kbar[k] @ self.mean_path[k] + self.c[k]


def synthesize_law(problem: GLQProblem, r: RiccatiBundle, y) -> EquilibriumLaw:
    """Gains from the bundle and the deterministic mean path started at y."""
    dyn = problem.dynamics
    if (r.N, r.n, r.m1, r.m2) != (problem.N, dyn.n, dyn.m1, dyn.m2):
        raise EquilibriumError("Riccati bundle does not belong to this problem")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != dyn.n:
        raise EquilibriumError(f"Initial state has dimension {y.shape[0]}, expected {dyn.n}")

    Kdev, Kbar, c = {}, {}, {}
    mean_path = {r.t: y}
    for k in range(r.t, r.N):
        s = r.stage(k)
        Kdev[k], Kbar[k], c[k] = s.K, s.Kbar, s.c
        mean_path[k + 1] = (dyn.A[k] + dyn.B(k) @ s.Kbar) @ mean_path[k] + dyn.B(k) @ s.c
    return EquilibriumLaw(t=r.t, N=r.N, m1=dyn.m1, m2=dyn.m2, Kdev=Kdev, Kbar=Kbar, c=c,
                          mean_path=mean_path)


def simulate_law(problem: GLQProblem, law: EquilibriumLaw, tree: ScenarioTree
                 ) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Closed-loop node states and controls of the law on the tree."""
    if tree.t != law.t or tree.N != law.N:
        raise EquilibriumError(f"Tree spans [{tree.t}, {tree.N}], law spans [{law.t}, {law.N}]")
    states = [law.mean_path[law.t].reshape(1, -1)]
    controls = []
    for level in range(tree.depth):
        k = tree.stage(level)
        U = law.control(k, states[-1])
        controls.append(U)
        states.append(step(problem, tree, level, states[-1], U))
    return states, controls


@dataclass
class PointwiseRangeReport:
    """Mean-path and node-wise range checks of the law."""
    mean_failures: List[int] = field(default_factory=list)
    node_failures: Dict[int, int] = field(default_factory=dict)  # stage -> failing node count

    @property
    def ok(self) -> bool:
        return not self.mean_failures and not self.node_failures


def check_pointwise_ranges(problem: GLQProblem, r: RiccatiBundle, law: EquilibriumLaw,
                           tree: ScenarioTree, tol: Optional[Tolerances] = None) -> PointwiseRangeReport:
    """Htil S2 E_tX + h in Ran(Wtil) along the mean path; H S2 (X - E_tX) in Ran(W) at every node."""
    tol = tol or config.tolerances
    report = PointwiseRangeReport()
    states, _ = simulate_law(problem, law, tree)
    for level in range(tree.depth):
        k = tree.stage(level)
        s = r.stage(k)
        mean = law.mean_path[k]
        if not in_range(s.Wt, s.HtS @ mean + s.h, tol):
            report.mean_failures.append(k)
        dev = states[level] - mean
        targets = s.HS @ dev.T  # one column per node
        residual = targets - s.W @ (s.W_pinv @ targets)
        bad = np.linalg.norm(residual, axis=0) > tol.range_rtol * (1.0 + np.linalg.norm(targets, axis=0))
        if np.any(bad):
            report.node_failures[k] = int(np.sum(bad))
    if not report.ok:
        logger.warning(f"Range checks failed: mean stages {report.mean_failures}, "
                       f"node stages {sorted(report.node_failures)}")
    return report


# ============== Adjoints and residuals ==============

def _step_expectations(tree: ScenarioTree, level: int, nxt: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """E_k[Y'] and E_k[Y' w^i] at the nodes of `level` from child values."""
    mean = tree.reduce(nxt, level + 1, level)
    w = tree.edge_noise(level)
    weighted = [tree.reduce(nxt * w[:, i:i + 1], level + 1, level) for i in range(tree.p)]
    return mean, weighted


def adjoints(problem: GLQProblem, t: int, tree: ScenarioTree, states: Sequence[np.ndarray],
             controls: Sequence[np.ndarray]
             ) -> Tuple[List[np.ndarray], Dict[Tuple[int, int], np.ndarray]]:
    """
    Solve both players' adjoint BSDEs on the tree.

    Returns:
        (Y per level, Z keyed by (k, l) stages)
    """
    dyn, c1, c2 = problem.dynamics, problem.cost1, problem.cost2
    depth = tree.depth

    def adjoint_chain(cost, t_cost: int, start: int) -> List[np.ndarray]:
        XN = states[depth]
        mN = tree.cond_mean(XN, depth, start)
        chain = [None] * (depth + 1)
        chain[depth] = (XN @ cost.terminal_weight("G", t_cost).T
                        + mN @ cost.terminal_weight("Gbar", t_cost).T
                        + cost.terminal_weight("g", t_cost)[None, :])
        for level in range(depth - 1, start - 1, -1):
            k = tree.stage(level)
            X, U = states[level], controls[level]
            mX = tree.cond_mean(X, level, start)
            mU = tree.cond_mean(U, level, start)
            ey, eyw = _step_expectations(tree, level, chain[level + 1])
            value = (X @ cost.weight("Q", t_cost, k).T + mX @ cost.weight("Qbar", t_cost, k).T
                     + U @ cost.S(t_cost, k) + mU @ cost.S(t_cost, k, bar=True)
                     + ey @ dyn.A[k] + cost.weight("q", t_cost, k)[None, :])
            for i in range(dyn.p):
                value = value + eyw[i] @ dyn.C[k][i]
            chain[level] = value
        return chain

    Y = adjoint_chain(c1, t, 0)
    Z: Dict[Tuple[int, int], np.ndarray] = {}
    for jk in range(depth):
        k = tree.stage(jk)
        chain = adjoint_chain(c2, k, jk)
        for level in range(jk, depth + 1):
            Z[(k, tree.stage(level))] = chain[level]
    return Y, Z


def node_residuals(problem: GLQProblem, t: int, tree: ScenarioTree, states: Sequence[np.ndarray],
                   controls: Sequence[np.ndarray], Y: Sequence[np.ndarray],
                   Z: Dict[Tuple[int, int], np.ndarray]) -> List[np.ndarray]:
    """Both stationarity conditions at every node, stacked (r1; r2) per level."""
    dyn, c1, c2 = problem.dynamics, problem.cost1, problem.cost2
    m1 = dyn.m1
    out = []
    for level in range(tree.depth):
        k = tree.stage(level)
        X, U = states[level], controls[level]
        mX, mU = tree.cond_mean(X, level, 0), tree.cond_mean(U, level, 0)

        ey, eyw = _step_expectations(tree, level, Y[level + 1])
        R1, R1bar = c1.R(t, k), c1.R(t, k, bar=True)
        r1 = (X @ c1.weight("S1", t, k).T + mX @ c1.weight("S1bar", t, k).T
              + U @ R1[:m1].T + mU @ R1bar[:m1].T
              + ey @ dyn.B1[k] + c1.weight("rho1", t, k)[None, :])
        for i in range(dyn.p):
            r1 = r1 + eyw[i] @ dyn.D1[k][i]

        ez, ezw = _step_expectations(tree, level, Z[(k, k + 1)])
        Rcal2 = c2.R(k, k) + c2.R(k, k, bar=True)
        r2 = (X @ c2.script("S2", k, k).T + U @ Rcal2[m1:].T
              + ez @ dyn.B2[k] + c2.weight("rho2", k, k)[None, :])
        for i in range(dyn.p):
            r2 = r2 + ezw[i] @ dyn.D2[k][i]
        out.append(np.hstack([r1, r2]))
    return out


@dataclass
class TreeSolution:
    """States, controls and adjoints of a law on a scenario tree."""
    tree: ScenarioTree
    t: int
    states: List[np.ndarray]
    controls: List[np.ndarray]
    Y: List[np.ndarray]
    Z: Dict[Tuple[int, int], np.ndarray]

    def u(self, level: int, m1: int) -> np.ndarray:
        return self.controls[level][:, :m1]

    def v(self, level: int, m1: int) -> np.ndarray:
        return self.controls[level][:, m1:]


def solve_on_tree(problem: GLQProblem, law: EquilibriumLaw, tree: ScenarioTree) -> TreeSolution:
    """Forward closed loop, then the adjoint BSDEs by exact conditional expectation."""
    if tree.p != problem.p:
        raise EquilibriumError(f"Tree noise dimension {tree.p} != problem p={problem.p}")
    states, controls = simulate_law(problem, law, tree)
    Y, Z = adjoints(problem, law.t, tree, states, controls)
    return TreeSolution(tree=tree, t=law.t, states=states, controls=controls, Y=Y, Z=Z)


def stationarity_residual(problem: GLQProblem, ts: TreeSolution) -> Dict[int, Tuple[float, float]]:
    """Max-norm residual of each player's stationarity condition per stage."""
    residuals = node_residuals(problem, ts.t, ts.tree, ts.states, ts.controls, ts.Y, ts.Z)
    m1 = problem.m1
    out = {}
    for level, r in enumerate(residuals):
        r1 = float(np.max(np.abs(r[:, :m1]), initial=0.0))
        r2 = float(np.max(np.abs(r[:, m1:]), initial=0.0))
        out[ts.tree.stage(level)] = (r1, r2)
    return out


def adjoint_closed_form_gap(r: RiccatiBundle, ts: TreeSolution) -> float:
    """Max node-wise gap between the BSDE adjoints and their Riccati closed forms."""
    tree = ts.tree
    gap = 0.0
    for level in range(tree.depth + 1):
        k = tree.stage(level)
        X = ts.states[level]
        mt = tree.cond_mean(X, level, 0)
        closed = (X - mt) @ r.P[k].T + mt @ r.Pcal[k].T + r.sigma[k][None, :]
        gap = max(gap, float(np.max(np.abs(closed - ts.Y[level]))))
        for jk in range(min(level, tree.depth - 1) + 1):
            row = tree.stage(jk)
            if (row, k) not in ts.Z:
                continue
            mk = tree.cond_mean(X, level, jk)
            closed = ((X - mk) @ r.T[(row, k)].T + mk @ r.Tcal[(row, k)].T
                      + mt @ r.Ttil[(row, k)].T + r.xi[(row, k)][None, :])
            gap = max(gap, float(np.max(np.abs(closed - ts.Z[(row, k)]))))
    return gap


# ============== Second variations ==============

def _pad_controls(tree: ScenarioTree, first: Sequence[np.ndarray], m1: int, m2: int,
                  second_is_v: bool = False) -> List[np.ndarray]:
    out = []
    for level in range(tree.depth):
        block = first[level]
        zeros = np.zeros((tree.n_nodes(level), m2 if not second_is_v else m1))
        out.append(np.hstack([block, zeros]) if not second_is_v else np.hstack([zeros, block]))
    return out


def j1_direct(problem: GLQProblem, t: int, tree: ScenarioTree, u: Sequence[np.ndarray]) -> float:
    """Player 1's second variation at zero initial state, by simulating alpha."""
    controls = _pad_controls(tree, u, problem.m1, problem.m2)
    alpha = propagate(problem, tree, np.zeros(problem.n), controls)
    return float(tree_cost(problem.cost1, t, tree, alpha, controls, homogeneous=True)[0])


def j1_completed_square(problem: GLQProblem, cb: ConvexityBundle, t: int, tree: ScenarioTree,
                        u: Sequence[np.ndarray], tol: Optional[Tolerances] = None) -> float:
    """Completed-square form of the second variation via the convexity bundle."""
    tol = tol or config.tolerances
    controls = _pad_controls(tree, u, problem.m1, problem.m2)
    alpha = propagate(problem, tree, np.zeros(problem.n), controls)
    total = 0.0
    for level in range(tree.depth):
        k = tree.stage(level)
        ma = tree.root_mean(alpha[level], level)
        mu = tree.root_mean(u[level], level)
        dev = (u[level] - mu) + (alpha[level] - ma) @ (pinv(cb.O[k], tol) @ cb.M[k]).T
        mean = mu + pinv(cb.Ocal[k], tol) @ cb.Mcal[k] @ ma
        total += float(np.mean(np.einsum("ri,ij,rj->r", dev, cb.O[k], dev)))
        total += float(mean @ cb.Ocal[k] @ mean)
    return total


def j2_direct(problem: GLQProblem, k: int, tree: ScenarioTree, v: np.ndarray) -> np.ndarray:
    """Player 2's single-stage second variation at every node of stage k."""
    jk = k - tree.t
    if not 0 <= jk < tree.depth:
        raise EquilibriumError(f"Stage {k} not in tree span [{tree.t}, {tree.N})")
    v_levels = [np.zeros((tree.n_nodes(level), problem.m2)) for level in range(tree.depth)]
    v_levels[jk] = np.asarray(v, dtype=np.float64).reshape(tree.n_nodes(jk), problem.m2)
    controls = _pad_controls(tree, v_levels, problem.m1, problem.m2, second_is_v=True)
    beta = propagate(problem, tree, np.zeros(problem.n), controls)
    return tree_cost(problem.cost2, k, tree, beta, controls, from_level=jk, homogeneous=True)


# ============== Inequality checks ==============

@dataclass
class InequalityReport:
    """Perturbation checks of both players' equilibrium inequalities."""
    directions: int
    first_order_p1: float = 0.0  # max |first-order term|
    second_order_p1: float = np.inf  # min second-order term
    pairing_gap_p1: float = 0.0  # |first-order - adjoint pairing|
    first_order_p2: float = 0.0
    second_order_p2: float = np.inf
    violations: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def verify_equilibrium_inequalities(problem: GLQProblem, ts: TreeSolution, directions: int,
                                    seed: int, atol: float = INEQUALITY_ATOL) -> InequalityReport:
    """
    Random tree-adapted perturbations of u (all stages) and of v (one stage at a time).

    With the other player's and future controls held as node values, the cost change
    is exactly 2 * first + second; the second-order term is simulated directly.
    """
    tree, t = ts.tree, ts.t
    m1, m2 = problem.m1, problem.m2
    rng = np.random.default_rng(seed)
    report = InequalityReport(directions=directions)

    base1 = float(tree_cost(problem.cost1, t, tree, ts.states, ts.controls)[0])
    residuals = node_residuals(problem, t, tree, ts.states, ts.controls, ts.Y, ts.Z)
    for d in range(directions):
        du = random_controls(tree, m1, rng)
        shifted = [U + np.hstack([du[j], np.zeros((tree.n_nodes(j), m2))])
                   for j, U in enumerate(ts.controls)]
        states = propagate(problem, tree, ts.states[0][0], shifted)
        delta_j = float(tree_cost(problem.cost1, t, tree, states, shifted)[0]) - base1
        second = j1_direct(problem, t, tree, du)
        first = 0.5 * (delta_j - second)
        pairing = sum(float(np.mean(np.sum(du[j] * residuals[j][:, :m1], axis=1)))
                      for j in range(tree.depth))
        scale = 1.0 + abs(base1) + abs(second)
        report.first_order_p1 = max(report.first_order_p1, abs(first))
        report.second_order_p1 = min(report.second_order_p1, second)
        report.pairing_gap_p1 = max(report.pairing_gap_p1, abs(first - pairing))
        if abs(first) > atol * scale:
            report.violations.append(f"player 1 direction {d}: first-order term {first:.3e}")
        if second < -atol * scale:
            report.violations.append(f"player 1 direction {d}: second-order term {second:.3e}")

    for jk in range(tree.depth):
        k = tree.stage(jk)
        base2 = tree_cost(problem.cost2, k, tree, ts.states, ts.controls, from_level=jk)
        for d in range(directions):
            dv = rng.standard_normal((tree.n_nodes(jk), m2))
            shifted = [U.copy() for U in ts.controls]
            shifted[jk] = shifted[jk] + np.hstack([np.zeros((tree.n_nodes(jk), m1)), dv])
            states = propagate(problem, tree, ts.states[0][0], shifted)
            delta_j = tree_cost(problem.cost2, k, tree, states, shifted, from_level=jk) - base2
            second = j2_direct(problem, k, tree, dv)
            first = 0.5 * (delta_j - second)
            scale = 1.0 + np.abs(base2) + np.abs(second)
            report.first_order_p2 = max(report.first_order_p2, float(np.max(np.abs(first))))
            report.second_order_p2 = min(report.second_order_p2, float(np.min(second)))
            if np.any(np.abs(first) > atol * scale):
                report.violations.append(f"player 2 stage {k} direction {d}: first-order term "
                                         f"{float(np.max(np.abs(first))):.3e}")
            if np.any(second < -atol * scale):
                report.violations.append(f"player 2 stage {k} direction {d}: second-order term "
                                         f"{float(np.min(second)):.3e}")

    logger.info(f"Inequality checks: {directions} directions, {len(report.violations)} violation(s)")
    return report
