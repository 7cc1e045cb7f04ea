# fictitious-lq/src/evaluate/moments.py
"""
Exact evaluation of expected tail objectives by moment propagation.

Under an affine open-loop law the augmented state Z evolves as
Z' = F Z + f + sum_i (G^i Z + g^i) w^i. From stage k on, the conditional mean
M_l = E_k Z_l follows the drift only, so the pair (Z, M) started at M_k = Z_k
carries every moment the tail cost needs.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Tuple, Union

import numpy as np
from scipy.linalg import block_diag

from src.game.equilibrium import EquilibriumLaw
from src.game.model import GLQDynamics, LQProblem, StorageKind
from src.selfcoord.fictitious import SelfCoordinationSolution, augmented_dynamics
from src.utils.numkit import second_moment_step

logger = logging.getLogger(__name__)

POLICIES = ("selfcoord", "precommit")


class EvaluationError(ValueError):
    """Custom exception for evaluation requests outside the law's horizon."""
    pass


@dataclass
class MomentState:
    """Mean and second moment of a stacked process."""
    mean: np.ndarray
    smom: np.ndarray

    @classmethod
    def deterministic(cls, value: np.ndarray) -> "MomentState":
        value = np.asarray(value, dtype=np.float64).reshape(-1)
        return cls(mean=value, smom=np.outer(value, value))

    def stacked(self) -> "MomentState":
        """(Z, M) with M = Z: perfectly correlated copy."""
        return MomentState(mean=np.concatenate([self.mean, self.mean]),
                           smom=np.block([[self.smom, self.smom], [self.smom, self.smom]]))


def law_of(solution) -> EquilibriumLaw:
    """Accept a bare law or anything carrying one (self-coordination or MV control)."""
    if isinstance(solution, EquilibriumLaw):
        return solution
    law = getattr(solution, "law", None)
    if not isinstance(law, EquilibriumLaw):
        raise EvaluationError(f"No equilibrium law on {type(solution).__name__}")
    return law


def last_stage(lq: LQProblem) -> int:
    """Latest evaluable k: N for Stationary weights, N-1 when the weights are double-indexed."""
    return lq.N if lq.weights.storage is StorageKind.STATIONARY else lq.N - 1


def closed_loop(dyn: GLQDynamics, law: EquilibriumLaw, k: int
                ) -> Tuple[np.ndarray, np.ndarray, List[np.ndarray], List[np.ndarray], np.ndarray]:
    """
    Closed-loop coefficients at stage k.

    Returns:
        (F, f, G^i, g^i, offset) with the law written as U = K Z + offset
    """
    K = law.Kdev[k]
    offset = (law.Kbar[k] - K) @ law.mean_path[k] + law.c[k]
    B = dyn.B(k)
    F = dyn.A[k] + B @ K
    f = B @ offset
    G = [dyn.C[k][i] + dyn.D(k, i) @ K for i in range(dyn.p)]
    g = [dyn.D(k, i) @ offset for i in range(dyn.p)]
    return F, f, G, g, offset


def _expect_quadratic(W: np.ndarray, L: np.ndarray, l: np.ndarray, state: MomentState) -> float:
    """E[(L Y + l)^T W (L Y + l)]."""
    LW = L.T @ W
    return float(np.trace(LW @ L @ state.smom) + 2.0 * l @ W @ L @ state.mean + l @ W @ l)


def policy_selectors(lq: LQProblem, policy: str) -> Tuple[np.ndarray, slice]:
    n, m = lq.n, lq.m
    if policy == "selfcoord":
        return np.hstack([np.zeros((n, n)), np.eye(n)]), slice(m, 2 * m)
    if policy == "precommit":
        return np.hstack([np.eye(n), np.zeros((n, n))]), slice(0, m)
    raise EvaluationError(f"Unknown policy {policy!r}; expected one of {POLICIES}")


def _tail_cost(lq: LQProblem, dyn: GLQDynamics, law: EquilibriumLaw, k: int, start: MomentState,
               Sx: np.ndarray, rows: slice) -> float:
    """E of the stage-k tail objective from the stage-k moments of Z."""
    w = lq.weights
    d = dyn.n
    zero_d = np.zeros((Sx.shape[0], d))
    X_sel, mX_sel = np.hstack([Sx, zero_d]), np.hstack([zero_d, Sx])
    state = start.stacked()
    total = 0.0
    zero_n = np.zeros(Sx.shape[0])
    for l in range(k, lq.N):
        F, f, G, g, offset = closed_loop(dyn, law, l)
        Kv = law.Kdev[l][rows]
        zero_u = np.zeros((Kv.shape[0], d))
        v_sel, mv_sel = np.hstack([Kv, zero_u]), np.hstack([zero_u, Kv])
        v_off = offset[rows]

        total += _expect_quadratic(w.weight("Q", k, l), X_sel, zero_n, state)
        total += _expect_quadratic(w.weight("Qbar", k, l), mX_sel, zero_n, state)
        total += _expect_quadratic(w.weight("R11", k, l), v_sel, v_off, state)
        total += _expect_quadratic(w.weight("R11bar", k, l), mv_sel, v_off, state)
        total += 2.0 * float(w.weight("q", k, l) @ X_sel @ state.mean)

        # M evolves by drift only
        F2 = block_diag(F, F)
        f2 = np.concatenate([f, f])
        G2 = [block_diag(Gi, np.zeros((d, d))) for Gi in G]
        g2 = [np.concatenate([gi, np.zeros(d)]) for gi in g]
        mean, smom = second_moment_step(F2, f2, G2, g2, lq.noise.delta(l), state.mean, state.smom)
        state = MomentState(mean=mean, smom=smom)

    total += _expect_quadratic(w.terminal_weight("G", k), X_sel, zero_n, state)
    total += _expect_quadratic(w.terminal_weight("Gbar", k), mX_sel, zero_n, state)
    total += 2.0 * float(w.terminal_weight("g", k) @ mX_sel @ state.mean)
    return total


def expected_tail_costs(lq: LQProblem, solution, ks: Iterable[int],
                        policy: str = "selfcoord") -> Dict[int, float]:
    """
    V_k for each requested k under the law fixed at its initial pair.

    Args:
        solution: EquilibriumLaw on the augmented state, or an object carrying one
        policy: "selfcoord" evaluates the v rows on X, "precommit" the u rows on X_hat

    Returns:
        {k: V_k}
    """
    law = law_of(solution)
    Sx, rows = policy_selectors(lq, policy)
    ks = sorted(set(int(k) for k in ks))
    for k in ks:
        if not law.t <= k <= last_stage(lq):
            raise EvaluationError(f"Stage k={k} outside [{law.t}, {last_stage(lq)}]")
    if law.N != lq.N or law.m1 != lq.m or law.m2 != lq.m:
        raise EvaluationError("Law does not belong to the augmented form of this problem")

    dyn = augmented_dynamics(lq)
    state = MomentState.deterministic(law.mean_path[law.t])
    out: Dict[int, float] = {}
    for l in range(law.t, lq.N + 1):
        if l in ks:
            out[l] = _tail_cost(lq, dyn, law, l, state, Sx, rows)
        if l == lq.N:
            break
        F, f, G, g, _ = closed_loop(dyn, law, l)
        mean, smom = second_moment_step(F, f, G, g, lq.noise.delta(l), state.mean, state.smom)
        state = MomentState(mean=mean, smom=smom)
    logger.debug(f"Evaluated {policy} tail costs at stages {ks}")
    return out


def expected_tail_cost(lq: LQProblem, solution, k: int, policy: str = "selfcoord") -> float:
    return expected_tail_costs(lq, solution, [k], policy)[k]


def precommit_baseline(lq: LQProblem, solution: Union[SelfCoordinationSolution, object], k: int) -> float:
    """V^pr_k: the u rows of a zero-punishment solution applied to X_hat."""
    punishment = getattr(solution, "punishment", None)
    if punishment is None:
        punishment = getattr(getattr(solution, "riccati", None), "punishment", None)
    if punishment is not None and any(mu != 0.0 for mu in punishment.mus):
        raise EvaluationError("Precommitted baseline needs a zero-punishment solution")
    return expected_tail_cost(lq, solution, k, policy="precommit")
