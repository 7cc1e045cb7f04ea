# fictitious-lq/src/selfcoord/fictitious.py
"""
Fictitious-game reduction of the time-inconsistent LQ problem.

The real player (v) is paired with a fictitious precommitted player (u) driving a
copy X_hat of the state. The augmented state is X^a = (X_hat; X); the two players
are coupled only through the punishment mu_k (u_k - v_k)^T Psi_k (u_k - v_k).
"""
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import block_diag

from src.config import Tolerances, config
from src.game.equilibrium import EquilibriumLaw, synthesize_law
from src.game.model import (
    GLQDynamics,
    GLQProblem,
    LQProblem,
    PlayerCost,
    StorageKind,
)
from src.game.riccati import (
    ConvexityBundle,
    RecursionForm,
    RiccatiBundle,
    SolvabilityReport,
    backward_pass,
    check_solvability,
    convexity_pass,
)

logger = logging.getLogger(__name__)

SYMMETRY_ATOL = 1e-12


class PunishmentError(ValueError):
    """Custom exception for malformed punishment data."""
    pass


@dataclass(frozen=True)
class Punishment:
    """Per-stage intensity mu_k and direction Psi_k (m x m symmetric)."""
    mus: Tuple[float, ...]
    psis: Tuple[np.ndarray, ...]

    @property
    def N(self) -> int:
        return len(self.mus)

    @classmethod
    def constant(cls, mu: float, psi, N: int) -> "Punishment":
        psi = np.atleast_2d(np.asarray(psi, dtype=np.float64))
        return cls(mus=(float(mu),) * N, psis=tuple(psi for _ in range(N)))

    def with_mus(self, mus: Sequence[float]) -> "Punishment":
        return Punishment(mus=tuple(float(mu) for mu in mus), psis=self.psis)

    def with_mu(self, mu: float) -> "Punishment":
        return self.with_mus((mu,) * self.N)

    def upsilon(self, k: int, literal: bool = False) -> np.ndarray:
        """mu_k [[Psi, -Psi], [-Psi, Psi]] (or all-plus signs for the literal reading)."""
        psi = self.psis[k]
        off = psi if literal else -psi
        return self.mus[k] * np.block([[psi, off], [off, psi]])

    def validate(self, N: int, m: int, allow_negative: bool = False) -> None:
        if self.N != N or len(self.psis) != N:
            raise PunishmentError(f"Punishment has {self.N} intensities and {len(self.psis)} "
                                  f"directions for horizon N={N}")
        for k, (mu, psi) in enumerate(zip(self.mus, self.psis)):
            if psi.shape != (m, m):
                raise PunishmentError(f"Psi_{k} has shape {psi.shape}, expected {(m, m)}")
            if np.max(np.abs(psi - psi.T), initial=0.0) > SYMMETRY_ATOL * (1.0 + np.max(np.abs(psi), initial=0.0)):
                raise PunishmentError(f"Psi_{k} is not symmetric")
            if not np.isfinite(mu):
                raise PunishmentError(f"mu_{k} is not finite")
            if mu < 0:
                if not allow_negative:
                    raise PunishmentError(f"mu_{k} = {mu} < 0 (pass allow_negative to override)")
                logger.warning(f"Negative punishment intensity mu_{k} = {mu}")


@dataclass
class PlayerLaw:
    """One player's rows of the augmented equilibrium law."""
    name: str
    rows: slice
    Kdev: Dict[int, np.ndarray]
    Kbar: Dict[int, np.ndarray]
    c: Dict[int, np.ndarray]
    mean_path: Dict[int, np.ndarray]

    @classmethod
    def from_law(cls, law: EquilibriumLaw, name: str, rows: slice) -> "PlayerLaw":
        return cls(
            name=name,
            rows=rows,
            Kdev={k: K[rows] for k, K in law.Kdev.items()},
            Kbar={k: K[rows] for k, K in law.Kbar.items()},
            c={k: c[rows] for k, c in law.c.items()},
            mean_path=law.mean_path,
        )

    def control(self, k: int, Xa: np.ndarray, mean: Optional[np.ndarray] = None) -> np.ndarray:
        mean = self.mean_path[k] if mean is None else mean
        Xa = np.atleast_2d(Xa)
        return (Xa - mean) @ self.Kdev[k].T + (self.Kbar[k] @ mean + self.c[k])[None, :]


@dataclass
class SelfCoordinationSolution:
    """Augmented problem, its solve, and the two extracted laws."""
    problem: GLQProblem
    punishment: Punishment
    t: int
    x: np.ndarray
    bundle: RiccatiBundle
    law: EquilibriumLaw
    selfcoord: PlayerLaw  # v rows
    precommit: PlayerLaw  # u rows
    convexity: Optional[ConvexityBundle] = None
    report: Optional[SolvabilityReport] = None

    @property
    def m(self) -> int:
        return self.problem.m1


def augmented_dynamics(lq: LQProblem) -> GLQDynamics:
    n, m = lq.n, lq.m
    zero_b = np.zeros((n, m))
    A, B1, B2, C, D1, D2 = [], [], [], [], [], []
    for k in range(lq.N):
        A.append(block_diag(lq.A[k], lq.A[k]))
        B1.append(np.vstack([lq.B[k], zero_b]))
        B2.append(np.vstack([zero_b, lq.B[k]]))
        C.append(tuple(block_diag(Ci, Ci) for Ci in lq.C[k]))
        D1.append(tuple(np.vstack([Di, zero_b]) for Di in lq.D[k]))
        D2.append(tuple(np.vstack([zero_b, Di]) for Di in lq.D[k]))
    return GLQDynamics(N=lq.N, n=2 * n, m1=m, m2=m, p=lq.p, A=tuple(A), B1=tuple(B1),
                       B2=tuple(B2), C=tuple(C), D1=tuple(D1), D2=tuple(D2))


def _embed(block: np.ndarray, first: bool) -> np.ndarray:
    """diag(block, 0) or diag(0, block)."""
    zero = np.zeros_like(block)
    return block_diag(block, zero) if first else block_diag(zero, block)


def _embed_vec(vec: np.ndarray, first: bool) -> np.ndarray:
    zero = np.zeros_like(vec)
    return np.concatenate([vec, zero] if first else [zero, vec])


def augment(lq: LQProblem, punish: Punishment, literal_upsilon: bool = False,
            allow_negative: bool = False) -> GLQProblem:
    """
    Augmented two-player game of an LQ problem under a punishment.

    Player 1 is the fictitious precommitted self with weights on X_hat; player 2 is
    the real self with weights on X. Player 2's own-stage weights carry the
    punishment, its later-stage weights only R^0.
    """
    N, m = lq.N, lq.m
    punish.validate(N, m, allow_negative)
    w = lq.weights
    stationary = w.storage is StorageKind.STATIONARY
    zm = np.zeros((m, m))

    # player 1, indexed (t, k) like the LQ weights
    run1: Dict[str, Dict] = {name: {} for name in ("Q", "Qbar", "R11", "R12", "R21", "R22",
                                                   "R11bar", "q")}
    index_pairs = [(k, k) for k in range(N)] if stationary else list(w.keys())
    for t, k in index_pairs:
        key = k if stationary else (t, k)
        ups = punish.upsilon(k, literal_upsilon)
        run1["Q"][key] = _embed(w.weight("Q", t, k), True)
        run1["Qbar"][key] = _embed(w.weight("Qbar", t, k), True)
        run1["R11"][key] = w.weight("R11", t, k) + ups[:m, :m]
        run1["R12"][key] = ups[:m, m:]
        run1["R21"][key] = ups[m:, :m]
        run1["R22"][key] = ups[m:, m:]
        run1["R11bar"][key] = w.weight("R11bar", t, k)
        run1["q"][key] = _embed_vec(w.weight("q", t, k), True)

    terminal_ts = [0] if stationary else range(N)
    term1 = {
        "G": {t: _embed(w.terminal_weight("G", t), True) for t in terminal_ts},
        "Gbar": {t: _embed(w.terminal_weight("Gbar", t), True) for t in terminal_ts},
        "g": {t: _embed_vec(w.terminal_weight("g", t), True) for t in terminal_ts},
    }
    cost1 = PlayerCost(player=1, N=N, n=2 * lq.n, m1=m, m2=m,
                       storage=w.storage, running=run1, terminal=term1)

    # player 2 depends on whether l == k, so it is always double-indexed
    run2: Dict[str, Dict] = {name: {} for name in ("Q", "Qbar", "R11", "R12", "R21", "R22",
                                                   "R22bar", "q")}
    for k in range(N):
        ups = punish.upsilon(k, literal_upsilon)
        for l in range(k, N):
            key = (k, l)
            run2["Q"][key] = _embed(w.weight("Q", k, l), False)
            run2["Qbar"][key] = _embed(w.weight("Qbar", k, l), False)
            if l == k:
                run2["R11"][key] = ups[:m, :m]
                run2["R12"][key] = ups[:m, m:]
                run2["R21"][key] = ups[m:, :m]
                run2["R22"][key] = w.weight("R11", k, k) + ups[m:, m:]
            else:
                run2["R11"][key] = zm
                run2["R12"][key] = zm
                run2["R21"][key] = zm
                run2["R22"][key] = w.weight("R11", k, l)
            run2["R22bar"][key] = w.weight("R11bar", k, l)
            run2["q"][key] = _embed_vec(w.weight("q", k, l), False)
    term2 = {
        "G": {k: _embed(w.terminal_weight("G", k), False) for k in range(N)},
        "Gbar": {k: _embed(w.terminal_weight("Gbar", k), False) for k in range(N)},
        "g": {k: _embed_vec(w.terminal_weight("g", k), False) for k in range(N)},
    }
    cost2 = PlayerCost(player=2, N=N, n=2 * lq.n, m1=m, m2=m,
                       storage=StorageKind.DOUBLE_INDEXED, running=run2, terminal=term2)

    return GLQProblem(dynamics=augmented_dynamics(lq), noise=lq.noise, cost1=cost1, cost2=cost2)


def self_coordination(lq: LQProblem, punish: Punishment, t: int, x, literal_upsilon: bool = False,
                      allow_negative: bool = False, check: bool = True,
                      tol: Optional[Tolerances] = None,
                      form: RecursionForm = RecursionForm.GENERAL) -> SelfCoordinationSolution:
    """
    Solve the fictitious game from (t, (x; x)) and extract both players' laws.

    Args:
        check: also run the convexity pass and the solvability report
        form: gain-term closure of the value recursions

    Returns:
        SelfCoordinationSolution with v rows as the self-coordination law and u rows
        as the fictitious precommitted law
    """
    tol = tol or config.tolerances
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != lq.n:
        raise PunishmentError(f"Initial state has dimension {x.shape[0]}, expected {lq.n}")
    problem = augment(lq, punish, literal_upsilon, allow_negative)
    bundle = backward_pass(problem, t, tol, form)
    law = synthesize_law(problem, bundle, np.concatenate([x, x]))
    m = lq.m
    solution = SelfCoordinationSolution(
        problem=problem, punishment=punish, t=t, x=x, bundle=bundle, law=law,
        selfcoord=PlayerLaw.from_law(law, "selfcoord", slice(m, 2 * m)),
        precommit=PlayerLaw.from_law(law, "precommit", slice(0, m)),
    )
    if check:
        solution.convexity = convexity_pass(problem, t, tol)
        solution.report = check_solvability(bundle, solution.convexity, tol)
        logger.debug(f"Self-coordination at t={t}: {solution.report.verdict.value}")
    return solution
