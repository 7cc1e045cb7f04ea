# fictitious-lq/src/game/riccati.py
"""
Backward Riccati-like recursions for the two-player game.

backward_pass evaluates the stationarity family (P, Pcal, sigma for player 1 and the
double-indexed T, Tcal, Ttil, xi for player 2) together with the assembled W/H/h
blocks and the equilibrium gains. convexity_pass evaluates U, Ucal, V, Vcal and the
M/O blocks. Deviation quantities carry plain weights; mean quantities carry script
weights in the drift terms and plain ones in the noise terms.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config import Tolerances, config
from src.game.model import GLQProblem
from src.game.tree import ScenarioTree, random_controls
from src.utils.numkit import (
    in_range,
    is_nonsingular,
    is_psd,
    pinv,
    projection_identity,
    symmetrize,
)

logger = logging.getLogger(__name__)


class NumericalBreakdownError(ArithmeticError):
    """Custom exception for NaN/Inf appearing mid-recursion."""

    def __init__(self, stage: int, block: str, t: Optional[int] = None):
        self.stage = stage
        self.block = block
        self.t = t
        where = f"t={t}, " if t is not None else ""
        super().__init__(f"Non-finite values in {block} at {where}stage {stage}")


class RecursionForm(str, Enum):
    """How the value recursions close the gain terms."""
    GENERAL = "general"  # left factors A'X'B + S^T + sum C'X'D
    SYMMETRIC = "symmetric"  # left factors H^T, exact only when P and T are symmetric


class Verdict(str, Enum):
    SUFFICIENT_UNIQUE = "SufficientUnique"
    SUFFICIENT_EXISTS = "SufficientExists"
    UNDETERMINED = "Undetermined"


def noise_sum(delta: np.ndarray, left: Sequence[np.ndarray], mid: np.ndarray,
              right: Sequence[np.ndarray]) -> np.ndarray:
    """sum_{i,j} delta_ij left_i^T mid right_j (needs p >= 1)."""
    out = np.zeros((left[0].shape[1], right[0].shape[1]))
    for i, li in enumerate(left):
        for j, rj in enumerate(right):
            if delta[i, j] != 0.0:
                out += delta[i, j] * (li.T @ mid @ rj)
    return out


def _finite(value: np.ndarray, stage: int, block: str, t: int) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NumericalBreakdownError(stage, block, t)
    return value


@dataclass
class StageBlocks:
    """Assembled blocks and equilibrium gains of one stage k (initial time t)."""
    k: int
    W1: np.ndarray  # [W^{1(11)} W^{1(12)}]
    Wcal1: np.ndarray
    What2: np.ndarray  # [What^{2(21)} What^{2(22)}] at (k, k)
    Wcal2: np.ndarray
    H1: np.ndarray  # (m1+m2) x n, rows s = 1, 2
    Hcal1: np.ndarray
    h1: np.ndarray
    h2: np.ndarray
    W: np.ndarray
    Wt: np.ndarray
    H: np.ndarray  # (m1+m2) x 2n block diagonal
    Ht: np.ndarray
    h: np.ndarray
    W_pinv: np.ndarray
    Wt_pinv: np.ndarray
    K: np.ndarray  # deviation gain
    Kbar: np.ndarray  # mean gain
    c: np.ndarray  # offset

    @property
    def HS(self) -> np.ndarray:
        """H S_2 = [H^{1(1)}; Hhat^{2(2)}]."""
        n = self.H.shape[1] // 2
        return self.H[:, :n] + self.H[:, n:]

    @property
    def HtS(self) -> np.ndarray:
        n = self.Ht.shape[1] // 2
        return self.Ht[:, :n] + self.Ht[:, n:]


@dataclass
class RowBlocks:
    """Player-2 blocks of row k at stage l."""
    H2: np.ndarray
    H2hat: np.ndarray
    H2cal: np.ndarray


@dataclass
class RiccatiBundle:
    """All stationarity recursions for one initial time t."""
    t: int
    N: int
    n: int
    m1: int
    m2: int
    P: Dict[int, np.ndarray] = field(default_factory=dict)
    Pcal: Dict[int, np.ndarray] = field(default_factory=dict)
    sigma: Dict[int, np.ndarray] = field(default_factory=dict)
    T: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    Tcal: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    Ttil: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    xi: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    stages: Dict[int, StageBlocks] = field(default_factory=dict)
    rows: Dict[Tuple[int, int], RowBlocks] = field(default_factory=dict)

    def stage(self, k: int) -> StageBlocks:
        return self.stages[k]


@dataclass
class ConvexityBundle:
    """Convexity recursions (U, Ucal, V, Vcal) and M/O blocks for one initial time t."""
    t: int
    N: int
    U: Dict[int, np.ndarray] = field(default_factory=dict)
    Ucal: Dict[int, np.ndarray] = field(default_factory=dict)
    V: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    Vcal: Dict[Tuple[int, int], np.ndarray] = field(default_factory=dict)
    M: Dict[int, np.ndarray] = field(default_factory=dict)
    Mcal: Dict[int, np.ndarray] = field(default_factory=dict)
    O: Dict[int, np.ndarray] = field(default_factory=dict)
    Ocal: Dict[int, np.ndarray] = field(default_factory=dict)
    OO: Dict[int, np.ndarray] = field(default_factory=dict)  # blackboard O_{k,k}


@dataclass
class StageCheck:
    """Identity, PSD and rank flags of one stage."""
    k: int
    w_projection: bool
    wt_projection_H: bool
    wt_projection_h: bool
    o_projection: bool
    ocal_projection: bool
    o_psd: bool
    ocal_psd: bool
    oo_psd: bool
    w_nonsingular: bool
    wt_nonsingular: bool

    @property
    def sufficient(self) -> bool:
        return all((self.w_projection, self.wt_projection_H, self.wt_projection_h,
                    self.o_projection, self.ocal_projection,
                    self.o_psd, self.ocal_psd, self.oo_psd))

    @property
    def failures(self) -> List[str]:
        names = ("w_projection", "wt_projection_H", "wt_projection_h", "o_projection",
                 "ocal_projection", "o_psd", "ocal_psd", "oo_psd")
        return [name for name in names if not getattr(self, name)]


@dataclass
class SolvabilityReport:
    t: int
    stages: List[StageCheck]

    @property
    def verdict(self) -> Verdict:
        if not all(s.sufficient for s in self.stages):
            return Verdict.UNDETERMINED
        if all(s.w_nonsingular and s.wt_nonsingular for s in self.stages):
            return Verdict.SUFFICIENT_UNIQUE
        return Verdict.SUFFICIENT_EXISTS

    @property
    def ok(self) -> bool:
        return self.verdict is not Verdict.UNDETERMINED

    def failing_stages(self) -> Dict[int, List[str]]:
        return {s.k: s.failures for s in self.stages if s.failures}


def backward_pass(problem: GLQProblem, t: int, tol: Optional[Tolerances] = None,
                  form: RecursionForm = RecursionForm.GENERAL) -> RiccatiBundle:
    """
    Evaluate the stationarity recursions for initial time t.

    One sweep over l = N-1 .. t: stage-l gains need P at l+1 and row l of the
    player-2 family, then P, Pcal, sigma and every row k in t..l are updated.
    P and T are not symmetric in general, so the gain terms of the value
    recursions use the left factors L = S^T + A'X'B + sum C'X'D; with
    form=SYMMETRIC they use H^T instead.
    """
    tol = tol or config.tolerances
    N = problem.N
    if not 0 <= t <= N - 1:
        raise ValueError(f"Initial time t={t} outside [0, {N - 1}]")
    dyn, c1, c2 = problem.dynamics, problem.cost1, problem.cost2
    n, m1, m2 = dyn.n, dyn.m1, dyn.m2
    b = RiccatiBundle(t=t, N=N, n=n, m1=m1, m2=m2)
    general = RecursionForm(form) is RecursionForm.GENERAL

    b.P[N] = c1.terminal_weight("G", t).copy()
    b.Pcal[N] = c1.script("G", t)
    b.sigma[N] = c1.terminal_weight("g", t).copy()
    for k in range(t, N):
        b.T[(k, N)] = c2.terminal_weight("G", k).copy()
        b.Tcal[(k, N)] = c2.script("G", k)
        b.Ttil[(k, N)] = np.zeros((n, n))
        b.xi[(k, N)] = c2.terminal_weight("g", k).copy()

    for l in range(N - 1, t - 1, -1):
        A, B, B1, B2 = dyn.A[l], dyn.B(l), dyn.B1[l], dyn.B2[l]
        C = list(dyn.C[l])
        D = [dyn.D(l, i) for i in range(dyn.p)]
        D1, D2 = list(dyn.D1[l]), list(dyn.D2[l])
        delta = problem.noise.delta(l)
        ns = lambda left, mid, right: noise_sum(delta, left, mid, right)

        # player 1 blocks at (t, l)
        Pn, Pcn, sn = b.P[l + 1], b.Pcal[l + 1], b.sigma[l + 1]
        noise_H1 = ns(D, Pn, C) if dyn.p else np.zeros((m1 + m2, n))
        H1 = c1.S(t, l) + B.T @ Pn @ A + noise_H1
        Hcal1 = c1.S(t, l) + c1.S(t, l, bar=True) + B.T @ Pcn @ A + noise_H1
        noise_W1 = ns(D1, Pn, D) if dyn.p else np.zeros((m1, m1 + m2))
        R1, Rcal1 = c1.R(t, l), c1.R(t, l) + c1.R(t, l, bar=True)
        W1 = R1[:m1, :] + B1.T @ Pn @ B + noise_W1
        Wcal1 = Rcal1[:m1, :] + B1.T @ Pcn @ B + noise_W1
        h1 = B1.T @ sn + c1.weight("rho1", t, l)

        # player 2 diagonal blocks at (l, l)
        Tn, Tcn, Ttn, xin = b.T[(l, l + 1)], b.Tcal[(l, l + 1)], b.Ttil[(l, l + 1)], b.xi[(l, l + 1)]
        Rcal2 = c2.R(l, l) + c2.R(l, l, bar=True)
        noise_W2 = ns(D2, Tn, D) if dyn.p else np.zeros((m2, m1 + m2))
        What2 = Rcal2[m1:, :] + B2.T @ Tcn @ B + noise_W2
        Wcal2 = Rcal2[m1:, :] + B2.T @ (Tcn + Ttn) @ B + noise_W2
        h2 = B2.T @ xin + c2.weight("rho2", l, l)

        S2cal_ll = c2.S(l, l) + c2.S(l, l, bar=True)
        noise_H2_ll = ns(D, Tn, C) if dyn.p else np.zeros((m1 + m2, n))
        H2hat_ll = S2cal_ll + B.T @ Tcn @ A + noise_H2_ll
        H2cal_ll = S2cal_ll + B.T @ (Tcn + Ttn) @ A + noise_H2_ll

        W = np.vstack([W1, What2])
        Wt = np.vstack([Wcal1, Wcal2])
        zero12, zero21 = np.zeros((m1, n)), np.zeros((m2, n))
        H = np.block([[H1[:m1], zero12], [zero21, H2hat_ll[m1:]]])
        Ht = np.block([[Hcal1[:m1], zero12], [zero21, H2cal_ll[m1:]]])
        h = np.concatenate([h1, h2])
        for name, value in (("W", W), ("Wt", Wt), ("H", H), ("Ht", Ht), ("h", h)):
            _finite(value, l, name, t)

        W_pinv, Wt_pinv = pinv(W, tol), pinv(Wt, tol)
        K = -W_pinv @ np.vstack([H1[:m1], H2hat_ll[m1:]])
        Kbar = -Wt_pinv @ np.vstack([Hcal1[:m1], H2cal_ll[m1:]])
        c = -Wt_pinv @ h

        b.stages[l] = StageBlocks(
            k=l, W1=W1, Wcal1=Wcal1, What2=What2, Wcal2=Wcal2, H1=H1, Hcal1=Hcal1,
            h1=h1, h2=h2, W=W, Wt=Wt, H=H, Ht=Ht, h=h, W_pinv=W_pinv, Wt_pinv=Wt_pinv,
            K=K, Kbar=Kbar, c=c,
        )

        CPC = ns(C, Pn, C) if dyn.p else np.zeros((n, n))
        if general:
            noise_L1 = ns(C, Pn, D) if dyn.p else np.zeros((n, m1 + m2))
            L1 = c1.S(t, l).T + A.T @ Pn @ B + noise_L1
            Lcal1 = (c1.S(t, l) + c1.S(t, l, bar=True)).T + A.T @ Pcn @ B + noise_L1
        else:
            L1, Lcal1 = H1.T, Hcal1.T
        b.P[l] = _finite(c1.weight("Q", t, l) + A.T @ Pn @ A + CPC + L1 @ K, l, "P", t)
        b.Pcal[l] = _finite(c1.script("Q", t, l) + A.T @ Pcn @ A + CPC + Lcal1 @ Kbar, l, "Pcal", t)
        b.sigma[l] = _finite(Lcal1 @ c + A.T @ sn + c1.weight("q", t, l), l, "sigma", t)

        for k in range(t, l + 1):
            Tn, Tcn, Ttn, xin = b.T[(k, l + 1)], b.Tcal[(k, l + 1)], b.Ttil[(k, l + 1)], b.xi[(k, l + 1)]
            noise_H2 = ns(D, Tn, C) if dyn.p else np.zeros((m1 + m2, n))
            S2, S2cal = c2.S(k, l), c2.S(k, l) + c2.S(k, l, bar=True)
            H2 = S2 + B.T @ Tn @ A + noise_H2
            H2hat = S2cal + B.T @ Tcn @ A + noise_H2
            H2cal = S2cal + B.T @ (Tcn + Ttn) @ A + noise_H2
            b.rows[(k, l)] = RowBlocks(H2=H2, H2hat=H2hat, H2cal=H2cal)

            CTC = ns(C, Tn, C) if dyn.p else np.zeros((n, n))
            if general:
                noise_L2 = ns(C, Tn, D) if dyn.p else np.zeros((n, m1 + m2))
                L2 = S2.T + A.T @ Tn @ B + noise_L2
                L2hat = S2cal.T + A.T @ Tcn @ B + noise_L2
                L2cal = S2cal.T + A.T @ (Tcn + Ttn) @ B + noise_L2
            else:
                L2, L2hat, L2cal = H2.T, H2hat.T, H2cal.T
            b.T[(k, l)] = _finite(c2.weight("Q", k, l) + A.T @ Tn @ A + CTC + L2 @ K, l, "T", t)
            b.Tcal[(k, l)] = _finite(c2.script("Q", k, l) + A.T @ Tcn @ A + CTC + L2hat @ K, l, "Tcal", t)
            b.Ttil[(k, l)] = _finite(A.T @ Ttn @ A + L2cal @ Kbar - L2hat @ K, l, "Ttil", t)
            b.xi[(k, l)] = _finite(L2cal @ c + A.T @ xin + c2.weight("q", k, l), l, "xi", t)

        logger.debug(f"backward_pass t={t}: stage {l} done")

    return b


def convexity_pass(problem: GLQProblem, t: int, tol: Optional[Tolerances] = None) -> ConvexityBundle:
    """U/Ucal Riccati recursions with M/O pseudoinverse terms, V/Vcal linear recursions, O_{k,k}."""
    tol = tol or config.tolerances
    N = problem.N
    if not 0 <= t <= N - 1:
        raise ValueError(f"Initial time t={t} outside [0, {N - 1}]")
    dyn, c1, c2 = problem.dynamics, problem.cost1, problem.cost2
    n, m1 = dyn.n, dyn.m1
    cb = ConvexityBundle(t=t, N=N)

    cb.U[N] = symmetrize(c1.terminal_weight("G", t))
    cb.Ucal[N] = symmetrize(c1.script("G", t))
    for k in range(t, N):
        cb.V[(k, N)] = symmetrize(c2.terminal_weight("G", k))
        cb.Vcal[(k, N)] = symmetrize(c2.script("G", k))

    for l in range(N - 1, t - 1, -1):
        A, B1, B2 = dyn.A[l], dyn.B1[l], dyn.B2[l]
        C, D1, D2 = list(dyn.C[l]), list(dyn.D1[l]), list(dyn.D2[l])
        delta = problem.noise.delta(l)
        ns = lambda left, mid, right: noise_sum(delta, left, mid, right)

        Un, Ucn = cb.U[l + 1], cb.Ucal[l + 1]
        noise_M = ns(D1, Un, C) if dyn.p else np.zeros((m1, n))
        noise_O = ns(D1, Un, D1) if dyn.p else np.zeros((m1, m1))
        M = c1.weight("S1", t, l) + B1.T @ Un @ A + noise_M
        Mcal = c1.script("S1", t, l) + B1.T @ Ucn @ A + noise_M
        O = symmetrize(c1.weight("R11", t, l) + B1.T @ Un @ B1 + noise_O)
        Ocal = symmetrize(c1.script("R11", t, l) + B1.T @ Ucn @ B1 + noise_O)
        for name, value in (("M", M), ("Mcal", Mcal), ("O", O), ("Ocal", Ocal)):
            _finite(value, l, name, t)
        cb.M[l], cb.Mcal[l], cb.O[l], cb.Ocal[l] = M, Mcal, O, Ocal

        CUC = ns(C, Un, C) if dyn.p else np.zeros((n, n))
        cb.U[l] = _finite(symmetrize(
            c1.weight("Q", t, l) + A.T @ Un @ A + CUC - M.T @ pinv(O, tol) @ M), l, "U", t)
        cb.Ucal[l] = _finite(symmetrize(
            c1.script("Q", t, l) + A.T @ Ucn @ A + CUC - Mcal.T @ pinv(Ocal, tol) @ Mcal), l, "Ucal", t)

        for k in range(t, l + 1):
            Vn, Vcn = cb.V[(k, l + 1)], cb.Vcal[(k, l + 1)]
            CVC = ns(C, Vn, C) if dyn.p else np.zeros((n, n))
            if k == l:
                noise_OO = ns(D2, Vn, D2) if dyn.p else np.zeros((dyn.m2, dyn.m2))
                cb.OO[l] = _finite(symmetrize(c2.script("R22", l, l) + B2.T @ Vcn @ B2 + noise_OO), l, "OO", t)
            cb.V[(k, l)] = _finite(symmetrize(c2.weight("Q", k, l) + A.T @ Vn @ A + CVC), l, "V", t)
            cb.Vcal[(k, l)] = _finite(symmetrize(c2.script("Q", k, l) + A.T @ Vcn @ A + CVC), l, "Vcal", t)

    return cb


def check_solvability(r: RiccatiBundle, cb: ConvexityBundle,
                      tol: Optional[Tolerances] = None) -> SolvabilityReport:
    """Projection identities, PSD flags and nonsingularity per stage; verdict on top."""
    tol = tol or config.tolerances
    if (r.t, r.N) != (cb.t, cb.N):
        raise ValueError(f"Bundles from different runs: (t={r.t}, N={r.N}) vs (t={cb.t}, N={cb.N})")
    checks = []
    for k in range(r.t, r.N):
        s = r.stages[k]
        checks.append(StageCheck(
            k=k,
            w_projection=projection_identity(s.W, s.H, tol),
            wt_projection_H=projection_identity(s.Wt, s.Ht, tol),
            wt_projection_h=projection_identity(s.Wt, s.h, tol),
            o_projection=projection_identity(cb.O[k], cb.M[k], tol),
            ocal_projection=projection_identity(cb.Ocal[k], cb.Mcal[k], tol),
            o_psd=is_psd(cb.O[k], tol),
            ocal_psd=is_psd(cb.Ocal[k], tol),
            oo_psd=is_psd(cb.OO[k], tol),
            w_nonsingular=is_nonsingular(s.W, tol),
            wt_nonsingular=is_nonsingular(s.Wt, tol),
        ))
    report = SolvabilityReport(t=r.t, stages=checks)
    logger.debug(f"Solvability at t={r.t}: {report.verdict.value}")
    return report


@dataclass
class RangeReport:
    """Sampled range-membership results."""
    samples: int
    passed: int
    failures: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.passed == self.samples


def shifted_state(problem: GLQProblem, cb: ConvexityBundle, tree: ScenarioTree,
                  u: Sequence[np.ndarray], tol: Optional[Tolerances] = None
                  ) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """
    alpha driven by the shifted control eta = u - O^+ M (alpha - E_t alpha) - Ocal^+ Mcal E_t alpha.

    Returns:
        (alpha per level, eta per level)
    """
    tol = tol or config.tolerances
    dyn = problem.dynamics
    alpha = [np.zeros((1, dyn.n))]
    etas = []
    for level in range(tree.depth):
        k = tree.stage(level)
        a = alpha[-1]
        mean = tree.root_mean(a, level)
        dev = a - mean
        eta = (u[level] - dev @ (pinv(cb.O[k], tol) @ cb.M[k]).T
               - (pinv(cb.Ocal[k], tol) @ cb.Mcal[k] @ mean)[None, :])
        etas.append(eta)
        nxt = tree.to_children(a @ dyn.A[k].T + eta @ dyn.B1[k].T)
        if dyn.p:
            w = tree.edge_noise(level)
            ac, ec = tree.to_children(a), tree.to_children(eta)
            for i in range(dyn.p):
                nxt += w[:, i:i + 1] * (ac @ dyn.C[k][i].T + ec @ dyn.D1[k][i].T)
        alpha.append(nxt)
    return alpha, etas


def convexity_range_check(problem: GLQProblem, cb: ConvexityBundle, tree: ScenarioTree,
                          samples: int, seed: int, tol: Optional[Tolerances] = None) -> RangeReport:
    """Sampled node-wise check that M(alpha - E alpha) in Ran(O) and Mcal E alpha in Ran(Ocal)."""
    tol = tol or config.tolerances
    if tree.depth != problem.N - cb.t:
        raise ValueError(f"Tree depth {tree.depth} != N - t = {problem.N - cb.t}")
    rng = np.random.default_rng(seed)
    report = RangeReport(samples=samples, passed=0)
    for sample in range(samples):
        u = random_controls(tree, problem.m1, rng)
        alpha, _ = shifted_state(problem, cb, tree, u, tol)
        ok = True
        for level in range(tree.depth):
            k = tree.stage(level)
            mean = tree.root_mean(alpha[level], level)
            dev = alpha[level] - mean
            if not in_range(cb.O[k], cb.M[k] @ dev.T, tol):
                ok = False
                report.failures.append(f"sample {sample}: deviation range fails at stage {k}")
            if not in_range(cb.Ocal[k], cb.Mcal[k] @ mean, tol):
                ok = False
                report.failures.append(f"sample {sample}: mean range fails at stage {k}")
        report.passed += int(ok)
    logger.debug(f"convexity_range_check: {report.passed}/{samples} samples pass")
    return report
