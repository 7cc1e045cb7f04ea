# fictitious-lq/src/selfcoord/meanvar.py
"""
Multi-period mean-variance specialization.

Wealth X_{k+1} = s_k X_k + Theta_k^T pi_k with Theta_k = e_k - s_k 1. The objective
Var_t(X_N) - lambda E_t X_N is an LQ problem with n = 1, m = p = p0 and terminal
weights G = 1, Gbar = -1, g = -lambda/2, so it runs through the generic fictitious
path. The specialized recursions below exploit its structure (P = diag(Pbar, 0),
every row of the player-2 family equal to Tbar, zero mean gains).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq, nnls

from src.config import Tolerances, config
from src.game.equilibrium import EquilibriumLaw
from src.game.model import GLQProblem, LQProblem, NoiseSpec, stationary_cost
from src.game.riccati import NumericalBreakdownError, RecursionForm
from src.selfcoord.fictitious import Punishment, PlayerLaw, augment
from src.utils.numkit import in_range, is_psd, pinv, projection_identity, symmetrize

logger = logging.getLogger(__name__)

CONE_FIT_RTOL = 1e-8
ROOT_ATOL = 1e-12


class MarketDataError(ValueError):
    """Custom exception for invalid market data."""
    pass


class ExistenceUnverifiedError(Exception):
    """Custom exception raised when the range conditions of the MV recursions fail."""

    def __init__(self, diagnostics: Dict[int, List[str]]):
        self.diagnostics = diagnostics
        stages = ", ".join(f"{k}: {'/'.join(v)}" for k, v in sorted(diagnostics.items()))
        super().__init__(f"Existence of a self-coordination control unverified ({stages})")


@dataclass(frozen=True)
class MarketData:
    """Riskless returns s_k, risky return moments and the trade-off lambda."""
    N: int
    p0: int
    s: Tuple[float, ...]
    mean_e: Tuple[np.ndarray, ...]
    cov_e: Tuple[np.ndarray, ...]
    lam: float

    @classmethod
    def constant(cls, N: int, s: float, mean_e, cov_e, lam: float) -> "MarketData":
        mean_e = np.asarray(mean_e, dtype=np.float64).reshape(-1)
        cov_e = np.atleast_2d(np.asarray(cov_e, dtype=np.float64))
        return cls(N=N, p0=mean_e.shape[0], s=(float(s),) * N,
                   mean_e=tuple(mean_e for _ in range(N)), cov_e=tuple(cov_e for _ in range(N)),
                   lam=float(lam))

    def mean_theta(self, k: int) -> np.ndarray:
        return self.mean_e[k] - self.s[k]

    def cov_theta(self, k: int) -> np.ndarray:
        return self.cov_e[k]

    def second_theta(self, k: int) -> np.ndarray:
        """E[Theta Theta^T] = Cov + E Theta (E Theta)^T."""
        et = self.mean_theta(k)
        return self.cov_e[k] + np.outer(et, et)

    def growth(self, k: int) -> float:
        """s_{k+1} ... s_{N-1} (1 for the last stage)."""
        return float(np.prod(self.s[k + 1:]))

    def validate(self, tol: Optional[Tolerances] = None) -> None:
        tol = tol or config.tolerances
        if self.N < 1:
            raise MarketDataError(f"Horizon N={self.N} must be positive")
        if not (len(self.s) == len(self.mean_e) == len(self.cov_e) == self.N):
            raise MarketDataError(f"Market data lengths ({len(self.s)}, {len(self.mean_e)}, "
                                  f"{len(self.cov_e)}) do not match N={self.N}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise MarketDataError(f"Trade-off lambda must be positive, got {self.lam}")
        for k in range(self.N):
            if not self.s[k] > 1:
                raise MarketDataError(f"Riskless return s_{k} = {self.s[k]} must exceed 1")
            if self.mean_e[k].shape != (self.p0,):
                raise MarketDataError(f"Mean return at stage {k} has shape {self.mean_e[k].shape}")
            cov = self.cov_e[k]
            if cov.shape != (self.p0, self.p0) or not np.all(np.isfinite(cov)):
                raise MarketDataError(f"Covariance at stage {k} must be a finite {self.p0}x{self.p0} matrix")
            if np.max(np.abs(cov - cov.T)) > 1e-12 * (1.0 + np.max(np.abs(cov))):
                raise MarketDataError(f"Covariance at stage {k} is not symmetric")
            if not is_psd(cov, tol):
                raise MarketDataError(f"Covariance at stage {k} is not PSD")


def mv_punishment(md: MarketData, mus: Sequence[float], phis: Optional[Sequence[np.ndarray]] = None
                  ) -> Punishment:
    """Punishment with direction Phi_k (identity when omitted)."""
    if phis is None:
        phis = [np.eye(md.p0)] * md.N
    return Punishment(mus=tuple(float(mu) for mu in mus),
                      psis=tuple(np.atleast_2d(np.asarray(phi, dtype=np.float64)) for phi in phis))


def mv_lq_problem(md: MarketData) -> LQProblem:
    """Wealth dynamics as an LQ problem with noise w_k = e_k - E e_k."""
    md.validate()
    N, p0 = md.N, md.p0
    A = tuple(np.array([[md.s[k]]]) for k in range(N))
    B = tuple(md.mean_theta(k).reshape(1, p0) for k in range(N))
    C = tuple(tuple(np.zeros((1, 1)) for _ in range(p0)) for _ in range(N))
    # D^i selects the i-th risky position
    D = tuple(tuple(np.eye(p0)[i].reshape(1, p0) for i in range(p0)) for _ in range(N))
    weights = stationary_cost(
        0, N, 1, p0, 0,
        terminal={"G": np.array([[1.0]]), "Gbar": np.array([[-1.0]]), "g": np.array([-md.lam / 2.0])},
    )
    noise = NoiseSpec(p=p0, deltas=tuple(symmetrize(c) for c in md.cov_e))
    return LQProblem(N=N, n=1, m=p0, p=p0, A=A, B=B, C=C, D=D, weights=weights, noise=noise)


def build_mv(md: MarketData, punish: Punishment) -> GLQProblem:
    """Augmented two-state game of the mean-variance problem."""
    for k, phi in enumerate(punish.psis):
        if not is_psd(phi):
            raise MarketDataError(f"Punishment direction Phi_{k} is not PSD")
    return augment(mv_lq_problem(md), punish)


# ============== Specialized recursions ==============

@dataclass
class MVRiccati:
    """Specialized backward recursions, keyed by stage."""
    N: int
    p0: int
    punishment: Punishment
    P11: Dict[int, float] = field(default_factory=dict)
    Tbar: Dict[int, np.ndarray] = field(default_factory=dict)
    W: Dict[int, np.ndarray] = field(default_factory=dict)
    Wt: Dict[int, np.ndarray] = field(default_factory=dict)
    H1: Dict[int, np.ndarray] = field(default_factory=dict)  # first column block, 2p0 x 2
    h: Dict[int, np.ndarray] = field(default_factory=dict)
    W_pinv: Dict[int, np.ndarray] = field(default_factory=dict)
    Wt_pinv: Dict[int, np.ndarray] = field(default_factory=dict)

    def K(self, k: int) -> np.ndarray:
        """Deviation gain on the augmented state."""
        return -self.W_pinv[k] @ self.H1[k]

    def c(self, k: int) -> np.ndarray:
        return -self.Wt_pinv[k] @ self.h[k]


def _stacked_B(et: np.ndarray) -> np.ndarray:
    """[B^1 B^2] on the augmented wealth pair."""
    zero = np.zeros_like(et)
    return np.vstack([np.concatenate([et, zero]), np.concatenate([zero, et])])


def mv_backward(md: MarketData, punish: Punishment, tol: Optional[Tolerances] = None,
                form: RecursionForm = RecursionForm.GENERAL) -> MVRiccati:
    """
    Evaluate Pbar^{(11)}, Tbar and the stage blocks from k = N-1 down to 0.

    Tbar picks up a (21) entry once mu > 0, so its gain term uses the left factor
    A'Tbar'B unless form=SYMMETRIC.
    """
    tol = tol or config.tolerances
    md.validate(tol)
    punish.validate(md.N, md.p0)
    p0 = md.p0
    r = MVRiccati(N=md.N, p0=p0, punishment=punish)
    r.P11[md.N] = 1.0
    r.Tbar[md.N] = np.array([[0.0, 0.0], [0.0, 1.0]])

    for k in range(md.N - 1, -1, -1):
        s, et = md.s[k], md.mean_theta(k)
        cov, second = md.cov_theta(k), md.second_theta(k)
        Pn, Tn = r.P11[k + 1], r.Tbar[k + 1]
        ups = punish.upsilon(k)
        zero = np.zeros((p0, p0))
        lower = np.hstack([Tn[1, 0] * cov, Tn[1, 1] * cov])
        W = ups + np.vstack([np.hstack([Pn * second, zero]), lower])
        Wt = ups + np.vstack([np.hstack([Pn * cov, zero]), lower])
        H1 = np.zeros((2 * p0, 2))
        H1[:p0, 0] = s * Pn * et
        h = -0.5 * md.lam * md.growth(k) * np.concatenate([et, et])
        for name, value in (("W", W), ("Wt", Wt), ("H1", H1), ("h", h)):
            if not np.all(np.isfinite(value)):
                raise NumericalBreakdownError(k, name)

        W_pinv, Wt_pinv = pinv(W, tol), pinv(Wt, tol)
        r.W[k], r.Wt[k], r.H1[k], r.h[k] = W, Wt, H1, h
        r.W_pinv[k], r.Wt_pinv[k] = W_pinv, Wt_pinv

        r.P11[k] = float(s ** 2 * Pn * (1.0 - Pn * et @ W_pinv[:p0, :p0] @ et))
        A = s * np.eye(2)
        if RecursionForm(form) is RecursionForm.GENERAL:
            L2 = A.T @ Tn @ _stacked_B(et)
        else:
            L2 = (_stacked_B(et).T @ Tn @ A).T
        r.Tbar[k] = A.T @ Tn @ A - L2 @ W_pinv @ H1
        logger.debug(f"mv_backward stage {k}: Pbar={r.P11[k]:.6g}, Tbar22={r.Tbar[k][1, 1]:.6g}")
    return r


# ============== Control ==============

@dataclass
class MVControl:
    """Self-coordination control of the mean-variance problem from (t, z)."""
    t: int
    z: float
    market: MarketData
    riccati: MVRiccati
    law: EquilibriumLaw
    selfcoord: PlayerLaw
    precommit: PlayerLaw

    def positions(self, k: int, Xa: np.ndarray) -> np.ndarray:
        """Real player's risky positions v_k at augmented wealth pairs (rows)."""
        return self.selfcoord.control(k, Xa)


def existence_diagnostics(r: MVRiccati, t: int = 0, tol: Optional[Tolerances] = None) -> Dict[int, List[str]]:
    """Stages whose range conditions fail, with the failing identity names."""
    tol = tol or config.tolerances
    out: Dict[int, List[str]] = {}
    for k in range(t, r.N):
        failures = []
        if not projection_identity(r.W[k], r.H1[k], tol):
            failures.append("W_projection")
        if not projection_identity(r.Wt[k], r.h[k], tol):
            failures.append("Wt_projection")
        if failures:
            out[k] = failures
    return out


def mv_control(r: MVRiccati, md: MarketData, t: int, z: float,
               tol: Optional[Tolerances] = None) -> MVControl:
    """
    Open-loop self-coordination control for the initial pair (t, z).

    Raises:
        ExistenceUnverifiedError: a range condition fails at some stage >= t
    """
    if not 0 <= t < md.N:
        raise ValueError(f"Initial time t={t} outside [0, {md.N - 1}]")
    diagnostics = existence_diagnostics(r, t, tol)
    if diagnostics:
        raise ExistenceUnverifiedError(diagnostics)

    p0 = md.p0
    Kdev, Kbar, c = {}, {}, {}
    mean_path = {t: np.array([z, z], dtype=np.float64)}
    for k in range(t, md.N):
        Kdev[k], c[k] = r.K(k), r.c(k)
        Kbar[k] = np.zeros((2 * p0, 2))
        mean_path[k + 1] = md.s[k] * mean_path[k] + _stacked_B(md.mean_theta(k)) @ c[k]
    law = EquilibriumLaw(t=t, N=md.N, m1=p0, m2=p0, Kdev=Kdev, Kbar=Kbar, c=c, mean_path=mean_path)
    return MVControl(
        t=t, z=float(z), market=md, riccati=r, law=law,
        selfcoord=PlayerLaw.from_law(law, "selfcoord", slice(p0, 2 * p0)),
        precommit=PlayerLaw.from_law(law, "precommit", slice(0, p0)),
    )


# ============== Structure ==============

@dataclass
class ConeFit:
    """Phi ~ a1 Cov(Theta) + a2 E Theta E Theta^T with a1, a2 >= 0."""
    a1: float
    a2: float
    residual: float
    member: bool


@dataclass
class StructuralReport:
    zero_punishment: bool
    violations: List[str] = field(default_factory=list)
    cone: Dict[int, ConeFit] = field(default_factory=dict)
    mean_in_cov_range: Dict[int, bool] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def all_in_cone(self) -> bool:
        """Existence for every initial pair when the mean lies in Ran(Cov) too."""
        return all(f.member for f in self.cone.values()) and all(self.mean_in_cov_range.values())


def cone_fit(phi: np.ndarray, cov: np.ndarray, et: np.ndarray) -> ConeFit:
    """Nonnegative least-squares fit of Phi on the cone spanned by Cov and E Theta E Theta^T."""
    basis = np.column_stack([cov.reshape(-1), np.outer(et, et).reshape(-1)])
    coef, residual = nnls(basis, phi.reshape(-1))
    norm = np.linalg.norm(phi)
    return ConeFit(a1=float(coef[0]), a2=float(coef[1]), residual=float(residual),
                   member=bool(residual <= CONE_FIT_RTOL * max(norm, 1.0)))


def _close(a: float, b: float, rtol: float) -> bool:
    return abs(a - b) <= rtol * (1.0 + abs(b))


def structural_checks(r: MVRiccati, md: MarketData, tol: Optional[Tolerances] = None) -> StructuralReport:
    """
    Zero-punishment structure (vanishing off-diagonal Tbar, positive Pbar and Tbar22,
    Tbar22 = prod s^2, block-diagonal W and its pseudoinverse) and the cone
    membership of every Phi_k.
    """
    tol = tol or config.tolerances
    punish = r.punishment
    zero = all(mu == 0.0 for mu in punish.mus)
    report = StructuralReport(zero_punishment=zero)
    atol = tol.range_rtol
    p0 = r.p0

    for k in range(r.N):
        et, cov = md.mean_theta(k), md.cov_theta(k)
        report.cone[k] = cone_fit(punish.psis[k], cov, et)
        report.mean_in_cov_range[k] = in_range(cov, et, tol)
        if not zero:
            continue
        Tn = r.Tbar[k + 1]
        T = r.Tbar[k]
        if abs(T[1, 0]) > atol * (1.0 + abs(T[1, 1])) or abs(T[0, 1]) > atol * (1.0 + abs(T[1, 1])):
            report.violations.append(f"stage {k}: off-diagonal Tbar entries ({T[0, 1]:.3e}, {T[1, 0]:.3e})")
        if not r.P11[k] > 0:
            report.violations.append(f"stage {k}: Pbar = {r.P11[k]:.6g} not positive")
        if not T[1, 1] > 0:
            report.violations.append(f"stage {k}: Tbar22 = {T[1, 1]:.6g} not positive")
        if not _close(T[1, 1], md.s[k] ** 2 * Tn[1, 1], atol):
            report.violations.append(f"stage {k}: Tbar22 = {T[1, 1]:.12g} != s^2 Tbar22' = "
                                     f"{md.s[k] ** 2 * Tn[1, 1]:.12g}")
        expected = np.block([[r.P11[k + 1] * md.second_theta(k), np.zeros((p0, p0))],
                             [np.zeros((p0, p0)), Tn[1, 1] * cov]])
        if np.max(np.abs(r.W[k] - expected)) > atol * (1.0 + np.max(np.abs(expected))):
            report.violations.append(f"stage {k}: W not block diagonal")
        expected_pinv = np.block([[pinv(r.P11[k + 1] * md.second_theta(k), tol), np.zeros((p0, p0))],
                                  [np.zeros((p0, p0)), pinv(Tn[1, 1] * cov, tol)]])
        if np.max(np.abs(r.W_pinv[k] - expected_pinv)) > atol * (1.0 + np.max(np.abs(expected_pinv))):
            report.violations.append(f"stage {k}: pseudoinverse of W not block diagonal")
        bracket = 1.0 - et @ pinv(md.second_theta(k), tol) @ et
        if not bracket > 0:
            report.violations.append(f"stage {k}: 1 - E Theta^T [E Theta Theta^T]^+ E Theta = {bracket:.3e}")

    if not report.ok:
        logger.warning(f"Structural checks: {len(report.violations)} violation(s)")
    return report


# ============== Genericity ==============

@dataclass
class GenericityReport:
    """det W_k(mu) samples on a grid and the roots found among them."""
    k: int
    grid: np.ndarray
    dets: np.ndarray
    roots: List[float]
    near_zero: List[float]
    degree_bound: int
    degree_estimate: Optional[float]
    scale: float

    @property
    def positive_roots(self) -> List[float]:
        return sorted(r for r in self.roots + self.near_zero if r > 0)

    @property
    def degree_ok(self) -> bool:
        return self.degree_estimate is None or self.degree_estimate <= self.degree_bound + 0.5

    @property
    def nonsingular(self) -> np.ndarray:
        """Mask of grid points with nonsingular W_k, where the control is unique."""
        return np.abs(self.dets) > ROOT_ATOL * self.scale


def genericity_scan(md: MarketData, phi, k: int, grid, downstream_mus: Optional[Sequence[float]] = None,
                    tol: Optional[Tolerances] = None) -> GenericityReport:
    """
    Sample det W_k(mu) for mu on a (possibly signed) grid with mu_{k+1..N-1} fixed.

    Sign changes are refined with brentq; samples with |det| below ROOT_ATOL times
    the largest sampled magnitude are reported as near-zeros.
    """
    tol = tol or config.tolerances
    if not 0 <= k < md.N:
        raise ValueError(f"Stage {k} outside [0, {md.N - 1}]")
    phi = np.atleast_2d(np.asarray(phi, dtype=np.float64))
    grid = np.unique(np.asarray(grid, dtype=np.float64).reshape(-1))
    downstream = list(downstream_mus) if downstream_mus is not None else [0.0] * (md.N - k - 1)
    if len(downstream) != md.N - k - 1:
        raise ValueError(f"Need {md.N - k - 1} downstream intensities, got {len(downstream)}")

    mus = [0.0] * (k + 1) + [float(mu) for mu in downstream]
    base = mv_backward(md, mv_punishment(md, mus, [phi] * md.N), tol)
    fixed = base.W[k]  # mu_k = 0
    direction = np.block([[phi, -phi], [-phi, phi]])
    det = lambda mu: float(np.linalg.det(fixed + mu * direction))

    dets = np.array([det(mu) for mu in grid])
    scale = max(float(np.max(np.abs(dets), initial=0.0)), 1e-300)
    near_zero = [float(mu) for mu, d in zip(grid, dets) if abs(d) <= ROOT_ATOL * scale]
    roots = []
    for a, b, da, db in zip(grid[:-1], grid[1:], dets[:-1], dets[1:]):
        if da * db < 0:
            roots.append(float(brentq(det, a, b, xtol=1e-14)))

    degree_estimate = None
    positive = [(mu, abs(d)) for mu, d in zip(grid, dets) if mu > 0 and d != 0]
    if len(positive) >= 2:
        (mu1, d1), (mu2, d2) = positive[-2], positive[-1]
        degree_estimate = float((np.log(d2) - np.log(d1)) / (np.log(mu2) - np.log(mu1)))

    report = GenericityReport(k=k, grid=grid, dets=dets, roots=roots, near_zero=near_zero,
                              degree_bound=2 * md.p0, degree_estimate=degree_estimate,
                              scale=scale)
    logger.info(f"Genericity scan at stage {k}: {len(grid)} points, roots {roots}, near-zeros {near_zero}")
    return report
