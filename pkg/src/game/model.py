# fictitious-lq/src/game/model.py
"""
Problem data model for the two-player game (GLQ) and the single-player LQ problem.

Weights follow the script-letter convention: a script weight is the plain weight
plus its barred (mean-field) counterpart, e.g. script("Q") = Q + Qbar.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.utils.numkit import is_psd, symmetrize

logger = logging.getLogger(__name__)

SYMMETRY_ATOL = 1e-12


class ProblemIndexError(IndexError):
    """Custom exception for out-of-range (t, k) weight queries."""
    pass


class SamplerKind(str, Enum):
    """Noise distribution used by Monte-Carlo runs (exact evaluation never samples)."""
    TWO_POINT = "two_point"
    GAUSSIAN = "gaussian"


class StorageKind(str, Enum):
    """How running weights are indexed."""
    DOUBLE_INDEXED = "double_indexed"  # keyed by (t, k), k >= t
    STATIONARY = "stationary"  # keyed by k, t ignored


# Running weights per (t, k). Control blocks are stored separately:
# S1/S2 are the rows acting on u/v, R11..R22 the control-control blocks.
RUNNING_WEIGHTS = (
    "Q", "Qbar",
    "S1", "S2", "S1bar", "S2bar",
    "R11", "R12", "R21", "R22",
    "R11bar", "R12bar", "R21bar", "R22bar",
    "q", "rho1", "rho2",
)
TERMINAL_WEIGHTS = ("G", "Gbar", "g")
VECTOR_WEIGHTS = ("q", "rho1", "rho2", "g")
SYMMETRIC_WEIGHTS = ("Q", "Qbar", "R11", "R22", "R11bar", "R22bar", "G", "Gbar")
SCRIPT_BASES = ("Q", "S1", "S2", "R11", "R12", "R21", "R22", "G")

WeightKey = Union[int, Tuple[int, int]]


@dataclass(frozen=True)
class NoiseSpec:
    """Martingale-difference noise: per-stage second moments Delta_k (p x p)."""
    p: int
    deltas: Tuple[np.ndarray, ...]
    sampler_kind: SamplerKind = SamplerKind.TWO_POINT

    @property
    def N(self) -> int:
        return len(self.deltas)

    def delta(self, k: int) -> np.ndarray:
        return self.deltas[k]

    @classmethod
    def constant(cls, delta, N: int, sampler_kind: SamplerKind = SamplerKind.TWO_POINT) -> "NoiseSpec":
        d = np.atleast_2d(np.asarray(delta, dtype=np.float64))
        return cls(p=d.shape[0], deltas=tuple(d.copy() for _ in range(N)), sampler_kind=sampler_kind)


@dataclass(frozen=True)
class GLQDynamics:
    """
    X' = A X + B1 u + B2 v + sum_i (C^i X + D1^i u + D2^i v) w^i.

    C, D1, D2 are indexed [stage][channel].
    """
    N: int
    n: int
    m1: int
    m2: int
    p: int
    A: Tuple[np.ndarray, ...]
    B1: Tuple[np.ndarray, ...]
    B2: Tuple[np.ndarray, ...]
    C: Tuple[Tuple[np.ndarray, ...], ...]
    D1: Tuple[Tuple[np.ndarray, ...], ...]
    D2: Tuple[Tuple[np.ndarray, ...], ...]

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    def B(self, k: int) -> np.ndarray:
        """Stacked [B1 B2]."""
        return np.hstack([self.B1[k], self.B2[k]])

    def D(self, k: int, i: int) -> np.ndarray:
        """Stacked [D1^i D2^i]."""
        return np.hstack([self.D1[k][i], self.D2[k][i]])


@dataclass(frozen=True)
class PlayerCost:
    """
    Quadratic cost weights of one player.

    Missing weights read as zeros. DoubleIndexed running weights are keyed (t, k)
    with k >= t; Stationary running weights are keyed k and terminal weights
    hold a single entry under key 0.
    """
    player: int
    N: int
    n: int
    m1: int
    m2: int
    storage: StorageKind
    running: Mapping[str, Mapping[WeightKey, np.ndarray]] = field(default_factory=dict)
    terminal: Mapping[str, Mapping[int, np.ndarray]] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.m1 + self.m2

    def expected_shape(self, name: str) -> Tuple[int, ...]:
        base = name[:-3] if name.endswith("bar") else name
        dims = {"1": self.m1, "2": self.m2}
        if base in ("Q", "G"):
            return (self.n, self.n)
        if base in ("q", "g"):
            return (self.n,)
        if base in ("S1", "S2"):
            return (dims[base[1]], self.n)
        if base in ("rho1", "rho2"):
            return (dims[base[3]],)
        if base.startswith("R") and len(base) == 3:
            return (dims[base[1]], dims[base[2]])
        raise KeyError(f"Unknown weight name: {name}")

    def _check_index(self, t: int, k: int) -> None:
        if not (0 <= t <= k < self.N):
            raise ProblemIndexError(f"player {self.player}: (t={t}, k={k}) outside 0 <= t <= k < {self.N}")

    def weight(self, name: str, t: int, k: int) -> np.ndarray:
        """Running weight at (t, k)."""
        self._check_index(t, k)
        key = k if self.storage is StorageKind.STATIONARY else (t, k)
        value = self.running.get(name, {}).get(key)
        if value is None:
            return np.zeros(self.expected_shape(name))
        return value

    def terminal_weight(self, name: str, t: int) -> np.ndarray:
        """Terminal weight seen from t; Stationary storage accepts t = N and ignores t."""
        if self.storage is StorageKind.STATIONARY:
            if not 0 <= t <= self.N:
                raise ProblemIndexError(f"player {self.player}: terminal index t={t} outside [0, {self.N}]")
            key = 0
        else:
            if not 0 <= t < self.N:
                raise ProblemIndexError(f"player {self.player}: terminal index t={t} outside [0, {self.N})")
            key = t
        value = self.terminal.get(name, {}).get(key)
        if value is None:
            return np.zeros(self.expected_shape(name))
        return value

    def script(self, name: str, t: int, k: Optional[int] = None) -> np.ndarray:
        """Plain + barred weight; terminal names ignore k."""
        if name in ("G",):
            return self.terminal_weight(name, t) + self.terminal_weight(name + "bar", t)
        return self.weight(name, t, k) + self.weight(name + "bar", t, k)

    # Stacked views over both players' control blocks

    def S(self, t: int, k: int, bar: bool = False) -> np.ndarray:
        suffix = "bar" if bar else ""
        return np.vstack([self.weight("S1" + suffix, t, k), self.weight("S2" + suffix, t, k)])

    def script_S(self, t: int, k: int) -> np.ndarray:
        return np.vstack([self.script("S1", t, k), self.script("S2", t, k)])

    def R(self, t: int, k: int, bar: bool = False) -> np.ndarray:
        suffix = "bar" if bar else ""
        w = lambda b: self.weight(b + suffix, t, k)
        return np.block([[w("R11"), w("R12")], [w("R21"), w("R22")]])

    def rho(self, t: int, k: int) -> np.ndarray:
        return np.concatenate([self.weight("rho1", t, k), self.weight("rho2", t, k)])

    def keys(self) -> Iterator[Tuple[int, int]]:
        for t in range(self.N):
            for k in range(t, self.N):
                yield t, k


@dataclass(frozen=True)
class GLQProblem:
    """Problem (GLQ): dynamics, noise and both players' costs."""
    dynamics: GLQDynamics
    noise: NoiseSpec
    cost1: PlayerCost
    cost2: PlayerCost

    @property
    def N(self) -> int:
        return self.dynamics.N

    @property
    def n(self) -> int:
        return self.dynamics.n

    @property
    def m1(self) -> int:
        return self.dynamics.m1

    @property
    def m2(self) -> int:
        return self.dynamics.m2

    @property
    def p(self) -> int:
        return self.dynamics.p


@dataclass(frozen=True)
class LQProblem:
    """
    Problem (LQ): X' = A X + B v + sum_i (C^i X + D^i v) w^i with cost weights
    Q, Qbar, R (stored as R11), Rbar (R11bar), optional linear q, and terminal G, Gbar, g.
    """
    N: int
    n: int
    m: int
    p: int
    A: Tuple[np.ndarray, ...]
    B: Tuple[np.ndarray, ...]
    C: Tuple[Tuple[np.ndarray, ...], ...]
    D: Tuple[Tuple[np.ndarray, ...], ...]
    weights: PlayerCost
    noise: NoiseSpec

    def weight(self, name: str, t: int, k: int) -> np.ndarray:
        return self.weights.weight(name, t, k)

    def terminal_weight(self, name: str, t: int) -> np.ndarray:
        return self.weights.terminal_weight(name, t)


@dataclass
class ValidationReport:
    """Dimension, symmetry and PSD violations found in a problem."""
    violations: List[str] = field(default_factory=list)

    @property
    def is_empty(self) -> bool:
        return not self.violations

    def add(self, message: str) -> None:
        self.violations.append(message)

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise ValueError("Invalid problem: " + "; ".join(self.violations))


# ============== Builders ==============

def _stage_list(value, N: int, name: str) -> List[np.ndarray]:
    """A single array broadcasts to all stages; a length-N sequence is per stage."""
    if isinstance(value, (list, tuple)) and len(value) == N and all(
        isinstance(v, np.ndarray) for v in value
    ):
        return [np.asarray(v, dtype=np.float64) for v in value]
    arr = np.asarray(value, dtype=np.float64)
    return [arr.copy() for _ in range(N)]


def stationary_cost(player: int, N: int, n: int, m1: int, m2: int, terminal: Optional[Dict] = None,
                    **running) -> PlayerCost:
    """
    Build a Stationary PlayerCost.

    Args:
        running: name -> array (broadcast) or list of N arrays (per stage)
        terminal: name -> array
    """
    run_table: Dict[str, Dict[WeightKey, np.ndarray]] = {}
    for name, value in running.items():
        if value is None:
            continue
        if name not in RUNNING_WEIGHTS:
            raise KeyError(f"Unknown running weight: {name}")
        run_table[name] = dict(enumerate(_stage_list(value, N, name)))
    term_table: Dict[str, Dict[int, np.ndarray]] = {}
    for name, value in (terminal or {}).items():
        if value is None:
            continue
        if name not in TERMINAL_WEIGHTS:
            raise KeyError(f"Unknown terminal weight: {name}")
        term_table[name] = {0: np.asarray(value, dtype=np.float64)}
    return PlayerCost(player=player, N=N, n=n, m1=m1, m2=m2, storage=StorageKind.STATIONARY,
                      running=run_table, terminal=term_table)


def script_weight(cost: PlayerCost, which: str, t: int, k: Optional[int] = None) -> np.ndarray:
    """Plain + barred weight (Q + Qbar, S + Sbar, R + Rbar, G + Gbar)."""
    if which in ("S", "R"):
        if k is None:
            raise ProblemIndexError(f"script weight {which} needs a stage index")
        plain = cost.S(t, k) if which == "S" else cost.R(t, k)
        barred = cost.S(t, k, bar=True) if which == "S" else cost.R(t, k, bar=True)
        return plain + barred
    if which not in SCRIPT_BASES:
        raise KeyError(f"No script form for weight {which}")
    if which != "G" and k is None:
        raise ProblemIndexError(f"script weight {which} needs a stage index")
    return cost.script(which, t, k)


def stationary_lift(cost: PlayerCost) -> PlayerCost:
    """DoubleIndexed view of a Stationary cost: weight(t, k) = weight(k) for all t <= k."""
    if cost.storage is not StorageKind.STATIONARY:
        raise ValueError("stationary_lift needs Stationary storage")
    running = {
        name: {(t, k): table[k] for t in range(cost.N) for k in range(t, cost.N) if k in table}
        for name, table in cost.running.items()
    }
    terminal = {
        name: {t: table[0] for t in range(cost.N)}
        for name, table in cost.terminal.items()
    }
    return PlayerCost(player=cost.player, N=cost.N, n=cost.n, m1=cost.m1, m2=cost.m2,
                      storage=StorageKind.DOUBLE_INDEXED, running=running, terminal=terminal)


def lift_problem(problem: GLQProblem) -> GLQProblem:
    """Both costs lifted to DoubleIndexed storage."""
    lift = lambda c: stationary_lift(c) if c.storage is StorageKind.STATIONARY else c
    return GLQProblem(problem.dynamics, problem.noise, lift(problem.cost1), lift(problem.cost2))


# ============== Validation ==============

def _check_matrix(report: ValidationReport, where: str, value: np.ndarray, shape: Tuple[int, ...]) -> bool:
    if value.shape != shape:
        report.add(f"{where}: expected shape {shape}, got {value.shape}")
        return False
    if not np.all(np.isfinite(value)):
        report.add(f"{where}: non-finite entries")
        return False
    return True


def _check_symmetric(report: ValidationReport, where: str, value: np.ndarray) -> None:
    if value.size and np.max(np.abs(value - value.T)) > SYMMETRY_ATOL * (1.0 + np.max(np.abs(value))):
        report.add(f"{where}: not symmetric")


def _validate_cost(report: ValidationReport, cost: PlayerCost, N: int, n: int, m1: int, m2: int) -> None:
    label = f"player={cost.player}"
    if (cost.N, cost.n, cost.m1, cost.m2) != (N, n, m1, m2):
        report.add(f"{label}: cost dimensions (N={cost.N}, n={cost.n}, m1={cost.m1}, m2={cost.m2}) "
                   f"do not match the dynamics (N={N}, n={n}, m1={m1}, m2={m2})")
        return
    for name in cost.running:
        if name not in RUNNING_WEIGHTS:
            report.add(f"{label}: unknown running weight {name}")
    for name in cost.terminal:
        if name not in TERMINAL_WEIGHTS:
            report.add(f"{label}: unknown terminal weight {name}")

    stationary = cost.storage is StorageKind.STATIONARY
    index_pairs = [(k, k) for k in range(N)] if stationary else list(cost.keys())
    for t, k in index_pairs:
        where_tk = f"{label}, k={k}" if stationary else f"{label}, t={t}, k={k}"
        ok = {}
        for name in RUNNING_WEIGHTS:
            if name not in cost.running:
                continue
            ok[name] = _check_matrix(report, f"({where_tk}, block={name})", cost.weight(name, t, k),
                                     cost.expected_shape(name))
        for name in SYMMETRIC_WEIGHTS:
            if name in cost.running and ok.get(name):
                _check_symmetric(report, f"({where_tk}, block={name})", cost.weight(name, t, k))
        for suffix in ("", "bar"):
            r12, r21 = "R12" + suffix, "R21" + suffix
            if ok.get(r12, r12 not in cost.running) and ok.get(r21, r21 not in cost.running):
                gap = cost.weight(r21, t, k) - cost.weight(r12, t, k).T
                if gap.size and np.max(np.abs(gap)) > SYMMETRY_ATOL * (1.0 + np.max(np.abs(cost.weight(r12, t, k)), initial=0.0)):
                    report.add(f"({where_tk}, block={r21}): not the transpose of {r12}")

    terminal_ts = [0] if stationary else range(N)
    for t in terminal_ts:
        for name in TERMINAL_WEIGHTS:
            if name not in cost.terminal:
                continue
            where = f"({label}, t={t}, block={name})"
            value = cost.terminal_weight(name, t)
            if _check_matrix(report, where, value, cost.expected_shape(name)) and name in SYMMETRIC_WEIGHTS:
                _check_symmetric(report, where, value)


def _validate_noise(report: ValidationReport, noise: NoiseSpec, N: int, p: int) -> None:
    if noise.N != N:
        report.add(f"noise: {noise.N} stage moments for horizon N={N}")
    if noise.p != p:
        report.add(f"noise: dimension p={noise.p}, dynamics use p={p}")
    for k, delta in enumerate(noise.deltas):
        where = f"(noise, k={k})"
        if _check_matrix(report, where, delta, (p, p)):
            _check_symmetric(report, where, delta)
            if not is_psd(symmetrize(delta)):
                report.add(f"{where}: Delta not PSD")


def _validate_stage_arrays(report: ValidationReport, name: str, arrays: Sequence, N: int,
                           shape: Tuple[int, int]) -> None:
    if len(arrays) != N:
        report.add(f"dynamics {name}: {len(arrays)} stages for horizon N={N}")
        return
    for k, value in enumerate(arrays):
        _check_matrix(report, f"(dynamics, k={k}, block={name})", value, shape)


def _validate_channel_arrays(report: ValidationReport, name: str, arrays: Sequence, N: int, p: int,
                             shape: Tuple[int, int]) -> None:
    if len(arrays) != N:
        report.add(f"dynamics {name}: {len(arrays)} stages for horizon N={N}")
        return
    for k, channels in enumerate(arrays):
        if len(channels) != p:
            report.add(f"(dynamics, k={k}, block={name}): {len(channels)} channels for p={p}")
            continue
        for i, value in enumerate(channels):
            _check_matrix(report, f"(dynamics, k={k}, block={name}{i + 1})", value, shape)


def validate(problem: Union[GLQProblem, LQProblem]) -> ValidationReport:
    """List every dimension or symmetry violation; empty iff the problem is well-formed."""
    report = ValidationReport()
    if isinstance(problem, GLQProblem):
        dyn = problem.dynamics
        N, n, m1, m2, p = dyn.N, dyn.n, dyn.m1, dyn.m2, dyn.p
        _validate_stage_arrays(report, "A", dyn.A, N, (n, n))
        _validate_stage_arrays(report, "B1", dyn.B1, N, (n, m1))
        _validate_stage_arrays(report, "B2", dyn.B2, N, (n, m2))
        _validate_channel_arrays(report, "C", dyn.C, N, p, (n, n))
        _validate_channel_arrays(report, "D1", dyn.D1, N, p, (n, m1))
        _validate_channel_arrays(report, "D2", dyn.D2, N, p, (n, m2))
        _validate_noise(report, problem.noise, N, p)
        for cost, player in ((problem.cost1, 1), (problem.cost2, 2)):
            if cost.player != player:
                report.add(f"cost{player}: labelled as player {cost.player}")
            _validate_cost(report, cost, N, n, m1, m2)
    elif isinstance(problem, LQProblem):
        N, n, m, p = problem.N, problem.n, problem.m, problem.p
        _validate_stage_arrays(report, "A", problem.A, N, (n, n))
        _validate_stage_arrays(report, "B", problem.B, N, (n, m))
        _validate_channel_arrays(report, "C", problem.C, N, p, (n, n))
        _validate_channel_arrays(report, "D", problem.D, N, p, (n, m))
        _validate_noise(report, problem.noise, N, p)
        _validate_cost(report, problem.weights, N, n, m, 0)
    else:
        report.add(f"unsupported problem type {type(problem).__name__}")

    if not report.is_empty:
        logger.debug(f"Validation found {len(report.violations)} violation(s)")
    return report
