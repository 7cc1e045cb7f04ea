# fictitious-lq/src/evaluate/sweep.py
"""Punishment-intensity sweeps: V_k(mu) over a grid, argmins and the two baselines."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config import CSV_FLOAT_FORMAT, Tolerances, config
from src.evaluate.moments import expected_tail_costs, precommit_baseline
from src.game.model import LQProblem
from src.game.riccati import RecursionForm
from src.selfcoord.fictitious import Punishment, self_coordination
from src.selfcoord.meanvar import MarketData, mv_backward, mv_control, mv_lq_problem, mv_punishment
from src.utils.grids import normalize_grid

logger = logging.getLogger(__name__)

SolveFn = Callable[[float], object]


@dataclass
class SweepRow:
    """V_k at one punishment intensity, or the failure that prevented it."""
    mu: float
    values: Dict[int, float] = field(default_factory=dict)
    error: Optional[str] = None

    @property
    def is_error(self) -> bool:
        return self.error is not None

    @classmethod
    def from_error(cls, mu: float, error: str) -> "SweepRow":
        return cls(mu=mu, error=error)


@dataclass
class SweepResult:
    grid: np.ndarray
    ks: List[int]
    rows: List[SweepRow]
    precommit: Dict[int, float] = field(default_factory=dict)  # V^pr_k
    timeconsistent: Dict[int, float] = field(default_factory=dict)  # V^tc_k = V_k(0)
    baseline_error: Optional[str] = None

    @property
    def failures(self) -> List[SweepRow]:
        return [row for row in self.rows if row.is_error]

    def values(self, k: int) -> np.ndarray:
        """V_k over the grid, NaN where the solve failed."""
        return np.array([row.values.get(k, np.nan) if not row.is_error else np.nan for row in self.rows])

    def argmin(self, k: int) -> Tuple[float, float]:
        """(mu*_k, min V_k); ties resolve to the smallest mu."""
        values = self.values(k)
        if np.all(np.isnan(values)):
            return float("nan"), float("nan")
        i = int(np.nanargmin(values))
        return float(self.grid[i]), float(values[i])

    def long_frame(self) -> pd.DataFrame:
        records = []
        for row in self.rows:
            for k in self.ks:
                records.append({"mu": row.mu, "k": k, "policy": "selfcoord",
                                "value": row.values.get(k, np.nan)})
        for k in self.ks:
            records.append({"mu": 0.0, "k": k, "policy": "precommit", "value": self.precommit.get(k, np.nan)})
            records.append({"mu": 0.0, "k": k, "policy": "timeconsistent",
                            "value": self.timeconsistent.get(k, np.nan)})
        return pd.DataFrame.from_records(records, columns=["mu", "k", "policy", "value"])

    def summary_frame(self) -> pd.DataFrame:
        records = []
        for k in self.ks:
            mu_star, v_min = self.argmin(k)
            records.append({"k": k, "argmin_mu": mu_star, "min_value": v_min,
                            "precommit": self.precommit.get(k, np.nan),
                            "timeconsistent": self.timeconsistent.get(k, np.nan)})
        return pd.DataFrame.from_records(
            records, columns=["k", "argmin_mu", "min_value", "precommit", "timeconsistent"])

    def write_csv(self, out_dir: str, prefix: str = "sweep") -> List[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / f"{prefix}_values.csv", out / f"{prefix}_summary.csv"]
        self.long_frame().to_csv(paths[0], index=False, float_format=CSV_FLOAT_FORMAT)
        self.summary_frame().to_csv(paths[1], index=False, float_format=CSV_FLOAT_FORMAT)
        logger.info(f"Wrote {paths[0]} and {paths[1]}")
        return paths


def lq_solver(lq: LQProblem, psis: Sequence[np.ndarray], t: int, x, literal_upsilon: bool = False,
              tol: Optional[Tolerances] = None, form: RecursionForm = RecursionForm.GENERAL) -> SolveFn:
    """mu -> self-coordination solution with mu_k = mu at every stage."""
    def solve(mu: float):
        punish = Punishment(mus=(float(mu),) * lq.N, psis=tuple(psis))
        return self_coordination(lq, punish, t, x, literal_upsilon=literal_upsilon, check=False, tol=tol,
                                  form=form)
    return solve


def mv_solver(md: MarketData, phis: Optional[Sequence[np.ndarray]], t: int, z: float,
              tol: Optional[Tolerances] = None, form: RecursionForm = RecursionForm.GENERAL) -> SolveFn:
    """mu -> mean-variance self-coordination control with mu_k = mu at every stage."""
    def solve(mu: float):
        punish = mv_punishment(md, [mu] * md.N, phis)
        return mv_control(mv_backward(md, punish, tol, form), md, t, z, tol)
    return solve


def sweep(lq: LQProblem, solve_fn: SolveFn, grid, ks: Sequence[int], threads: Optional[int] = None) -> SweepResult:
    """
    Evaluate V_k(mu) on the grid in parallel; rows merge back in grid order.

    Per-mu failures are kept in-row and excluded from the argmins.
    """
    grid = normalize_grid(grid)
    if grid.size and grid[0] < 0:
        raise ValueError(f"Sweep grid must be nonnegative, got {grid[0]}")
    ks = sorted(set(int(k) for k in ks))
    threads = threads or config.run.threads

    def evaluate(mu: float) -> SweepRow:
        try:
            return SweepRow(mu=float(mu), values=expected_tail_costs(lq, solve_fn(float(mu)), ks))
        except Exception as e:
            logger.warning(f"Sweep failed at mu={mu}: {e}")
            return SweepRow.from_error(float(mu), str(e))

    with ThreadPoolExecutor(max_workers=threads) as pool:
        rows = list(pool.map(evaluate, grid))

    result = SweepResult(grid=grid, ks=ks, rows=rows)
    if grid.size and grid[0] == 0.0 and not rows[0].is_error:
        result.timeconsistent = dict(rows[0].values)
    try:
        zero = solve_fn(0.0)
        if not result.timeconsistent:
            result.timeconsistent = expected_tail_costs(lq, zero, ks)
        result.precommit = {k: precommit_baseline(lq, zero, k) for k in ks}
    except Exception as e:
        logger.error(f"Sweep baselines failed at mu=0: {e}")
        result.baseline_error = str(e)
    for baseline in (result.timeconsistent, result.precommit):
        for k in ks:
            baseline.setdefault(k, float("nan"))

    if result.failures:
        logger.warning(f"Sweep: {len(result.failures)} of {grid.size} grid points failed")
    logger.info(f"Sweep over {grid.size} points at stages {ks} complete")
    return result


def mv_sweep(md: MarketData, grid, ks: Sequence[int], z: float, phis: Optional[Sequence[np.ndarray]] = None,
             t: int = 0, threads: Optional[int] = None, tol: Optional[Tolerances] = None,
             form: RecursionForm = RecursionForm.GENERAL) -> SweepResult:
    """Sweep of the mean-variance problem from the initial pair (t, z)."""
    return sweep(mv_lq_problem(md), mv_solver(md, phis, t, z, tol, form), grid, ks, threads)
