# fictitious-lq/src/config.py
"""
Configuration settings for the fictitious-game LQ solver.
Numeric tolerances and run settings come from the environment (.env supported).
"""
import os
from dataclasses import dataclass, field, replace
from typing import Optional

from dotenv import load_dotenv

# Load .env file for local development
load_dotenv()


@dataclass(frozen=True)
class Tolerances:
    """Numeric thresholds shared by the pseudoinverse, PSD and range tests."""
    rank_rtol: float = 1e-10  # relative singular-value cutoff
    psd_atol: float = 1e-9  # eigenvalue floor
    range_rtol: float = 1e-8  # residual bound for range tests

    def __post_init__(self):
        for name in ("rank_rtol", "psd_atol", "range_rtol"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"Tolerance {name} must be strictly positive, got {value}")

    def with_overrides(self, **overrides: Optional[float]) -> "Tolerances":
        """Copy with the non-None overrides applied."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes) if changes else self


@dataclass
class RunConfig:
    """Defaults for sweeps, Monte-Carlo runs and output."""
    threads: int
    output_dir: str = "out"
    seed: int = 20240101
    grid_max_mu: Optional[float] = None  # caps the multiscale grid for reduced runs
    mc_chunk: int = 10_000


@dataclass
class Config:
    """Main application configuration."""
    tolerances: Tolerances = field(default_factory=Tolerances)
    run: RunConfig = field(default_factory=lambda: RunConfig(threads=os.cpu_count() or 1))

    debug: bool = False


def _float_env(name: str, default: float) -> float:
    raw = os.getenv(name)
    return float(raw) if raw else default


def load_config() -> Config:
    """Load configuration from environment variables."""
    tolerances = Tolerances(
        rank_rtol=_float_env("FLQ_RANK_RTOL", 1e-10),
        psd_atol=_float_env("FLQ_PSD_ATOL", 1e-9),
        range_rtol=_float_env("FLQ_RANGE_RTOL", 1e-8),
    )

    grid_max_mu = os.getenv("FLQ_GRID_MAX_MU")
    run_config = RunConfig(
        threads=int(os.getenv("FLQ_THREADS", str(os.cpu_count() or 1))),
        output_dir=os.getenv("FLQ_OUTPUT_DIR", "out"),
        seed=int(os.getenv("FLQ_SEED", "20240101")),
        grid_max_mu=float(grid_max_mu) if grid_max_mu else None,
        mc_chunk=int(os.getenv("FLQ_MC_CHUNK", "10000")),
    )

    return Config(
        tolerances=tolerances,
        run=run_config,
        debug=os.getenv("DEBUG", "false").lower() == "true",
    )


config = load_config()

# Output formats
CSV_FLOAT_FORMAT: str = "%.17g"  # round-trip exact for float64

# Scenario trees and oracle limits
MAX_TREE_DEPTH: int = 12
MAX_TREE_BRANCHING: int = 16  # 2**p for product two-point branches
TREE_MOMENT_ATOL: float = 1e-12
ORACLE_MAX_UNKNOWNS: int = 400
ORACLE_RESIDUAL_ATOL: float = 1e-8

# Monte-Carlo
MC_MIN_PATHS: int = 2

# Multiscale grid: {l*1e-5} U {l*1e-3} U {l}, l = 0..1e5
MULTISCALE_GRID_STEPS: tuple = (1e-5, 1e-3, 1.0)
MULTISCALE_GRID_COUNT: int = 100_000
