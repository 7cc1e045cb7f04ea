# fictitious-lq/tests/conftest.py
"""Shared fixtures: the bundled documents as problems and a random scalar game factory."""
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent.parent))

from src.cli.fixtures import example41_document, example42_document, scalar_n1_document
from src.cli.loader import LoadedConfig, load_document
from src.game.model import (
    GLQDynamics,
    GLQProblem,
    LQProblem,
    NoiseSpec,
    PlayerCost,
    StorageKind,
    stationary_cost,
)
from src.selfcoord.meanvar import MarketData

FIXTURES_DIR = Path(__file__).parent.parent / "fixtures"

# Reference values: storage problem at mu = 0 and swept minima of both bundled problems
STORAGE_ZERO_MU = {0: 30.0160, 1: 29.0124}
STORAGE_MINIMA = {2: (26.8679, 0.38460), 3: (12.2209, 1.7760)}
MARKET_MINIMA = {0: (-14.8722, 0.06424), 1: (-22.1273, 0.16591), 2: (-27.0525, 0.19802), 3: (-34.3649, 0.22226)}
REFERENCE_ATOL = 5e-3


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full sweeps reproducing the reported minima")


@pytest.fixture
def example41() -> LoadedConfig:
    return load_document(example41_document())


@pytest.fixture
def example41_lq(example41) -> LQProblem:
    return example41.lq


@pytest.fixture
def example42_market() -> MarketData:
    return load_document(example42_document()).market


@pytest.fixture
def scalar_game() -> GLQProblem:
    return load_document(scalar_n1_document()).glq


@pytest.fixture
def toy_market() -> MarketData:
    """One risky asset, one period: E Theta = 0.1, Cov = 0.04."""
    return MarketData.constant(N=1, s=1.04, mean_e=[1.14], cov_e=[[0.04]], lam=1.0)


def scalar_lq(N: int = 1) -> LQProblem:
    """Noiseless x' = x + v with cost sum v^2 + x_N^2."""
    one = np.array([[1.0]])
    weights = stationary_cost(0, N, 1, 1, 0, terminal={"G": one}, R11=one)
    return LQProblem(N=N, n=1, m=1, p=0, A=(one,) * N, B=(one,) * N,
                     C=((),) * N, D=((),) * N, weights=weights,
                     noise=NoiseSpec(p=0, deltas=(np.zeros((0, 0)),) * N))


def random_glq(seed: int, N: int = 2, p: int = 1, barred: bool = True) -> GLQProblem:
    """Scalar two-player game with convex, mildly coupled costs."""
    rng = np.random.default_rng(seed)
    mat = lambda lo, hi: np.array([[rng.uniform(lo, hi)]])
    vec = lambda: np.array([rng.uniform(-0.5, 0.5)])

    dyn = GLQDynamics(
        N=N, n=1, m1=1, m2=1, p=p,
        A=tuple(mat(0.5, 1.5) for _ in range(N)),
        B1=tuple(mat(0.5, 1.5) for _ in range(N)),
        B2=tuple(mat(-1.0, 1.0) for _ in range(N)),
        C=tuple(tuple(mat(-0.3, 0.3) for _ in range(p)) for _ in range(N)),
        D1=tuple(tuple(mat(-0.3, 0.3) for _ in range(p)) for _ in range(N)),
        D2=tuple(tuple(mat(-0.3, 0.3) for _ in range(p)) for _ in range(N)),
    )

    def cost(player: int):
        cross = mat(-0.2, 0.2)
        weights = dict(Q=mat(0.5, 1.5), R11=mat(1.0, 2.0), R22=mat(1.0, 2.0), R12=cross, R21=cross.T,
                       S1=mat(-0.2, 0.2), S2=mat(-0.2, 0.2), q=vec(), rho1=vec(), rho2=vec())
        terminal = {"G": mat(0.5, 1.5), "g": vec()}
        if barred:
            weights.update(Qbar=mat(0.0, 0.5), R11bar=mat(0.0, 0.3), R22bar=mat(0.0, 0.3))
            terminal["Gbar"] = mat(0.0, 0.5)
        return stationary_cost(player, N, 1, 1, 1, terminal=terminal, **weights)

    noise = NoiseSpec.constant(np.eye(p), N)
    return GLQProblem(dynamics=dyn, noise=noise, cost1=cost(1), cost2=cost(2))


def random_double_indexed_glq(seed: int, N: int = 4, n: int = 2, p: int = 1) -> GLQProblem:
    """
    Game on R^n with barred weights, cross terms and noise; player 2's weights depend on
    the row k through a discount 0.8^(l-k) plus an own-stage surcharge on R22.
    """
    rng = np.random.default_rng(seed)
    small = lambda *shape: rng.uniform(-0.3, 0.3, shape)

    def spd(dim: int, shift: float) -> np.ndarray:
        M = small(dim, dim)
        return M @ M.T + shift * np.eye(dim)

    dyn = GLQDynamics(
        N=N, n=n, m1=1, m2=1, p=p,
        A=tuple(np.eye(n) + small(n, n) for _ in range(N)),
        B1=tuple(rng.uniform(0.5, 1.5, (n, 1)) for _ in range(N)),
        B2=tuple(rng.uniform(-1.0, 1.0, (n, 1)) for _ in range(N)),
        C=tuple(tuple(small(n, n) for _ in range(p)) for _ in range(N)),
        D1=tuple(tuple(small(n, 1) for _ in range(p)) for _ in range(N)),
        D2=tuple(tuple(small(n, 1) for _ in range(p)) for _ in range(N)),
    )

    def weights():
        cross = small(1, 1)
        running = dict(Q=spd(n, 0.5), Qbar=spd(n, 0.1), R11=spd(1, 1.0), R22=spd(1, 1.0),
                       R12=cross, R21=cross.T, R11bar=spd(1, 0.1), R22bar=spd(1, 0.1),
                       S1=small(1, n), S2=small(1, n), S1bar=small(1, n), S2bar=small(1, n),
                       q=small(n), rho1=small(1), rho2=small(1))
        terminal = dict(G=spd(n, 0.5), Gbar=spd(n, 0.1), g=small(n))
        return running, terminal

    run1, term1 = weights()
    cost1 = stationary_cost(1, N, n, 1, 1, terminal=term1, **run1)

    base, base_terminal = weights()
    running = {name: {} for name in base}
    for k in range(N):
        for l in range(k, N):
            for name, value in base.items():
                running[name][(k, l)] = 0.8 ** (l - k) * value
            if l == k:
                running["R22"][(k, l)] = running["R22"][(k, l)] + 0.5
    terminal = {name: {k: 0.8 ** (N - k) * value for k in range(N)} for name, value in base_terminal.items()}
    cost2 = PlayerCost(player=2, N=N, n=n, m1=1, m2=1, storage=StorageKind.DOUBLE_INDEXED,
                       running=running, terminal=terminal)

    noise = NoiseSpec.constant(np.eye(p), N)
    return GLQProblem(dynamics=dyn, noise=noise, cost1=cost1, cost2=cost2)
