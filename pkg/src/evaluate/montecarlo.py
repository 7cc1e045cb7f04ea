# fictitious-lq/src/evaluate/montecarlo.py
"""
Monte-Carlo cross-check of the exact tail objectives.

Paths are simulated in chunks, one SeedSequence child per chunk, so results do not
depend on the number of worker threads. The inner conditional means E_k X_l are
exact: from the simulated Z_k they follow the closed-loop drift.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Tuple

import numpy as np

from src.config import MC_MIN_PATHS, config
from src.evaluate.moments import EvaluationError, closed_loop, last_stage, law_of, policy_selectors
from src.game.equilibrium import EquilibriumLaw
from src.game.model import GLQDynamics, LQProblem, SamplerKind
from src.selfcoord.fictitious import augmented_dynamics
from src.utils.numkit import psd_sqrt

logger = logging.getLogger(__name__)


def sample_noise(rng: np.random.Generator, sampler_kind: SamplerKind, L: np.ndarray, size: int) -> np.ndarray:
    """(size, p) draws with mean 0 and covariance L L^T."""
    p = L.shape[0]
    if sampler_kind is SamplerKind.TWO_POINT:
        xi = rng.choice(np.array([-1.0, 1.0]), size=(size, p))
    elif sampler_kind is SamplerKind.GAUSSIAN:
        xi = rng.standard_normal((size, p))
    else:
        raise EvaluationError(f"Unknown sampler kind {sampler_kind!r}")
    return xi @ L.T


def _row_quad(x: np.ndarray, W: np.ndarray) -> np.ndarray:
    return np.einsum("ri,ij,rj->r", x, W, x)


def _simulate_chunk(lq: LQProblem, dyn: GLQDynamics, law: EquilibriumLaw, k: int, size: int,
                    seed: np.random.SeedSequence, sampler_kind: SamplerKind, policy: str) -> np.ndarray:
    """Sampled tail costs of `size` paths."""
    rng = np.random.default_rng(seed)
    Sx, rows = policy_selectors(lq, policy)
    w = lq.weights
    roots = [psd_sqrt(lq.noise.delta(l)) for l in range(lq.N)]
    Z = np.tile(law.mean_path[law.t], (size, 1))

    def advance(Z: np.ndarray, l: int) -> np.ndarray:
        F, f, G, g, _ = closed_loop(dyn, law, l)
        nxt = Z @ F.T + f[None, :]
        if dyn.p:
            noise = sample_noise(rng, sampler_kind, roots[l], size)
            for i in range(dyn.p):
                nxt += noise[:, i:i + 1] * (Z @ G[i].T + g[i][None, :])
        return nxt

    for l in range(law.t, k):
        Z = advance(Z, l)

    M = Z.copy()
    cost = np.zeros(size)
    for l in range(k, lq.N):
        F, f, _, _, offset = closed_loop(dyn, law, l)
        Kv, v_off = law.Kdev[l][rows], offset[rows]
        X, mX = Z @ Sx.T, M @ Sx.T
        v, mv = Z @ Kv.T + v_off, M @ Kv.T + v_off
        cost += (_row_quad(X, w.weight("Q", k, l)) + _row_quad(mX, w.weight("Qbar", k, l))
                 + _row_quad(v, w.weight("R11", k, l)) + _row_quad(mv, w.weight("R11bar", k, l))
                 + 2.0 * X @ w.weight("q", k, l))
        Z = advance(Z, l)
        M = M @ F.T + f[None, :]

    X, mX = Z @ Sx.T, M @ Sx.T
    cost += (_row_quad(X, w.terminal_weight("G", k)) + _row_quad(mX, w.terminal_weight("Gbar", k))
             + 2.0 * mX @ w.terminal_weight("g", k))
    return cost


def monte_carlo_tail_cost(lq: LQProblem, solution, k: int, paths: int, seed: Optional[int] = None,
                          sampler_kind: Optional[SamplerKind] = None, threads: Optional[int] = None,
                          chunk: Optional[int] = None, policy: str = "selfcoord") -> Tuple[float, float]:
    """
    Sample mean and standard error of the stage-k tail objective.

    Raises:
        EvaluationError: fewer than two paths or k outside the law's horizon
    """
    if paths < MC_MIN_PATHS:
        raise EvaluationError(f"Monte-Carlo needs at least {MC_MIN_PATHS} paths, got {paths}")
    law = law_of(solution)
    if not law.t <= k <= last_stage(lq):
        raise EvaluationError(f"Stage k={k} outside [{law.t}, {last_stage(lq)}]")
    seed = config.run.seed if seed is None else seed
    sampler_kind = SamplerKind(sampler_kind) if sampler_kind is not None else lq.noise.sampler_kind
    threads = threads or config.run.threads
    chunk = chunk or config.run.mc_chunk

    sizes: List[int] = [chunk] * (paths // chunk)
    if paths % chunk:
        sizes.append(paths % chunk)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))
    dyn = augmented_dynamics(lq)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(
            lambda args: _simulate_chunk(lq, dyn, law, k, args[0], args[1], sampler_kind, policy),
            zip(sizes, seeds),
        ))
    samples = np.concatenate(parts)
    estimate = float(samples.mean())
    stderr = float(samples.std(ddof=1) / np.sqrt(samples.size))
    logger.info(f"Monte-Carlo V_{k}: {estimate:.6f} +/- {stderr:.2e} ({paths} paths, {sampler_kind.value})")
    return estimate, stderr
