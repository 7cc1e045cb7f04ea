# fictitious-lq/src/game/tree.py
"""
Moment-matched scenario trees.

Level j of a tree started at time t holds the b**j nodes of stage t + j, stored as
the leading axis of a numpy array. The children of node i are i*b .. i*b + b - 1,
so the descendants of a node at any deeper level form a contiguous block and
conditional expectations are group means. Branches are equally likely.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.config import MAX_TREE_BRANCHING, MAX_TREE_DEPTH, TREE_MOMENT_ATOL
from src.game.model import GLQProblem, NoiseSpec, PlayerCost
from src.utils.numkit import psd_sqrt

logger = logging.getLogger(__name__)


class TreeInvalidError(Exception):
    """Custom exception for trees that do not match the noise moments."""
    pass


@dataclass(frozen=True)
class ScenarioTree:
    """Finite realization of w_t, ..., w_{N-1} with exact first and second moments."""
    t: int
    depth: int
    p: int
    branching: int
    realizations: Tuple[np.ndarray, ...]  # per level: (b, p) branch noise values

    @property
    def N(self) -> int:
        return self.t + self.depth

    @property
    def probabilities(self) -> np.ndarray:
        return np.full(self.branching, 1.0 / self.branching)

    def n_nodes(self, level: int) -> int:
        return self.branching ** level

    def stage(self, level: int) -> int:
        return self.t + level

    def edge_noise(self, level: int) -> np.ndarray:
        """(b**(level+1), p): noise on the edge into each node of level + 1."""
        return np.tile(self.realizations[level], (self.n_nodes(level), 1))

    def to_children(self, values: np.ndarray) -> np.ndarray:
        """Repeat node values once per child."""
        return np.repeat(values, self.branching, axis=0)

    def expand(self, values: np.ndarray, from_level: int, to_level: int) -> np.ndarray:
        """Broadcast level-from values to every descendant at level-to."""
        return np.repeat(values, self.branching ** (to_level - from_level), axis=0)

    def reduce(self, values: np.ndarray, from_level: int, to_level: int) -> np.ndarray:
        """Conditional expectation onto the nodes of an earlier level."""
        if to_level == from_level:
            return values
        groups = self.branching ** (from_level - to_level)
        shaped = values.reshape((self.n_nodes(to_level), groups) + values.shape[1:])
        return shaped.mean(axis=1)

    def cond_mean(self, values: np.ndarray, level: int, given: int) -> np.ndarray:
        """E_{t+given} of a level quantity, broadcast back to the level's nodes."""
        return self.expand(self.reduce(values, level, given), given, level)

    def root_mean(self, values: np.ndarray, level: int) -> np.ndarray:
        return self.reduce(values, level, 0)[0]


def two_point_branches(p: int) -> np.ndarray:
    """All sign vectors in {-1, +1}^p: mean 0, second moment I."""
    if p == 0:
        return np.zeros((1, 0))
    return np.array(list(itertools.product((-1.0, 1.0), repeat=p)))


def build_tree(noise: NoiseSpec, t: int, N: Optional[int] = None) -> ScenarioTree:
    """
    Product two-point tree for stages t .. N-1.

    Each branch value is L xi with L L^T = Delta_k and xi a sign vector, so branch
    means vanish and branch second moments equal Delta_k.
    """
    N = noise.N if N is None else N
    depth = N - t
    if depth < 0 or depth > MAX_TREE_DEPTH:
        raise TreeInvalidError(f"Tree depth {depth} outside [0, {MAX_TREE_DEPTH}]")
    signs = two_point_branches(noise.p)
    branching = signs.shape[0]
    if branching > MAX_TREE_BRANCHING:
        raise TreeInvalidError(f"Branching {branching} exceeds {MAX_TREE_BRANCHING} (p={noise.p})")

    realizations = tuple(signs @ psd_sqrt(noise.delta(k)).T for k in range(t, N))
    tree = ScenarioTree(t=t, depth=depth, p=noise.p, branching=branching, realizations=realizations)
    verify_moments(tree, noise)
    logger.debug(f"Built tree t={t} depth={depth} branching={branching} leaves={tree.n_nodes(depth)}")
    return tree


def verify_moments(tree: ScenarioTree, noise: NoiseSpec) -> None:
    """Raise TreeInvalidError unless every level reproduces (0, Delta_k)."""
    if tree.p != noise.p:
        raise TreeInvalidError(f"Tree noise dimension {tree.p} != {noise.p}")
    prob = tree.probabilities
    for level, values in enumerate(tree.realizations):
        delta = noise.delta(tree.stage(level))
        first = prob @ values
        second = values.T @ (prob[:, None] * values)
        scale = 1.0 + np.max(np.abs(delta), initial=0.0)
        err = max(np.max(np.abs(first), initial=0.0), np.max(np.abs(second - delta), initial=0.0))
        if err > TREE_MOMENT_ATOL * scale:
            raise TreeInvalidError(f"Tree moments at stage {tree.stage(level)} off by {err:.3e}")


# ============== Forward simulation and costs ==============

def propagate(problem: GLQProblem, tree: ScenarioTree, y: np.ndarray,
              controls: Sequence[np.ndarray]) -> List[np.ndarray]:
    """
    Forward pass of the GLQ dynamics under node controls.

    Args:
        controls: per level j < depth, (b**j, m1 + m2) stacked (u; v)

    Returns:
        per level j <= depth, (b**j, n) states
    """
    states = [np.asarray(y, dtype=np.float64).reshape(1, -1)]
    for level in range(tree.depth):
        states.append(step(problem, tree, level, states[-1], controls[level]))
    return states


def step(problem: GLQProblem, tree: ScenarioTree, level: int, X: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Children states of the nodes of `level`."""
    dyn = problem.dynamics
    k = tree.stage(level)
    nxt = tree.to_children(X @ dyn.A[k].T + U @ dyn.B(k).T)
    if dyn.p:
        w = tree.edge_noise(level)
        Xc, Uc = tree.to_children(X), tree.to_children(U)
        for i in range(dyn.p):
            nxt += w[:, i:i + 1] * (Xc @ dyn.C[k][i].T + Uc @ dyn.D(k, i).T)
    return nxt


def _quad(x: np.ndarray, m: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Row-wise x_r^T M z_r."""
    return np.einsum("ri,ij,rj->r", x, m, z)


def tree_cost(cost: PlayerCost, t_cost: int, tree: ScenarioTree, states: Sequence[np.ndarray],
              controls: Sequence[np.ndarray], from_level: int = 0,
              homogeneous: bool = False) -> np.ndarray:
    """
    Tail cost E_s[...] at every node of `from_level`, with weights indexed (t_cost, k).

    The mean-field terms condition on the start node. With homogeneous=True the
    linear terms q, rho, g are dropped (second-variation forms).
    """
    s = from_level
    total = np.zeros(tree.n_nodes(s))
    for level in range(s, tree.depth):
        k = tree.stage(level)
        X, U = states[level], controls[level]
        pathwise = (_quad(X, cost.weight("Q", t_cost, k), X)
                    + 2.0 * _quad(U, cost.S(t_cost, k), X)
                    + _quad(U, cost.R(t_cost, k), U))
        if not homogeneous:
            pathwise = pathwise + 2.0 * (X @ cost.weight("q", t_cost, k)) + 2.0 * (U @ cost.rho(t_cost, k))
        mX, mU = tree.reduce(X, level, s), tree.reduce(U, level, s)
        total += (tree.reduce(pathwise, level, s)
                  + _quad(mX, cost.weight("Qbar", t_cost, k), mX)
                  + 2.0 * _quad(mU, cost.S(t_cost, k, bar=True), mX)
                  + _quad(mU, cost.R(t_cost, k, bar=True), mU))

    X = states[tree.depth]
    mX = tree.reduce(X, tree.depth, s)
    total += (tree.reduce(_quad(X, cost.terminal_weight("G", t_cost), X), tree.depth, s)
              + _quad(mX, cost.terminal_weight("Gbar", t_cost), mX))
    if not homogeneous:
        total += 2.0 * (mX @ cost.terminal_weight("g", t_cost))
    return total


def random_controls(tree: ScenarioTree, dim: int, rng: np.random.Generator,
                    levels: Optional[Sequence[int]] = None) -> List[np.ndarray]:
    """Standard-normal node values (zero outside `levels` when given)."""
    out = []
    for level in range(tree.depth):
        shape = (tree.n_nodes(level), dim)
        if levels is None or level in levels:
            out.append(rng.standard_normal(shape))
        else:
            out.append(np.zeros(shape))
    return out
