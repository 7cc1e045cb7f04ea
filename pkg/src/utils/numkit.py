# fictitious-lq/src/utils/numkit.py
"""
Dense real-matrix kernel.

Moore-Penrose pseudoinverse with a relative rank cutoff, PSD tests,
range-membership and projection identities, and the exact second-moment
propagation step used by the moment evaluator.
"""
import logging
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import pinv as scipy_pinv

from src.config import Tolerances, config

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Custom exception for incompatible matrix shapes."""
    pass


def as_mat(value, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array (vectors become columns)."""
    m = np.asarray(value, dtype=np.float64)
    if m.ndim == 0:
        m = m.reshape(1, 1)
    elif m.ndim == 1:
        m = m.reshape(-1, 1)
    elif m.ndim != 2:
        raise DimensionError(f"{name}: expected a matrix, got array of rank {m.ndim}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name}: entries must be finite")
    return m


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def pinv(m: np.ndarray, tol: Optional[Tolerances] = None) -> np.ndarray:
    """
    Moore-Penrose pseudoinverse via SVD.

    Singular values below rank_rtol * sigma_max are treated as zero.
    Empty inputs return the transposed-shape empty matrix.
    """
    tol = tol or config.tolerances
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        return np.zeros(m.shape[::-1])
    return scipy_pinv(m, atol=0.0, rtol=tol.rank_rtol)


def singular_ratio(m: np.ndarray) -> float:
    """sigma_min / sigma_max of a square matrix (1.0 for the empty matrix)."""
    if m.size == 0:
        return 1.0
    s = np.linalg.svd(m, compute_uv=False)
    if s[0] == 0.0:
        return 0.0
    return float(s[-1] / s[0])


def is_nonsingular(m: np.ndarray, tol: Optional[Tolerances] = None) -> bool:
    """Square and numerically full rank under the pinv rank decision."""
    tol = tol or config.tolerances
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    return singular_ratio(m) > tol.rank_rtol


def min_eigenvalue(m: np.ndarray) -> float:
    if m.shape[0] != m.shape[1]:
        raise DimensionError(f"PSD test needs a square matrix, got {m.shape}")
    if m.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(symmetrize(m))[0])


def is_psd(m: np.ndarray, tol: Optional[Tolerances] = None) -> bool:
    """True iff the symmetrized matrix has min eigenvalue >= -psd_atol."""
    tol = tol or config.tolerances
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionError(f"PSD test needs a square matrix, got {m.shape}")
    return min_eigenvalue(m) >= -tol.psd_atol


def in_range(w: np.ndarray, x: np.ndarray, tol: Optional[Tolerances] = None) -> bool:
    """
    Range membership x in Ran(W), tested column-wise by projection residual.

    Args:
        w: matrix W
        x: vector or column block with w.rows rows

    Returns:
        True iff ||x - W W^+ x|| <= range_rtol * (1 + ||x||) for every column
    """
    tol = tol or config.tolerances
    w = np.asarray(w, dtype=np.float64)
    x = as_mat(x, "x")
    if w.ndim != 2 or w.shape[0] != x.shape[0]:
        raise DimensionError(f"range test: W is {w.shape}, x has {x.shape[0]} rows")
    if x.size == 0:
        return True
    residual = x - w @ (pinv(w, tol) @ x)
    res_norms = np.linalg.norm(residual, axis=0)
    x_norms = np.linalg.norm(x, axis=0)
    return bool(np.all(res_norms <= tol.range_rtol * (1.0 + x_norms)))


def range_residuals(w: np.ndarray, xs: np.ndarray, w_pinv: Optional[np.ndarray] = None,
                    tol: Optional[Tolerances] = None) -> np.ndarray:
    """Relative projection residuals of many vectors (rows of xs) against Ran(W)."""
    tol = tol or config.tolerances
    xs = np.atleast_2d(xs)
    if w_pinv is None:
        w_pinv = pinv(w, tol)
    proj = xs @ (w @ w_pinv).T
    return np.linalg.norm(xs - proj, axis=1) / (1.0 + np.linalg.norm(xs, axis=1))


def projection_identity(w: np.ndarray, h: np.ndarray, tol: Optional[Tolerances] = None) -> bool:
    """True iff ||W W^+ H - H|| <= range_rtol * (1 + ||H||)."""
    tol = tol or config.tolerances
    w = np.asarray(w, dtype=np.float64)
    h = as_mat(h, "H")
    if w.ndim != 2 or w.shape[0] != h.shape[0]:
        raise DimensionError(f"projection identity: W is {w.shape}, H is {h.shape}")
    if h.size == 0:
        return True
    gap = np.linalg.norm(w @ pinv(w, tol) @ h - h)
    return bool(gap <= tol.range_rtol * (1.0 + np.linalg.norm(h)))


def second_moment_step(
    F: np.ndarray,
    f: np.ndarray,
    Gi: Sequence[np.ndarray],
    gi: Sequence[np.ndarray],
    delta: np.ndarray,
    mean: np.ndarray,
    smom: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact propagation of E[Y] and E[Y Y^T] for Y' = F Y + f + sum_i (G^i Y + g^i) w^i
    with E[w] = 0 and E[w w^T] = delta, w independent of Y.

    Returns:
        (mean', smom'), smom' symmetrized
    """
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    d = mean.shape[0]
    if F.shape != (d, d) or smom.shape != (d, d) or f.shape[0] != d:
        raise DimensionError(f"second moment step: F {F.shape}, f {f.shape}, smom {smom.shape}, d={d}")
    p = delta.shape[0]
    if len(Gi) != p or len(gi) != p:
        raise DimensionError(f"second moment step: {len(Gi)} noise gains for p={p}")

    Fm = F @ mean
    new_mean = Fm + f
    new_smom = F @ smom @ F.T + np.outer(Fm, f) + np.outer(f, Fm) + np.outer(f, f)

    gs = [np.asarray(g, dtype=np.float64).reshape(-1) for g in gi]
    for i in range(p):
        Gm_i = Gi[i] @ mean
        for j in range(p):
            dij = delta[i, j]
            if dij == 0.0:
                continue
            Gm_j = Gi[j] @ mean
            new_smom += dij * (
                Gi[i] @ smom @ Gi[j].T
                + np.outer(Gm_i, gs[j])
                + np.outer(gs[i], Gm_j)
                + np.outer(gs[i], gs[j])
            )

    return new_mean, symmetrize(new_smom)


def psd_sqrt(delta: np.ndarray) -> np.ndarray:
    """L with L L^T = delta for a symmetric PSD delta (eigen square root)."""
    if delta.size == 0:
        return np.zeros_like(delta)
    vals, vecs = np.linalg.eigh(symmetrize(delta))
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
