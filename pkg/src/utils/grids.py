# fictitious-lq/src/utils/grids.py
"""Punishment-intensity grid specs: paper (alias multiscale), list:[...], linspace:a,b,n, logspace:a,b,n."""
import json
import logging
from typing import List, Optional

import numpy as np

from src.config import MULTISCALE_GRID_COUNT, MULTISCALE_GRID_STEPS

logger = logging.getLogger(__name__)

# keywords selecting multiscale_grid; "paper" is the documented CLI name
MULTISCALE_KEYWORDS = ("paper", "multiscale")


class GridSpecError(ValueError):
    """Custom exception for malformed grid specs."""
    pass


def multiscale_grid(max_mu: Optional[float] = None) -> np.ndarray:
    """Deduplicated sorted union {l*1e-5} U {l*1e-3} U {l}, l = 0..1e5, optionally capped."""
    ell = np.arange(MULTISCALE_GRID_COUNT + 1, dtype=np.float64)
    # round to 12 decimals so l*1e-5 and l'*1e-3 coincide exactly where they should
    parts = [np.round(ell * step, 12) for step in MULTISCALE_GRID_STEPS]
    grid = np.unique(np.concatenate(parts))
    if max_mu is not None:
        grid = grid[grid <= max_mu]
    return grid


def normalize_grid(values) -> np.ndarray:
    """Sorted, deduplicated float grid."""
    grid = np.unique(np.asarray(values, dtype=np.float64).reshape(-1))
    if not np.all(np.isfinite(grid)):
        raise GridSpecError("grid values must be finite")
    return grid


def parse_grid(spec: str, max_mu: Optional[float] = None) -> np.ndarray:
    """
    Parse a grid spec string.

    Args:
        spec: "paper" (or "multiscale"), "list:[0, 0.1]", "linspace:a,b,n" or "logspace:a,b,n"
            (logspace takes base-10 exponents)
        max_mu: cap applied to the multiscale grid

    Returns:
        sorted unique grid values
    """
    spec = spec.strip()
    if spec in MULTISCALE_KEYWORDS:
        return multiscale_grid(max_mu)

    kind, _, body = spec.partition(":")
    if not body:
        raise GridSpecError(f"Unknown grid spec: {spec!r}")

    if kind == "list":
        try:
            values = json.loads(body)
        except json.JSONDecodeError as e:
            raise GridSpecError(f"Invalid list grid {body!r}: {e}")
        if isinstance(values, (int, float)):
            values = [values]
        return normalize_grid(values)

    if kind in ("linspace", "logspace"):
        parts = [p.strip() for p in body.split(",")]
        if len(parts) != 3:
            raise GridSpecError(f"{kind} expects a,b,n; got {body!r}")
        try:
            a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError as e:
            raise GridSpecError(f"Invalid {kind} arguments {body!r}: {e}")
        if n < 1:
            raise GridSpecError(f"{kind} needs n >= 1, got {n}")
        maker = np.linspace if kind == "linspace" else np.logspace
        return normalize_grid(maker(a, b, n))

    raise GridSpecError(f"Unknown grid spec kind: {kind!r}")


def parse_index_list(text: str) -> List[int]:
    """'0,1,2' -> [0, 1, 2]; empty string -> []."""
    text = text.strip()
    if not text:
        return []
    try:
        return sorted({int(part) for part in text.split(",") if part.strip()})
    except ValueError as e:
        raise GridSpecError(f"Invalid index list {text!r}: {e}")
