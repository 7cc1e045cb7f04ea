# fictitious-lq/src/cli/fixtures.py
"""Bundled problem documents: the storage LQ example, the mean-variance market and a scalar game."""
import json
import logging
from pathlib import Path
from typing import Any, Dict, List

logger = logging.getLogger(__name__)


def example41_document() -> Dict[str, Any]:
    """Four-stage, two-state storage problem with one scalar noise channel."""
    return {
        "kind": "lq",
        "name": "example41",
        "lq": {
            "N": 4, "n": 2, "m": 1, "p": 1,
            "A": [
                [[1.0, 0.4], [0.3, 2.0]],
                [[1.102, -0.24], [0.53, 1.89]],
                [[1.89, 0.49], [0.0, 1.75]],
                [[0.8, -0.4], [0.2, 0.7]],
            ],
            "B": [
                [[1.2], [-0.5]],
                [[1.0], [1.0]],
                [[1.2], [0.2]],
                [[1.0], [0.3]],
            ],
            "D": [
                [[[1.0], [0.3]]],
                [[[1.0], [0.4]]],
                [[[0.45], [0.25]]],
                [[[0.52], [0.0]]],
            ],
            "delta": [[1.0]],
            "Q": [
                [[0.55, 0.25], [0.25, 0.6]],
                [[1.0, -0.325], [-0.325, 0.5]],
                [[1.25, 0.25], [0.25, 1.4]],
                [[0.5, 0.0], [0.0, 0.375]],
            ],
            "Qbar": [
                [[1.0, 0.325], [0.325, 1.15]],
                [[1.265, 0.175], [0.175, 0.95]],
                [[1.25, 0.325], [0.325, 0.9]],
                [[1.0, 0.0], [0.0, 1.5]],
            ],
            "R": [[[1.5]], [[1.4]], [[1.6]], [[2.0]]],
            "G": [[1.0, -0.1], [-0.1, 1.0]],
            "Gbar": [[0.5, 0.0], [0.0, 0.5]],
            "sampler": "two_point",
        },
        "punishment": {"mu": 0.0, "psi": [[1.0]]},
        "initial": {"t": 0, "x": [0.5, 0.5]},
        "evaluation": {"k": [0, 1, 2, 3], "grid": "linspace:0,3,3001", "paths": 100_000},
    }


def example42_document() -> Dict[str, Any]:
    """Three risky assets, four periods, constant market data."""
    return {
        "kind": "mv",
        "name": "example42",
        "mv": {
            "N": 4, "p0": 3,
            "s": 1.04,
            "mean_e": [1.162, 1.246, 1.228],
            "cov_e": [
                [0.0146, 0.0187, 0.0145],
                [0.0187, 0.0854, 0.0104],
                [0.0145, 0.0104, 0.0289],
            ],
            "lam": 1.0,
        },
        "punishment": {"mu": 0.0, "psi": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]},
        "initial": {"t": 0, "z": 10.0},
        "evaluation": {"k": [0, 1, 2, 3], "grid": "paper", "paths": 100_000},
    }


def scalar_n1_document() -> Dict[str, Any]:
    """
    One-stage noiseless scalar game with a closed-form equilibrium.

    Both players pay u^2 (resp. v^2) plus the terminal state squared, so
    W_tilde = [[2, 1], [1, 2]] and u* = v* = -y/3.
    """
    return {
        "kind": "glq",
        "name": "scalar_n1",
        "glq": {
            "N": 1, "n": 1, "m1": 1, "m2": 1, "p": 0,
            "A": [[1.0]],
            "B1": [[1.0]],
            "B2": [[1.0]],
            "cost1": {"R11": [[1.0]], "G": [[1.0]]},
            "cost2": {"R22": [[1.0]], "G": [[1.0]]},
        },
        "initial": {"t": 0, "x": [1.0]},
        "evaluation": {"directions": 5},
    }


FIXTURES = {
    "example41": example41_document,
    "example42": example42_document,
    "scalar_n1": scalar_n1_document,
}


def write_fixtures(out_dir: str) -> List[Path]:
    """Write every bundled document as <name>.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, build in FIXTURES.items():
        path = out / f"{name}.json"
        path.write_text(json.dumps(build(), indent=2) + "\n", encoding="utf-8")
        paths.append(path)
    logger.info(f"Wrote {len(paths)} fixtures to {out}")
    return paths
