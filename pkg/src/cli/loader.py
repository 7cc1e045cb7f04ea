# fictitious-lq/src/cli/loader.py
"""
Problem document loading.

parse_config turns a JSON document into validated problem objects or raises
ConfigError carrying every located error (path into the document plus message).
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from src.cli.schemas import ConfigDocument, EvaluationSchema, PlayerCostSchema
from src.config import Tolerances, config
from src.game.model import (
    GLQDynamics,
    GLQProblem,
    LQProblem,
    NoiseSpec,
    SamplerKind,
    stationary_cost,
    validate,
)
from src.selfcoord.fictitious import Punishment
from src.selfcoord.meanvar import MarketData, MarketDataError

logger = logging.getLogger(__name__)


class ConfigError(Exception):
    """Custom exception for invalid problem documents."""

    def __init__(self, errors: List[str]):
        self.errors = errors
        super().__init__("Invalid config:\n  " + "\n  ".join(errors))


@dataclass
class LoadedConfig:
    """A parsed document with its problem objects built and validated."""
    kind: str
    document: ConfigDocument
    tolerances: Tolerances
    t: int
    name: Optional[str] = None
    lq: Optional[LQProblem] = None
    market: Optional[MarketData] = None
    glq: Optional[GLQProblem] = None
    punishment: Optional[Punishment] = None
    x: Optional[np.ndarray] = None
    z: Optional[float] = None
    evaluation: EvaluationSchema = field(default_factory=EvaluationSchema)

    @property
    def N(self) -> int:
        problem = self.lq or self.glq or self.market
        return problem.N


def _format_loc(loc: Tuple[Union[str, int], ...]) -> str:
    out = ""
    for part in loc:
        if isinstance(part, int):
            out += f"[{part}]"
        else:
            out += ("." if out else "") + str(part)
    return out or "<root>"


def _ragged_at(value, path: str) -> str:
    """Path of the first nested list that breaks the rectangular layout."""
    if not isinstance(value, (list, tuple)) or not value:
        return path
    for i, item in enumerate(value):
        if isinstance(item, (list, tuple)):
            try:
                np.asarray(item, dtype=np.float64)
            except ValueError:
                return _ragged_at(item, f"{path}[{i}]")
    lengths = [len(item) if isinstance(item, (list, tuple)) else None for item in value]
    for i, length in enumerate(lengths[1:], start=1):
        if length != lengths[0]:
            return f"{path}[{i}]"
    return path


class _Collector:
    """Accumulates located errors while arrays are shaped."""

    def __init__(self):
        self.errors: List[str] = []

    def add(self, path: str, message: str) -> None:
        self.errors.append(f"{path}: {message}")

    def array(self, value, path: str) -> Optional[np.ndarray]:
        """float64 array of a JSON list; ragged nesting is reported at its location."""
        try:
            return np.asarray(value, dtype=np.float64)
        except ValueError:
            self.add(_ragged_at(value, path), "ragged matrix")
            return None

    def stage_matrices(self, value, N: int, shape: Tuple[int, int], path: str) -> Optional[List[np.ndarray]]:
        if value is None:
            return None
        arr = self.array(value, path)
        if arr is None:
            return None
        if arr.ndim == 2:
            arrays = [arr] * N
        elif arr.ndim == 3:
            if arr.shape[0] != N:
                self.add(path, f"{arr.shape[0]} stage matrices for N={N}")
                return None
            arrays = list(arr)
        else:
            self.add(path, f"expected a matrix or a list of {N} matrices")
            return None
        ok = True
        for k, a in enumerate(arrays):
            if a.shape != shape:
                where = path if arr.ndim == 2 else f"{path}[{k}]"
                self.add(where, f"expected shape {shape}, got {a.shape}")
                ok = False
                if arr.ndim == 2:
                    break
        return [a.copy() for a in arrays] if ok else None

    def channel_matrices(self, value, N: int, p: int, shape: Tuple[int, int],
                         path: str) -> Optional[List[List[np.ndarray]]]:
        if value is None or p == 0:
            return [[np.zeros(shape) for _ in range(p)] for _ in range(N)]
        arr = self.array(value, path)
        if arr is None:
            return None
        if arr.ndim == 3:
            stages = [arr] * N
        elif arr.ndim == 4:
            if arr.shape[0] != N:
                self.add(path, f"{arr.shape[0]} stages of channel matrices for N={N}")
                return None
            stages = list(arr)
        else:
            self.add(path, f"expected {p} matrices or {N} lists of {p} matrices")
            return None
        if stages[0].shape[0] != p:
            self.add(path, f"{stages[0].shape[0]} channels for p={p}")
            return None
        if stages[0].shape[1:] != shape:
            self.add(path, f"expected channel shape {shape}, got {stages[0].shape[1:]}")
            return None
        return [[s[i].copy() for i in range(p)] for s in stages]

    def stage_vectors(self, value, N: int, length: int, path: str) -> Optional[List[np.ndarray]]:
        if value is None:
            return None
        arr = self.array(value, path)
        if arr is None:
            return None
        if arr.ndim == 1:
            arrays = [arr] * N
        elif arr.ndim == 2 and arr.shape[0] == N:
            arrays = list(arr)
        else:
            self.add(path, f"expected a vector or a list of {N} vectors")
            return None
        if arrays[0].shape != (length,):
            self.add(path, f"expected length {length}, got {arrays[0].shape[0]}")
            return None
        return [a.copy() for a in arrays]

    def stage_scalars(self, value, N: int, path: str) -> Optional[List[float]]:
        if isinstance(value, (int, float)):
            return [float(value)] * N
        if len(value) != N:
            self.add(path, f"{len(value)} values for N={N}")
            return None
        return [float(v) for v in value]

    def matrix(self, value, shape: Tuple[int, int], path: str) -> Optional[np.ndarray]:
        if value is None:
            return None
        arr = self.array(value, path)
        if arr is None:
            return None
        if arr.shape != shape:
            self.add(path, f"expected shape {shape}, got {arr.shape}")
            return None
        return arr

    def vector(self, value, length: int, path: str) -> Optional[np.ndarray]:
        if value is None:
            return None
        arr = self.array(value, path)
        if arr is None:
            return None
        if arr.shape != (length,):
            self.add(path, f"expected length {length}, got {arr.shape}")
            return None
        return arr


def _noise(col: _Collector, delta, N: int, p: int, sampler: str, path: str) -> NoiseSpec:
    deltas = col.stage_matrices(delta, N, (p, p), path) if delta is not None else None
    if deltas is None:
        deltas = [np.eye(p) for _ in range(N)]
    return NoiseSpec(p=p, deltas=tuple(deltas), sampler_kind=SamplerKind(sampler))


def _build_lq(col: _Collector, doc: ConfigDocument) -> Optional[LQProblem]:
    s = doc.lq
    N, n, m, p = s.N, s.n, s.m, s.p
    A = col.stage_matrices(s.A, N, (n, n), "lq.A")
    B = col.stage_matrices(s.B, N, (n, m), "lq.B")
    C = col.channel_matrices(s.C, N, p, (n, n), "lq.C")
    D = col.channel_matrices(s.D, N, p, (n, m), "lq.D")
    noise = _noise(col, s.delta, N, p, s.sampler, "lq.delta")
    running = {
        "Q": col.stage_matrices(s.Q, N, (n, n), "lq.Q"),
        "Qbar": col.stage_matrices(s.Qbar, N, (n, n), "lq.Qbar"),
        "R11": col.stage_matrices(s.R, N, (m, m), "lq.R"),
        "R11bar": col.stage_matrices(s.Rbar, N, (m, m), "lq.Rbar"),
        "q": col.stage_vectors(s.q, N, n, "lq.q"),
    }
    terminal = {
        "G": col.matrix(s.G, (n, n), "lq.G"),
        "Gbar": col.matrix(s.Gbar, (n, n), "lq.Gbar"),
        "g": col.vector(s.g, n, "lq.g"),
    }
    if col.errors or A is None or B is None or C is None or D is None:
        return None
    weights = stationary_cost(0, N, n, m, 0, terminal=terminal, **running)
    return LQProblem(N=N, n=n, m=m, p=p, A=tuple(A), B=tuple(B),
                     C=tuple(tuple(c) for c in C), D=tuple(tuple(d) for d in D),
                     weights=weights, noise=noise)


def _player_cost(col: _Collector, schema: PlayerCostSchema, player: int, N: int, n: int, m1: int, m2: int):
    path = f"glq.cost{player}"
    dims = {"1": m1, "2": m2}
    running = {}
    for name in ("Q", "Qbar"):
        running[name] = col.stage_matrices(getattr(schema, name), N, (n, n), f"{path}.{name}")
    for name in ("S1", "S2", "S1bar", "S2bar"):
        running[name] = col.stage_matrices(getattr(schema, name), N, (dims[name[1]], n), f"{path}.{name}")
    for name in ("R11", "R12", "R21", "R22", "R11bar", "R12bar", "R21bar", "R22bar"):
        running[name] = col.stage_matrices(getattr(schema, name), N, (dims[name[1]], dims[name[2]]),
                                           f"{path}.{name}")
    running["q"] = col.stage_vectors(schema.q, N, n, f"{path}.q")
    running["rho1"] = col.stage_vectors(schema.rho1, N, m1, f"{path}.rho1")
    running["rho2"] = col.stage_vectors(schema.rho2, N, m2, f"{path}.rho2")
    terminal = {
        "G": col.matrix(schema.G, (n, n), f"{path}.G"),
        "Gbar": col.matrix(schema.Gbar, (n, n), f"{path}.Gbar"),
        "g": col.vector(schema.g, n, f"{path}.g"),
    }
    return stationary_cost(player, N, n, m1, m2, terminal=terminal, **running)


def _build_glq(col: _Collector, doc: ConfigDocument) -> Optional[GLQProblem]:
    s = doc.glq
    N, n, m1, m2, p = s.N, s.n, s.m1, s.m2, s.p
    A = col.stage_matrices(s.A, N, (n, n), "glq.A")
    B1 = col.stage_matrices(s.B1, N, (n, m1), "glq.B1")
    B2 = col.stage_matrices(s.B2, N, (n, m2), "glq.B2")
    C = col.channel_matrices(s.C, N, p, (n, n), "glq.C")
    D1 = col.channel_matrices(s.D1, N, p, (n, m1), "glq.D1")
    D2 = col.channel_matrices(s.D2, N, p, (n, m2), "glq.D2")
    noise = _noise(col, s.delta, N, p, s.sampler, "glq.delta")
    cost1 = _player_cost(col, s.cost1, 1, N, n, m1, m2)
    cost2 = _player_cost(col, s.cost2, 2, N, n, m1, m2)
    if col.errors:
        return None
    dynamics = GLQDynamics(N=N, n=n, m1=m1, m2=m2, p=p, A=tuple(A), B1=tuple(B1), B2=tuple(B2),
                           C=tuple(tuple(c) for c in C), D1=tuple(tuple(d) for d in D1),
                           D2=tuple(tuple(d) for d in D2))
    return GLQProblem(dynamics=dynamics, noise=noise, cost1=cost1, cost2=cost2)


def _build_market(col: _Collector, doc: ConfigDocument) -> Optional[MarketData]:
    s = doc.mv
    returns = col.stage_scalars(s.s, s.N, "mv.s")
    mean_e = col.stage_vectors(s.mean_e, s.N, s.p0, "mv.mean_e")
    cov_e = col.stage_matrices(s.cov_e, s.N, (s.p0, s.p0), "mv.cov_e")
    if returns is None or mean_e is None or cov_e is None:
        return None
    md = MarketData(N=s.N, p0=s.p0, s=tuple(returns), mean_e=tuple(mean_e), cov_e=tuple(cov_e), lam=s.lam)
    try:
        md.validate()
    except MarketDataError as e:
        col.add("mv", str(e))
        return None
    return md


def _punishment(col: _Collector, doc: ConfigDocument, N: int, m: int) -> Optional[Punishment]:
    mus = col.stage_scalars(doc.punishment.mu, N, "punishment.mu")
    psis = col.stage_matrices(doc.punishment.psi, N, (m, m), "punishment.psi")
    if psis is None and doc.punishment.psi is None:
        psis = [np.eye(m) for _ in range(N)]
    if mus is None or psis is None:
        return None
    return Punishment(mus=tuple(mus), psis=tuple(psis))


def load_document(data: Dict[str, Any]) -> LoadedConfig:
    """Validate a document mapping and build its problem objects."""
    try:
        doc = ConfigDocument.model_validate(data)
    except ValidationError as e:
        raise ConfigError([f"{_format_loc(err['loc'])}: {err['msg']}" for err in e.errors()])

    col = _Collector()
    tolerances = config.tolerances.with_overrides(**doc.tolerances.model_dump())
    loaded = LoadedConfig(kind=doc.kind, name=doc.name, document=doc, tolerances=tolerances,
                          t=doc.initial.t, evaluation=doc.evaluation)

    if doc.kind == "lq":
        loaded.lq = _build_lq(col, doc)
        loaded.punishment = _punishment(col, doc, doc.lq.N, doc.lq.m)
        loaded.x = col.vector(doc.initial.x, doc.lq.n, "initial.x") if doc.initial.x is not None else None
        if doc.initial.x is None:
            col.add("initial.x", "required for kind 'lq'")
        N = doc.lq.N
    elif doc.kind == "glq":
        loaded.glq = _build_glq(col, doc)
        loaded.x = col.vector(doc.initial.x, doc.glq.n, "initial.x") if doc.initial.x is not None else None
        if doc.initial.x is None:
            col.add("initial.x", "required for kind 'glq'")
        N = doc.glq.N
    else:
        loaded.market = _build_market(col, doc)
        loaded.punishment = _punishment(col, doc, doc.mv.N, doc.mv.p0)
        if doc.initial.z is None:
            col.add("initial.z", "required for kind 'mv'")
        loaded.z = doc.initial.z
        N = doc.mv.N

    if not 0 <= doc.initial.t < N:
        col.add("initial.t", f"must lie in [0, {N - 1}]")
    for i, k in enumerate(doc.evaluation.k):
        if not 0 <= k <= N:
            col.add(f"evaluation.k[{i}]", f"stage {k} outside [0, {N}]")

    problem = loaded.lq or loaded.glq
    if problem is not None:
        for violation in validate(problem).violations:
            col.add(doc.kind, violation)
    if col.errors:
        raise ConfigError(col.errors)
    logger.debug(f"Loaded {doc.kind} document {doc.name or ''} (N={N})")
    return loaded


def parse_config(path: Union[str, Path]) -> LoadedConfig:
    """Read and validate a JSON problem document."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError([f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}"])
    return load_document(data)
