# fictitious-lq/src/cli/schemas.py
"""
Pydantic models for the JSON problem documents.

Stage-indexed matrices are given either once (broadcast to every stage) or as a
list of N matrices; noise channel matrices likewise as one list of p matrices or
N such lists. Unknown keys are rejected everywhere.
"""
from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

Vector = List[float]
Matrix = List[List[float]]
StageMatrix = Union[Matrix, List[Matrix]]
StageVector = Union[Vector, List[Vector]]
ChannelMatrix = Union[List[Matrix], List[List[Matrix]]]
StageScalar = Union[float, List[float]]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ============== Problem Schemas ==============

class LQSchema(StrictModel):
    """Problem (LQ) with stationary weights."""
    N: int = Field(ge=1)
    n: int = Field(ge=1)
    m: int = Field(ge=1)
    p: int = Field(ge=0)
    A: StageMatrix
    B: StageMatrix
    C: Optional[ChannelMatrix] = None  # zero when omitted
    D: Optional[ChannelMatrix] = None
    delta: Optional[StageMatrix] = None  # noise second moments, identity when omitted
    Q: Optional[StageMatrix] = None
    Qbar: Optional[StageMatrix] = None
    R: StageMatrix
    Rbar: Optional[StageMatrix] = None
    q: Optional[StageVector] = None
    G: Optional[Matrix] = None
    Gbar: Optional[Matrix] = None
    g: Optional[Vector] = None
    sampler: Literal["two_point", "gaussian"] = "two_point"


class PlayerCostSchema(StrictModel):
    """Stationary weights of one GLQ player; omitted blocks are zero."""
    Q: Optional[StageMatrix] = None
    Qbar: Optional[StageMatrix] = None
    S1: Optional[StageMatrix] = None
    S2: Optional[StageMatrix] = None
    S1bar: Optional[StageMatrix] = None
    S2bar: Optional[StageMatrix] = None
    R11: Optional[StageMatrix] = None
    R12: Optional[StageMatrix] = None
    R21: Optional[StageMatrix] = None
    R22: Optional[StageMatrix] = None
    R11bar: Optional[StageMatrix] = None
    R12bar: Optional[StageMatrix] = None
    R21bar: Optional[StageMatrix] = None
    R22bar: Optional[StageMatrix] = None
    q: Optional[StageVector] = None
    rho1: Optional[StageVector] = None
    rho2: Optional[StageVector] = None
    G: Optional[Matrix] = None
    Gbar: Optional[Matrix] = None
    g: Optional[Vector] = None


class GLQSchema(StrictModel):
    """Problem (GLQ) with stationary weights for both players."""
    N: int = Field(ge=1)
    n: int = Field(ge=1)
    m1: int = Field(ge=1)
    m2: int = Field(ge=1)
    p: int = Field(ge=0)
    A: StageMatrix
    B1: StageMatrix
    B2: StageMatrix
    C: Optional[ChannelMatrix] = None
    D1: Optional[ChannelMatrix] = None
    D2: Optional[ChannelMatrix] = None
    delta: Optional[StageMatrix] = None
    cost1: PlayerCostSchema
    cost2: PlayerCostSchema
    sampler: Literal["two_point", "gaussian"] = "two_point"


class MarketSchema(StrictModel):
    """Mean-variance market data."""
    N: int = Field(ge=1)
    p0: int = Field(ge=1)
    s: StageScalar
    mean_e: StageVector
    cov_e: StageMatrix
    lam: float = Field(gt=0)


# ============== Run Schemas ==============

class PunishmentSchema(StrictModel):
    mu: StageScalar = 0.0
    psi: Optional[StageMatrix] = None  # Phi for the mean-variance kind; identity when omitted


class InitialSchema(StrictModel):
    t: int = Field(default=0, ge=0)
    x: Optional[Vector] = None
    z: Optional[float] = None


class EvaluationSchema(StrictModel):
    k: List[int] = Field(default_factory=list)
    grid: str = "list:[0]"
    paths: int = Field(default=100_000, ge=2)
    seed: Optional[int] = None
    directions: int = Field(default=5, ge=1)


class TolerancesSchema(StrictModel):
    rank_rtol: Optional[float] = Field(default=None, gt=0)
    psd_atol: Optional[float] = Field(default=None, gt=0)
    range_rtol: Optional[float] = Field(default=None, gt=0)


class ConfigDocument(StrictModel):
    """Top-level problem document."""
    kind: Literal["lq", "mv", "glq"]
    name: Optional[str] = None
    lq: Optional[LQSchema] = None
    mv: Optional[MarketSchema] = None
    glq: Optional[GLQSchema] = None
    punishment: PunishmentSchema = Field(default_factory=PunishmentSchema)
    initial: InitialSchema = Field(default_factory=InitialSchema)
    evaluation: EvaluationSchema = Field(default_factory=EvaluationSchema)
    tolerances: TolerancesSchema = Field(default_factory=TolerancesSchema)
    literal_upsilon: bool = False
    recursion: Literal["general", "symmetric"] = "general"

    @model_validator(mode="after")
    def check_kind_section(self) -> "ConfigDocument":
        sections = {"lq": self.lq, "mv": self.mv, "glq": self.glq}
        if sections[self.kind] is None:
            raise ValueError(f"kind '{self.kind}' needs a '{self.kind}' section")
        extra = [name for name, value in sections.items() if value is not None and name != self.kind]
        if extra:
            raise ValueError(f"sections {extra} do not belong to kind '{self.kind}'")
        return self
