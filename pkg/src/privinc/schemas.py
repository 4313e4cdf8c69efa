"""Pydantic models shared by the experiment harness, the CLI and the HTTP service.

``ExperimentConfig`` is the JSON config schema; ``ExperimentConfig.model_json_schema()``
prints it in full.
"""
from __future__ import annotations

from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

SCHEMA_VERSION = 1

Algorithm = Literal["inc_erm", "priv_inc_reg", "proj_priv_inc_reg"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ConstraintModel(_Strict):
    kind: str = "l2"
    radius: float = Field(1.0, gt=0)
    p: Optional[float] = None
    k: Optional[int] = None


class DomainModel(_Strict):
    kind: str = "unit_l2"
    k: Optional[int] = None


class GeneratorModel(_Strict):
    """Planted linear model ``y = clamp(<x, theta*> + w, [-1, 1])``.

    ``theta_star`` fixes the planted vector; otherwise a random one with
    ``theta_sparsity`` nonzeros (dense if omitted) is scaled to gauge
    ``theta_scale`` inside the constraint set.
    """

    sigma_w: float = Field(0.0, ge=0)
    theta_star: Optional[List[float]] = None
    theta_sparsity: Optional[int] = Field(None, ge=1)
    theta_scale: float = Field(0.9, gt=0, le=1)


class ConstantsModel(_Strict):
    c_alpha: float = Field(2.0, gt=0)
    c_m: float = Field(1.0, gt=0)
    r_cap: int = Field(10 ** 6, ge=1)
    r: Optional[int] = Field(None, ge=1)
    r_exact: int = Field(1000, ge=1)
    step: Literal["auto", "bound", "smooth"] = "auto"
    m: Optional[int] = Field(None, ge=1)
    m_max: Optional[int] = Field(None, ge=1)
    W: Optional[float] = Field(None, gt=0)
    width_samples: int = Field(20000, ge=100)
    lift_every: int = Field(1, ge=1)
    tau: Optional[int] = Field(None, ge=1)
    tau_policy: Literal["convex", "strongly_convex", "low_width"] = "convex"
    loss: Literal["squared", "logistic", "hinge"] = "squared"
    ridge: float = Field(0.0, ge=0)
    batch_iterations: int = Field(300, ge=1)


class ExperimentConfig(_Strict):
    schema_version: Literal[1] = SCHEMA_VERSION
    algorithm: Algorithm = "priv_inc_reg"
    T: int = Field(..., ge=1)
    d: int = Field(..., ge=1)
    epsilon: float = Field(1.0, gt=0)
    delta: float = Field(1e-5, gt=0, lt=1)
    beta: float = Field(0.05, gt=0, lt=1)
    constraint: ConstraintModel = Field(default_factory=ConstraintModel)
    domain: DomainModel = Field(default_factory=DomainModel)
    generator: GeneratorModel = Field(default_factory=GeneratorModel)
    seeds: List[int] = Field(default_factory=lambda: [0], min_length=1)
    constants: ConstantsModel = Field(default_factory=ConstantsModel)
    noise_disabled: bool = False
    oracle_stride: Optional[int] = Field(None, ge=1)
    record_theta: bool = False

    @model_validator(mode="after")
    def _check(self):
        th = self.generator.theta_star
        if th is not None and len(th) != self.d:
            raise ValueError(f"theta_star has length {len(th)}, expected d={self.d}")
        if self.algorithm == "proj_priv_inc_reg" and self.constraint.kind.lower() == "simplex":
            raise ValueError("proj_priv_inc_reg needs a symmetric constraint set")
        return self


# service payloads

class SessionCreate(_Strict):
    algorithm: Literal["priv_inc_reg", "proj_priv_inc_reg"] = "priv_inc_reg"
    T: int = Field(..., ge=1)
    d: int = Field(..., ge=1)
    epsilon: float = Field(1.0, gt=0)
    delta: float = Field(1e-5, gt=0, lt=1)
    beta: float = Field(0.05, gt=0, lt=1)
    seed: int = 0
    constraint: ConstraintModel = Field(default_factory=ConstraintModel)
    domain: DomainModel = Field(default_factory=DomainModel)
    constants: ConstantsModel = Field(default_factory=ConstantsModel)


class SessionInfo(BaseModel):
    session_id: str
    algorithm: str
    T: int
    d: int
    t: int
    params: Dict[str, float]


class PointIn(_Strict):
    x: List[float]
    y: float


class EstimateOut(BaseModel):
    t: int
    theta: List[float]
    remaining: int


class LedgerOut(BaseModel):
    mode: str
    noise_free: bool
    epsilon: Optional[float]
    delta: float
    interactions: List[Dict[str, object]]


class RunRequest(_Strict):
    config: ExperimentConfig
    seed: Optional[int] = None
    i_understand_this_is_not_private: bool = False


class RunResponse(BaseModel):
    csv: str
    summary: Dict[str, object]


class Health(BaseModel):
    status: str = "ok"
    version: str
