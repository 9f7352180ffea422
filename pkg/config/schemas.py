"""Validated JSON descriptions for measures, costs, solves and experiments."""
import logging
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import (
    LAW_DRAWS,
    MASTER_SEED,
    MC_SAMPLES,
    QUAD_CELLS,
    QUAD_ORDER,
    REPLICATE_WORKERS,
    SOLVER_MAX_ITER,
    SOLVER_TOL,
)
from lib.transport.exceptions import ConfigError

logger = logging.getLogger(__name__)

Backend = Literal["mc", "quadrature", "exact1d"]
Statistic = Literal["cost", "wp", "potentials", "sup_norm_potentials"]


class UniformBoxSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["uniform_box"] = "uniform_box"
    lo: list[float]
    hi: list[float]
    cells: int = Field(QUAD_CELLS, ge=1)
    order: int = Field(QUAD_ORDER, ge=1)

    @model_validator(mode="after")
    def check_box(self):
        if len(self.lo) != len(self.hi) or not self.lo:
            raise ValueError("lo and hi must be nonempty and of equal length")
        if any(b <= a for a, b in zip(self.lo, self.hi)):
            raise ValueError("hi must exceed lo in every coordinate")
        return self


class DiscreteSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["discrete"] = "discrete"
    points: list[Union[float, list[float]]]
    weights: list[float]

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.points) != len(self.weights):
            raise ValueError("points and weights must have equal length")
        return self


class PushforwardSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    type: Literal["pushforward"] = "pushforward"
    base: "MeasureSpec"
    map: str


MeasureSpec = Annotated[Union[UniformBoxSpec, DiscreteSpec, PushforwardSpec], Field(discriminator="type")]
PushforwardSpec.model_rebuild()


class CostSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    cost: Literal["power", "zero"] = "power"
    exponent: float = Field(2.0, gt=0)


class SolverSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    backend: Optional[Backend] = None
    tol: float = Field(SOLVER_TOL, gt=0)
    max_iter: int = Field(SOLVER_MAX_ITER, ge=1)
    mc_samples: int = Field(MC_SAMPLES, ge=2)
    seed: int = MASTER_SEED
    hessian_method: Optional[Literal["fd-gradient", "interface-quadrature"]] = None


class InferenceSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    mode: Literal["auto", "unique", "face"] = "auto"
    statistic: Statistic = "cost"
    draws: int = Field(LAW_DRAWS, ge=1)
    plug_in: bool = False


class SolveSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    P: DiscreteSpec
    Q: MeasureSpec
    cost: CostSpec = Field(default_factory=CostSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    inference: InferenceSpec = Field(default_factory=InferenceSpec)


class DiscreteProblemSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    p: Optional[list[float]] = None
    q: Optional[list[float]] = None
    cost_matrix: Optional[list[list[float]]] = None
    cost_matrix_csv: Optional[str] = None
    P: Optional[DiscreteSpec] = None
    Q: Optional[DiscreteSpec] = None
    cost: CostSpec = Field(default_factory=CostSpec)
    inference: InferenceSpec = Field(default_factory=lambda: InferenceSpec(mode="face"))

    @model_validator(mode="after")
    def check_source(self):
        explicit = self.p is not None and self.q is not None
        has_matrix = self.cost_matrix is not None or self.cost_matrix_csv is not None
        if explicit and has_matrix:
            return self
        if self.P is not None and self.Q is not None:
            return self
        raise ValueError("give either p, q and a cost matrix, or discrete measures P and Q")


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str = "experiment"
    P: DiscreteSpec
    Q: MeasureSpec
    cost: CostSpec = Field(default_factory=CostSpec)
    n: int = Field(ge=1)
    replicates: int = Field(ge=2)
    master_seed: int = MASTER_SEED
    statistic: Statistic = "cost"
    backend: Optional[Backend] = None
    mode: Literal["auto", "unique", "face"] = "auto"
    law_draws: int = Field(LAW_DRAWS, ge=1)
    workers: int = Field(REPLICATE_WORKERS, ge=1)
    contrast: Optional[tuple[int, int]] = None
    ks_threshold: float = Field(0.05, gt=0, le=1)
    variance_tolerance: float = Field(0.15, gt=0)
    mean_tolerance: Optional[float] = Field(None, gt=0)
    out_dir: str = "reports"
    format: Literal["json", "csv"] = "json"
    solver: SolverSpec = Field(default_factory=SolverSpec)

    @field_validator("contrast")
    @classmethod
    def check_contrast(cls, value):
        if value is not None and value[0] == value[1]:
            raise ValueError("contrast needs two distinct atom indices")
        return value


def parse_model(model_cls, payload: dict, path: str = None):
    """Validate a payload, mapping pydantic errors onto ConfigError."""
    try:
        return model_cls.model_validate(payload)
    except ValidationError as e:
        first = e.errors()[0]
        field = ".".join(str(part) for part in first.get("loc", ()))
        logger.error(f"Invalid {model_cls.__name__}: {e}")
        raise ConfigError(first.get("msg", "validation failed"), path=path, field=field or None)
