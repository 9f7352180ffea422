import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from lib.transport.exceptions import (
    InvalidArgumentError,
    IntegrationFailureError,
    IntegrabilityViolationError,
)
from lib.transport.measures import ContinuousMeasure, DiscreteMeasure, mc_integrate

logger = logging.getLogger(__name__)

DECLARED = "declared-by-construction"
UNCHECKED = "unchecked"


@dataclass(frozen=True)
class AssumptionFlag:
    holds: bool
    basis: str = UNCHECKED

    def to_dict(self) -> dict:
        return {"holds": self.holds, "basis": self.basis}


@dataclass(frozen=True)
class AssumptionFlags:
    """Regularity assumptions on the cost, each tagged with how it is known.

    a1: strict convexity of h, a2: cone condition, a3: superlinearity at 0
    (these give uniqueness of the potentials); reg, twist, qc: the
    conditions under which M is twice differentiable in z.
    """
    a1: AssumptionFlag = field(default_factory=lambda: AssumptionFlag(False))
    a2: AssumptionFlag = field(default_factory=lambda: AssumptionFlag(False))
    a3: AssumptionFlag = field(default_factory=lambda: AssumptionFlag(False))
    reg: AssumptionFlag = field(default_factory=lambda: AssumptionFlag(False))
    twist: AssumptionFlag = field(default_factory=lambda: AssumptionFlag(False))
    qc: AssumptionFlag = field(default_factory=lambda: AssumptionFlag(False))

    @property
    def uniqueness(self) -> bool:
        return self.a1.holds and self.a2.holds and self.a3.holds

    def missing_for_uniqueness(self) -> list[str]:
        return [name.upper() for name in ("a1", "a2", "a3") if not getattr(self, name).holds]

    def to_dict(self) -> dict:
        return {name: getattr(self, name).to_dict() for name in ("a1", "a2", "a3", "reg", "twist", "qc")}


@dataclass(frozen=True, eq=False)
class CostFunction:
    """Cost c(x, y) given by its pairwise form.

    `pairwise(Y, X)` returns the (N, m) matrix c(x_i, y_n) for points Y of
    shape (N, d) and atoms X of shape (m, d); `pairwise_grad_y(Y, X)` returns
    the (N, m, d) array of y-gradients.
    """
    name: str
    pairwise: Callable[[np.ndarray, np.ndarray], np.ndarray]
    pairwise_grad_y: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None
    flags: AssumptionFlags = field(default_factory=AssumptionFlags)
    exponent: Optional[float] = None

    @property
    def has_grad_y(self) -> bool:
        return self.pairwise_grad_y is not None

    @property
    def is_quadratic(self) -> bool:
        return self.exponent == 2.0

    def eval(self, x, y) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return float(self.pairwise(y[None, :], x[None, :])[0, 0])

    def grad_y(self, x, y) -> np.ndarray:
        if self.pairwise_grad_y is None:
            raise InvalidArgumentError("grad_y", self.name, reason="cost has no y-gradient")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.pairwise_grad_y(y[None, :], x[None, :])[0, 0]

    def to_description(self) -> dict:
        if self.exponent is not None:
            return {"cost": "power", "exponent": self.exponent}
        return {"cost": self.name}


def power_cost(p: float) -> CostFunction:
    """Power cost c(x, y) = |x - y|^p with the Euclidean norm.

    Raises:
        InvalidArgumentError: If p <= 0
    """
    if not p > 0:
        raise InvalidArgumentError("exponent", p, reason="power cost needs p > 0")
    p = float(p)

    def pairwise(Y, X):
        diff = Y[:, None, :] - X[None, :, :]
        # squared norm first so that p = 2 is exact
        return np.sum(diff * diff, axis=-1) ** (p / 2.0)

    def pairwise_grad_y(Y, X):
        diff = Y[:, None, :] - X[None, :, :]
        sq = np.sum(diff * diff, axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = p * sq ** ((p - 2.0) / 2.0)
        scale = np.where(sq > 0, scale, 0.0)
        return scale[..., None] * diff

    strict = p > 1
    quadratic = p == 2.0
    flags = AssumptionFlags(
        a1=AssumptionFlag(strict, DECLARED),
        a2=AssumptionFlag(strict, DECLARED if strict else UNCHECKED),
        a3=AssumptionFlag(strict, DECLARED),
        reg=AssumptionFlag(quadratic, DECLARED if quadratic else UNCHECKED),
        twist=AssumptionFlag(quadratic, DECLARED if quadratic else UNCHECKED),
        qc=AssumptionFlag(quadratic, DECLARED if quadratic else UNCHECKED),
    )
    return CostFunction(
        name=f"power-{p:g}",
        pairwise=pairwise,
        pairwise_grad_y=pairwise_grad_y if p >= 1 else None,
        flags=flags,
        exponent=p,
    )


def zero_cost() -> CostFunction:
    return CostFunction(name="zero", pairwise=lambda Y, X: np.zeros((Y.shape[0], X.shape[0])),
                        pairwise_grad_y=lambda Y, X: np.zeros((Y.shape[0], X.shape[0], Y.shape[1])))


def cost_from_description(description: dict) -> CostFunction:
    """Build a cost from {"cost": "power", "exponent": p}."""
    kind = description.get("cost", "power")
    if kind == "power":
        return power_cost(float(description.get("exponent", 2.0)))
    if kind == "zero":
        return zero_cost()
    raise InvalidArgumentError("cost", kind, reason="supported costs: power, zero")


def cost_matrix(c: CostFunction, P: DiscreteMeasure, targets: np.ndarray) -> np.ndarray:
    """(m, l) matrix c(x_i, y_j) between P's atoms and target points."""
    targets = np.asarray(targets, dtype=float)
    targets = targets.reshape(-1, 1) if targets.ndim == 1 else targets
    return c.pairwise(targets, P.points).T


def check_integrability(c: CostFunction, P: DiscreteMeasure, Q: ContinuousMeasure,
                        N: int, seed: int) -> list[float]:
    """Monte Carlo estimates of the integral of c(., x_i) against Q for every atom.

    All atoms share one seeded sample.

    Raises:
        IntegrabilityViolationError: If some estimate or its std error is not finite
    """
    estimates = []
    for i, atom in enumerate(P.points):
        try:
            value, std_error = mc_integrate(Q, lambda Y: c.pairwise(Y, atom[None, :])[:, 0], N, seed)
        except IntegrationFailureError as e:
            logger.error(f"Cost integrand not finite for atom {i}: {e}")
            raise IntegrabilityViolationError(i, atom) from e
        if not (np.isfinite(value) and np.isfinite(std_error)):
            logger.error(f"Non-finite integrability estimate for atom {i}: {value} +/- {std_error}")
            raise IntegrabilityViolationError(i, atom, value)
        logger.debug(f"Integral of c(., x_{i}) ~ {value:.6g} +/- {std_error:.2g}")
        estimates.append(value)
    return estimates
