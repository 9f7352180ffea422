import logging
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from config.settings import QUAD_CELLS, QUAD_ORDER, QUAD_PANELS_1D
from lib.transport.exceptions import (
    InvalidArgumentError,
    IntegrationFailureError,
    UnsupportedBackendError,
)
from lib.transport.seeding import SeedPurpose, derive_rng

logger = logging.getLogger(__name__)

WEIGHT_SUM_TOL = 1e-12

# Integrands take an (N, d) array of points and return N values.
Integrand = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finitely supported measure P = sum_k p_k delta_{x_k}."""
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        # a flat list of scalars is a 1D support
        points = points.reshape(-1, 1) if points.ndim == 1 else np.atleast_2d(points)
        weights = np.asarray(self.weights, dtype=float).ravel()

        if points.shape[0] < 1:
            raise InvalidArgumentError("points", reason="at least one atom is required")
        if weights.shape[0] != points.shape[0]:
            raise InvalidArgumentError(
                "weights", len(weights), reason=f"expected {points.shape[0]} weights"
            )
        if not np.all(np.isfinite(points)):
            raise InvalidArgumentError("points", reason="support points must be finite")
        if np.any(weights <= 0):
            raise InvalidArgumentError("weights", weights.tolist(), reason="weights must be strictly positive")
        if abs(weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise InvalidArgumentError("weights", float(weights.sum()), reason="weights must sum to 1")
        if points.shape[0] > 1:
            gaps = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
            gaps[np.diag_indices_from(gaps)] = np.inf
            if gaps.min() <= 0:
                raise InvalidArgumentError("points", reason="support points must be pairwise distinct")

        points.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dimension(self) -> int:
        return self.points.shape[1]

    def with_weights(self, weights) -> 'DiscreteMeasure':
        """Same support, new weights (validated)."""
        return DiscreteMeasure(points=self.points, weights=weights)

    def is_sorted_1d(self) -> bool:
        return self.dimension == 1 and bool(np.all(np.diff(self.points[:, 0]) > 0))

    def to_description(self) -> dict:
        return {"type": "discrete", "points": self.points.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True, eq=False)
class EmpiricalWeights:
    """Atom counts of an i.i.d. sample of size n drawn from P."""
    counts: np.ndarray
    n: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64).ravel()
        if np.any(counts < 0):
            raise InvalidArgumentError("counts", counts.tolist(), reason="counts must be nonnegative")
        if int(counts.sum()) != int(self.n):
            raise InvalidArgumentError("n", self.n, reason=f"counts sum to {int(counts.sum())}")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.n

    @property
    def exact_frequencies(self) -> list[Fraction]:
        return [Fraction(int(c), int(self.n)) for c in self.counts]

    @property
    def has_empty_atom(self) -> bool:
        return bool(np.any(self.counts == 0))


@dataclass(frozen=True, eq=False)
class QuadratureScheme:
    """Deterministic nodes and weights; integrates sum_i w_i f(y_i) q(y_i)."""
    nodes: np.ndarray
    weights: np.ndarray
    degree: int  # exact for polynomials up to this degree on each cell
    tolerance: float = 1e-12


@dataclass(frozen=True, eq=False)
class MonotoneMap:
    """Coordinatewise increasing C^1 map used to push measures forward."""
    name: str
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    derivative: Callable[[np.ndarray], np.ndarray]
    domain: tuple[float, float] = (-np.inf, np.inf)
    holder_density: bool = True  # pushed uniform density stays bounded and Hoelder


def _smoothstep_inverse(y):
    y = np.clip(y, 0.0, 1.0)
    return 0.5 - np.sin(np.arcsin(1.0 - 2.0 * y) / 3.0)


NAMED_MAPS: dict[str, MonotoneMap] = {
    "identity": MonotoneMap("identity", lambda u: u, lambda y: y, lambda u: np.ones_like(u)),
    "square": MonotoneMap("square", lambda u: u ** 2, lambda y: np.sqrt(np.maximum(y, 0.0)),
                          lambda u: 2.0 * u, (0.0, np.inf), holder_density=False),
    "sqrt": MonotoneMap("sqrt", lambda u: np.sqrt(np.maximum(u, 0.0)), lambda y: y ** 2,
                        lambda u: 0.5 / np.sqrt(u), (0.0, np.inf)),
    "smoothstep": MonotoneMap("smoothstep", lambda u: 3.0 * u ** 2 - 2.0 * u ** 3, _smoothstep_inverse,
                              lambda u: 6.0 * u * (1.0 - u), (0.0, 1.0), holder_density=False),
}


@dataclass(eq=False)
class ContinuousMeasure:
    """Reference measure Q seen through sampling, quadrature, density and 1D cdf/quantile.

    Callables are vectorized: `sampler(rng, n)` returns (n, d) points,
    `density` maps (N, d) points to N values, and `cdf`/`quantile` act
    elementwise on arrays (1D only).
    """
    dimension: int
    lo: np.ndarray
    hi: np.ndarray
    sampler: Callable[[np.random.Generator, int], np.ndarray]
    density: Optional[Callable[[np.ndarray], np.ndarray]] = None
    quadrature: Optional[QuadratureScheme] = None
    cdf: Optional[Callable[[np.ndarray], np.ndarray]] = None
    quantile: Optional[Callable[[np.ndarray], np.ndarray]] = None
    connected_support: bool = True
    holder_density: bool = False  # (Hol), declared by construction
    poincare_wirtinger: bool = False  # (PW), declared by construction
    description: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != (self.dimension,) or self.hi.shape != (self.dimension,):
            raise InvalidArgumentError("support", reason=f"bounds must have dimension {self.dimension}")
        if np.any(self.hi <= self.lo):
            raise InvalidArgumentError("support", reason="empty support box")
        if self.dimension != 1 and (self.cdf is not None or self.quantile is not None):
            raise InvalidArgumentError("cdf", reason="cdf/quantile are defined in 1D only")

    @property
    def has_density(self) -> bool:
        return self.density is not None

    @property
    def has_quantile(self) -> bool:
        return self.dimension == 1 and self.quantile is not None and self.cdf is not None

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        points = np.asarray(self.sampler(rng, n), dtype=float)
        return points.reshape(n, self.dimension)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lo) & (points <= self.hi), axis=1)


def gauss_legendre_panels(a: float, b: float, panels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre nodes/weights on [a, b] with equal panels."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def tensor_gauss_legendre(lo, hi, cells: int, order: int) -> QuadratureScheme:
    """Tensor-product composite Gauss-Legendre scheme on a box."""
    axes = [gauss_legendre_panels(a, b, cells, order) for a, b in zip(lo, hi)]
    grids = np.meshgrid(*[nodes for nodes, _ in axes], indexing="ij")
    wgrids = np.meshgrid(*[weights for _, weights in axes], indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return QuadratureScheme(nodes=nodes, weights=weights, degree=2 * order - 1)


def uniform_box(lo, hi, cells: int = QUAD_CELLS, order: int = QUAD_ORDER) -> ContinuousMeasure:
    """Uniform probability on the box [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    dimension = lo.shape[0]
    volume = float(np.prod(hi - lo))

    def sampler(rng, n):
        return lo + (hi - lo) * rng.random((n, dimension))

    def density(points):
        points = np.atleast_2d(points)
        inside = np.all((points >= lo) & (points <= hi), axis=1)
        return inside / volume

    cdf = quantile = None
    if dimension == 1:
        a, b = float(lo[0]), float(hi[0])
        cdf = lambda y: np.clip((np.asarray(y, dtype=float) - a) / (b - a), 0.0, 1.0)
        quantile = lambda u: a + (b - a) * np.asarray(u, dtype=float)

    return ContinuousMeasure(
        dimension=dimension, lo=lo, hi=hi, sampler=sampler, density=density,
        quadrature=tensor_gauss_legendre(lo, hi, cells, order), cdf=cdf, quantile=quantile,
        connected_support=True, holder_density=True, poincare_wirtinger=True,
        description={"type": "uniform_box", "lo": lo.tolist(), "hi": hi.tolist(),
                     "cells": cells, "order": order},
    )


def pushforward(base: ContinuousMeasure, map_name: str) -> ContinuousMeasure:
    """Push base forward through a named coordinatewise monotone map.

    Raises:
        InvalidArgumentError: If the map is unknown or the base support leaves its domain
    """
    if map_name not in NAMED_MAPS:
        raise InvalidArgumentError("map", map_name, reason=f"known maps: {sorted(NAMED_MAPS)}")
    tmap = NAMED_MAPS[map_name]
    if np.any(base.lo < tmap.domain[0]) or np.any(base.hi > tmap.domain[1]):
        raise InvalidArgumentError("map", map_name, reason=f"base support outside domain {tmap.domain}")

    def sampler(rng, n):
        return tmap.forward(base.sample(n, rng))

    density = None
    if base.density is not None:
        def density(points):
            points = np.atleast_2d(points)
            u = tmap.inverse(points)
            with np.errstate(divide="ignore", invalid="ignore"):
                jac = np.prod(tmap.derivative(u), axis=1)
                values = base.density(u) / jac
            return np.where(np.isfinite(values), values, 0.0)

    quadrature = None
    if base.quadrature is not None:
        u = base.quadrature.nodes
        quadrature = QuadratureScheme(
            nodes=tmap.forward(u),
            weights=base.quadrature.weights * np.prod(tmap.derivative(u), axis=1),
            degree=base.quadrature.degree,
            tolerance=max(base.quadrature.tolerance, 1e-10),
        )

    cdf = quantile = None
    if base.has_quantile:
        cdf = lambda y: base.cdf(tmap.inverse(np.asarray(y, dtype=float)))
        quantile = lambda v: tmap.forward(base.quantile(np.asarray(v, dtype=float)))

    return ContinuousMeasure(
        dimension=base.dimension, lo=tmap.forward(base.lo), hi=tmap.forward(base.hi),
        sampler=sampler, density=density, quadrature=quadrature, cdf=cdf, quantile=quantile,
        connected_support=base.connected_support,
        holder_density=base.holder_density and tmap.holder_density,
        poincare_wirtinger=base.poincare_wirtinger,
        description={"type": "pushforward", "base": base.description, "map": map_name},
    )


def sample_discrete(P: DiscreteMeasure, n: int, seed: int) -> EmpiricalWeights:
    """Draw atom counts of an i.i.d. sample of size n from P.

    Args:
        P: Discrete measure to sample from
        n: Sample size
        seed: Master seed; the multinomial stream is derived from it

    Returns:
        EmpiricalWeights with Multinomial(n, p) counts

    Raises:
        InvalidArgumentError: If n < 1
    """
    if n < 1:
        raise InvalidArgumentError("n", n, reason="sample size must be at least 1")
    rng = derive_rng(seed, SeedPurpose.SAMPLE_DISCRETE)
    counts = rng.multinomial(int(n), P.weights)
    return EmpiricalWeights(counts=counts, n=int(n))


def _evaluate_integrand(f: Integrand, points: np.ndarray) -> np.ndarray:
    values = np.asarray(f(points), dtype=float)
    values = np.broadcast_to(values, (points.shape[0],)) if values.ndim == 0 else values.ravel()
    bad = ~np.isfinite(values)
    if np.any(bad):
        index = int(np.argmax(bad))
        logger.error(f"Non-finite integrand value at point {points[index].tolist()}")
        raise IntegrationFailureError(point=points[index], value=float(values[index]))
    return values


def mc_integrate(Q: ContinuousMeasure, f: Integrand, N: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of the integral of f against Q.

    The reduction is numpy's pairwise summation over the draws in sampling
    order, so the result is bit-stable for a given seed.

    Returns:
        (value, std_error) with std_error = sample standard deviation / sqrt(N)

    Raises:
        InvalidArgumentError: If N < 2
        IntegrationFailureError: If f is not finite at a sampled point
    """
    if N < 2:
        raise InvalidArgumentError("N", N, reason="need at least two draws")
    rng = derive_rng(seed, SeedPurpose.MC_INTEGRATION)
    points = Q.sample(int(N), rng)
    values = _evaluate_integrand(f, points)
    value = float(values.sum() / N)
    std_error = float(np.std(values, ddof=1) / np.sqrt(N))
    return value, std_error


def quad_integrate(Q: ContinuousMeasure, f: Integrand) -> float:
    """Deterministic integral sum_i w_i f(y_i) q(y_i) over Q's quadrature nodes.

    Raises:
        UnsupportedBackendError: If Q lacks a density or a quadrature scheme
        IntegrationFailureError: If f is not finite at a node
    """
    if Q.quadrature is None or Q.density is None:
        raise UnsupportedBackendError("quadrature", reason="measure has no density/quadrature scheme")
    nodes = Q.quadrature.nodes
    values = _evaluate_integrand(f, nodes)
    return float(np.sum(Q.quadrature.weights * values * Q.density(nodes)))


def quantile_integrate(Q: ContinuousMeasure, g: Integrand, u0: float, u1: float,
                       panels: int = QUAD_PANELS_1D, order: int = QUAD_ORDER * 2) -> float:
    """Integral of g over the Q-mass between quantile levels u0 < u1 (1D).

    Uses the substitution y = F^{-1}(u), so no density is required.
    """
    if not Q.has_quantile:
        raise UnsupportedBackendError("quadrature", reason="1D integration needs cdf/quantile")
    if u1 <= u0:
        return 0.0
    u, w = gauss_legendre_panels(u0, u1, panels, order)
    points = np.asarray(Q.quantile(u), dtype=float).reshape(-1, 1)
    return float(np.sum(w * _evaluate_integrand(g, points)))


def measure_from_description(description) -> 'DiscreteMeasure | ContinuousMeasure':
    """Build a measure from its JSON description (dict or validated schema model).

    Raises:
        InvalidArgumentError: If the measure type is unknown
    """
    if hasattr(description, "model_dump"):
        description = description.model_dump()
    kind = description.get("type")
    if kind == "discrete":
        return DiscreteMeasure(points=description["points"], weights=description["weights"])
    if kind == "uniform_box":
        return uniform_box(description["lo"], description["hi"],
                           cells=description.get("cells", QUAD_CELLS), order=description.get("order", QUAD_ORDER))
    if kind == "pushforward":
        base = measure_from_description(description["base"])
        if not isinstance(base, ContinuousMeasure):
            raise InvalidArgumentError("base", base.to_description(), reason="pushforward needs a continuous base")
        return pushforward(base, description["map"])
    raise InvalidArgumentError("type", kind, reason="known measures: discrete, uniform_box, pushforward")
