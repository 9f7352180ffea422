"""Semidiscrete dual functional M(z, p), its derivatives, and its maximization.

M(z, p) = sum_k p_k z_k / |p|_1 + integral of min_i {c(y, x_i) - z_i} dQ(y)

Potentials are optimized in the sum-zero gauge. Cell indices are 0-based and
ties in the min go to the lowest index.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from config.settings import (
    BREAKPOINT_GRID,
    MASTER_SEED,
    MC_SAMPLES,
    NEWTON_EIGEN_CEILING,
    QUAD_CELLS,
    QUAD_ORDER,
    QUAD_PANELS_1D,
    SolverConfig,
)
from lib.transport.costs import CostFunction
from lib.transport.exceptions import (
    HessianDegenerateError,
    IntegrabilityViolationError,
    IntegrationFailureError,
    InvalidArgumentError,
    NoConvergenceError,
    UnsupportedBackendError,
)
from lib.transport.measures import (
    ContinuousMeasure,
    DiscreteMeasure,
    gauss_legendre_panels,
    quantile_integrate,
)
from lib.transport.seeding import SeedPurpose, derive_rng

logger = logging.getLogger(__name__)

GAUGES = ("sum-zero", "first-zero", "raw")
SUM_ZERO_TOL = 1e-10
BREAKPOINT_NOISE = 1e-12
SLICE_ORDER = 8  # Gauss-Legendre nodes per cell interval on a line
_ROOT_RTOL = 4 * np.finfo(float).eps


def sum_zero_tolerance(values) -> float:
    """|sum z| allowed in the sum-zero gauge: 1e-10, widened to rounding at large |z|."""
    values = np.asarray(values, dtype=float)
    scale = float(np.max(np.abs(values))) if values.size else 0.0
    return max(SUM_ZERO_TOL, 4.0 * values.size * np.finfo(float).eps * scale)


@dataclass(frozen=True, eq=False)
class PotentialVector:
    """Dual vector z with an explicit gauge."""
    values: np.ndarray
    gauge: str = "sum-zero"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel().copy()
        if self.gauge not in GAUGES:
            raise InvalidArgumentError("gauge", self.gauge, reason=f"known gauges: {GAUGES}")
        if self.gauge == "sum-zero" and abs(math.fsum(values)) >= sum_zero_tolerance(values):
            raise InvalidArgumentError("values", values.tolist(), reason="sum-zero gauge violated")
        if self.gauge == "first-zero" and values[0] != 0.0:
            raise InvalidArgumentError("values", values.tolist(), reason="first-zero gauge violated")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def in_gauge(cls, values, gauge: str = "sum-zero") -> 'PotentialVector':
        values = np.asarray(values, dtype=float).ravel()
        if gauge == "sum-zero":
            values = values - values.mean()
            if values.size:
                # fold the rounding residue into the largest entry
                k = int(np.argmax(np.abs(values)))
                values[k] -= math.fsum(values)
        elif gauge == "first-zero":
            values = values - values[0]
        return cls(values=values, gauge=gauge)

    def regauge(self, gauge: str) -> 'PotentialVector':
        return PotentialVector.in_gauge(self.values, gauge)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "gauge": self.gauge}


@dataclass(eq=False)
class SolveReport:
    potentials: PotentialVector
    cost: float
    cell_probs: np.ndarray
    grad_norm: float
    hessian: Optional[np.ndarray]
    iterations: int
    backend: str
    integration_noise: float
    newton_steps: int = 0
    tolerance: float = 0.0
    stalled: bool = False

    def to_dict(self) -> dict:
        return {
            "potentials": self.potentials.to_dict(),
            "cost": self.cost,
            "cell_probs": np.asarray(self.cell_probs).tolist(),
            "grad_norm": self.grad_norm,
            "hessian": None if self.hessian is None else np.asarray(self.hessian).tolist(),
            "iterations": self.iterations,
            "newton_steps": self.newton_steps,
            "backend": self.backend,
            "integration_noise": self.integration_noise,
            "tolerance": self.tolerance,
            "stalled": self.stalled,
        }


# --- integration backends ---------------------------------------------------

class WeightedPointBackend:
    """A fixed weighted point set: one MC sample per solve, or tensor quadrature nodes.

    The (N, m) cost matrix is computed once; every z only shifts its columns.
    """

    def __init__(self, name: str, points: np.ndarray, weights: Optional[np.ndarray],
                 X: np.ndarray, c: CostFunction, slab_noise: float = 0.0):
        self.name = name
        self.points = points
        self.weights = weights  # None -> plain average (Monte Carlo)
        self.costs = np.asarray(c.pairwise(points, X), dtype=float)
        bad = ~np.all(np.isfinite(self.costs), axis=1)
        if np.any(bad):
            index = int(np.argmax(bad))
            logger.error(f"Non-finite cost at integration point {points[index].tolist()}")
            raise IntegrationFailureError(point=points[index])
        self.slab_noise = slab_noise
        self.m = X.shape[0]

    def evaluate(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        shifted = self.costs - z[None, :]
        labels = np.argmin(shifted, axis=1)
        mins = shifted[np.arange(shifted.shape[0]), labels]
        if self.weights is None:
            n = shifted.shape[0]
            return float(mins.sum() / n), np.bincount(labels, minlength=self.m) / n
        return float(np.sum(self.weights * mins)), np.bincount(labels, weights=self.weights, minlength=self.m)

    def atom_integrals(self) -> np.ndarray:
        if self.weights is None:
            return self.costs.sum(axis=0) / self.costs.shape[0]
        return self.weights @ self.costs

    def noise(self, probs: np.ndarray) -> float:
        if self.weights is None:
            n = self.costs.shape[0]
            return float(np.max(np.sqrt(probs * (1.0 - probs) / n)))
        return self.slab_noise


class BreakpointBackend:
    """1D integration on exact cell boundaries.

    Cell boundaries are located on a coarse grid of quantile levels and
    refined by root finding; each cell piece is then integrated in u-space
    through the quantile function, so cell masses are differences of levels.
    """
    name = "quadrature"

    def __init__(self, X: np.ndarray, c: CostFunction, Q: ContinuousMeasure, grid: int = BREAKPOINT_GRID):
        if not Q.has_quantile:
            raise UnsupportedBackendError("quadrature", reason="1D breakpoint integration needs cdf/quantile")
        self.X = X
        self.c = c
        self.Q = Q
        self.m = X.shape[0]
        self.u_grid = np.linspace(0.0, 1.0, grid)
        self.grid_costs = c.pairwise(self._points(self.u_grid), X)
        # power costs have a kink at the atom itself
        if Q.cdf is not None:
            levels = np.asarray(Q.cdf(X[:, 0]), dtype=float)
            self.kinks = np.sort(levels[(levels > 0.0) & (levels < 1.0)])
        else:
            self.kinks = np.empty(0)

    def _points(self, u) -> np.ndarray:
        return np.asarray(self.Q.quantile(np.atleast_1d(u)), dtype=float).reshape(-1, 1)

    def _shifted(self, u: float, z: np.ndarray) -> np.ndarray:
        return self.c.pairwise(self._points(u), self.X)[0] - z

    def _split(self, ua: float, ub: float, la: int, lb: int, z: np.ndarray, out: list, depth: int = 0):
        def gap(u):
            values = self._shifted(u, z)
            return values[la] - values[lb]

        try:
            root = brentq(gap, ua, ub, xtol=1e-15, rtol=_ROOT_RTOL)
        except ValueError:
            root = 0.5 * (ua + ub)
        values = self._shifted(root, z)
        k = int(np.argmin(values))
        if k not in (la, lb) and values[k] < values[la] - 1e-14 and depth < self.m:
            # a third cell hides between two grid points
            self._split(ua, root, la, k, z, out, depth + 1)
            self._split(root, ub, k, lb, z, out, depth + 1)
        else:
            out.append((root, la, lb))

    def pieces(self, z: np.ndarray) -> list[tuple[float, float, int]]:
        """Consecutive (u0, u1, label) pieces covering [0, 1]."""
        labels = np.argmin(self.grid_costs - z[None, :], axis=1)
        boundaries = []
        for j in np.flatnonzero(labels[1:] != labels[:-1]):
            self._split(self.u_grid[j], self.u_grid[j + 1], int(labels[j]), int(labels[j + 1]), z, boundaries)
        boundaries.sort(key=lambda b: b[0])

        pieces, start, label = [], 0.0, int(labels[0])
        for root, _, right in boundaries:
            if root > start:
                pieces.append((start, root, label))
            start, label = root, right
        pieces.append((start, 1.0, label))
        return pieces

    def boundaries(self, z: np.ndarray) -> list[tuple[float, int, int]]:
        """(u, left label, right label) at every cell interface."""
        pieces = self.pieces(z)
        return [(a[1], a[2], b[2]) for a, b in zip(pieces[:-1], pieces[1:]) if a[2] != b[2]]

    def atom_cost_integral(self, k: int, u0: float, u1: float) -> float:
        atom = self.X[k:k + 1]
        edges = [u0, *[u for u in self.kinks if u0 < u < u1], u1]
        return sum(
            quantile_integrate(self.Q, lambda Y: self.c.pairwise(Y, atom)[:, 0], a, b,
                               panels=QUAD_PANELS_1D, order=QUAD_ORDER * 2)
            for a, b in zip(edges[:-1], edges[1:])
        )

    def evaluate(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        probs = np.zeros(self.m)
        integral = 0.0
        for u0, u1, k in self.pieces(z):
            probs[k] += u1 - u0
            integral += self.atom_cost_integral(k, u0, u1) - z[k] * (u1 - u0)
        return float(integral), probs

    def atom_integrals(self) -> np.ndarray:
        return np.array([self.atom_cost_integral(k, 0.0, 1.0) for k in range(self.m)])

    def noise(self, probs: np.ndarray) -> float:
        return BREAKPOINT_NOISE


class SliceBackend:
    """2D quadratic-cost integration on exact cell intervals along parallel lines.

    Lines y = s * u + t * v are placed at composite Gauss-Legendre nodes in s.
    A Laguerre cell of the quadratic cost meets each line in an interval cut
    out by linear inequalities in t, and each interval is integrated by
    Gauss-Legendre in t. The line direction v is chosen so that no cell
    boundary runs parallel to it, which keeps every cell mass continuous in z.
    """
    name = "quadrature"

    def __init__(self, X: np.ndarray, c: CostFunction, Q: ContinuousMeasure,
                 cells: int = QUAD_CELLS, order: int = QUAD_ORDER):
        if Q.dimension != 2 or not c.is_quadratic or not Q.has_density:
            raise UnsupportedBackendError(
                "quadrature", reason="line integration needs d = 2, quadratic cost and a density")
        self.X = X
        self.Q = Q
        self.m = X.shape[0]
        self.sq = np.sum(X * X, axis=1)
        self.v = line_direction(X)
        self.u = np.array([self.v[1], -self.v[0]])

        corners = np.array([[a, b] for a in (Q.lo[0], Q.hi[0]) for b in (Q.lo[1], Q.hi[1])])
        edges = np.unique(np.round(corners @ self.u, 14))
        nodes, weights = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            panels = max(1, int(round(cells * (b - a) / (edges[-1] - edges[0]))))
            s, ws = gauss_legendre_panels(a, b, panels, order)
            nodes.append(s)
            weights.append(ws)
        self.s, self.ws = np.concatenate(nodes), np.concatenate(weights)
        self.t_nodes, self.t_weights = np.polynomial.legendre.leggauss(SLICE_ORDER)

        # box clipping of every line
        self.t_lo = np.full(self.s.size, -np.inf)
        self.t_hi = np.full(self.s.size, np.inf)
        for axis in range(2):
            if abs(self.v[axis]) < 1e-15:
                continue
            a = (Q.lo[axis] - self.s * self.u[axis]) / self.v[axis]
            b = (Q.hi[axis] - self.s * self.u[axis]) / self.v[axis]
            self.t_lo = np.maximum(self.t_lo, np.minimum(a, b))
            self.t_hi = np.minimum(self.t_hi, np.maximum(a, b))
        self.t_hi = np.maximum(self.t_hi, self.t_lo)

    def intervals(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(S, m) arrays of interval ends in t; empty intervals have t0 == t1."""
        t0 = np.repeat(self.t_lo[:, None], self.m, axis=1)
        t1 = np.repeat(self.t_hi[:, None], self.m, axis=1)
        for k in range(self.m):
            for j in range(self.m):
                if j == k:
                    continue
                # cell k lies where a * t <= b against atom j
                d = self.X[j] - self.X[k]
                a = 2.0 * float(d @ self.v)
                b = self.sq[j] - self.sq[k] + z[k] - z[j] - 2.0 * float(d @ self.u) * self.s
                if a > 0:
                    t1[:, k] = np.minimum(t1[:, k], b / a)
                elif a < 0:
                    t0[:, k] = np.maximum(t0[:, k], b / a)
                else:
                    lost = b <= 0 if j < k else b < 0
                    t1[lost, k] = -np.inf
        t0 = np.minimum(t0, self.t_hi[:, None])
        return t0, np.maximum(t1, t0)

    def _integrate(self, t0: np.ndarray, t1: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        half = 0.5 * (t1 - t0)
        t = (0.5 * (t0 + t1))[..., None] + half[..., None] * self.t_nodes
        s = np.broadcast_to(self.s[:, None, None], t.shape)
        y0 = s * self.u[0] + t * self.v[0]
        y1 = s * self.u[1] + t * self.v[1]
        density = self.Q.density(np.stack([y0.ravel(), y1.ravel()], axis=1)).reshape(t.shape)
        w = self.ws[:, None, None] * half[..., None] * self.t_weights * density
        cost = (y0 - self.X[None, :, 0, None]) ** 2 + (y1 - self.X[None, :, 1, None]) ** 2
        return w.sum(axis=(0, 2)), np.sum(w * cost, axis=(0, 2))

    def evaluate(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        probs, integrals = self._integrate(*self.intervals(z))
        return float(integrals.sum() - probs @ z), probs

    def atom_integrals(self) -> np.ndarray:
        t0 = np.repeat(self.t_lo[:, None], self.m, axis=1)
        t1 = np.repeat(self.t_hi[:, None], self.m, axis=1)
        return self._integrate(t0, t1)[1]

    def noise(self, probs: np.ndarray) -> float:
        # total-mass defect of the line rule
        return max(abs(float(np.sum(probs)) - 1.0), BREAKPOINT_NOISE)


def line_direction(X: np.ndarray, candidates: int = 64) -> np.ndarray:
    """Unit direction not orthogonal to any atom difference, axes first."""
    diffs = (X[None, :, :] - X[:, None, :])[np.triu_indices(X.shape[0], k=1)]
    if diffs.size == 0:
        return np.array([0.0, 1.0])
    diffs = diffs / np.linalg.norm(diffs, axis=1, keepdims=True)
    angles = np.concatenate([[np.pi / 2, 0.0], np.pi * (np.arange(candidates) + 0.5) / candidates])
    directions = np.column_stack([np.cos(angles), np.sin(angles)])
    directions[:2] = [[0.0, 1.0], [1.0, 0.0]]
    spread = np.min(np.abs(directions @ diffs.T), axis=1)
    for k in range(2):
        if spread[k] > 1e-6:
            return directions[k]
    return directions[int(np.argmax(spread))]


def make_backend(backend: str, X: np.ndarray, c: CostFunction, Q: ContinuousMeasure,
                 seed: int = MASTER_SEED, mc_samples: int = None):
    """Build the integration backend named by `backend`.

    Raises:
        UnsupportedBackendError: If Q cannot serve the backend
    """
    if backend == "mc":
        n = int(mc_samples or MC_SAMPLES)
        points = Q.sample(n, derive_rng(seed, SeedPurpose.MC_INTEGRATION))
        return WeightedPointBackend("mc", points, None, X, c)
    if backend in ("quadrature", "exact1d"):
        if Q.dimension == 1 and Q.has_quantile:
            return BreakpointBackend(X, c, Q)
        if Q.dimension == 2 and c.is_quadratic and Q.has_density:
            return SliceBackend(X, c, Q)
        if Q.quadrature is None or Q.density is None:
            raise UnsupportedBackendError(backend, reason="measure has no density/quadrature scheme")
        nodes = Q.quadrature.nodes
        weights = Q.quadrature.weights * Q.density(nodes)
        # mass of a one-node-thick slab along a cell boundary
        slab = float(weights.max() * nodes.shape[0] ** ((Q.dimension - 1) / Q.dimension))
        return WeightedPointBackend("quadrature", nodes, weights, X, c, slab_noise=slab)
    raise UnsupportedBackendError(backend, reason="known backends: mc, quadrature, exact1d")


# --- dual objective ---------------------------------------------------------

def _normalized(p) -> np.ndarray:
    p = np.asarray(p, dtype=float).ravel()
    if np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise InvalidArgumentError("p", p.tolist(), reason="weights must lie in the open positive hyperoctant")
    return p / p.sum()


class DualObjective:
    """M(., p) for fixed P support, cost and Q, with a cached integration backend."""

    def __init__(self, P: DiscreteMeasure, c: CostFunction, Q: ContinuousMeasure,
                 backend: str = "quadrature", seed: int = MASTER_SEED, mc_samples: int = None):
        if P.dimension != Q.dimension:
            raise InvalidArgumentError("Q", Q.dimension, reason=f"dimension must match P ({P.dimension})")
        self.P = P
        self.c = c
        self.Q = Q
        self.X = P.points
        self.m = P.m
        self.backend = make_backend(backend, self.X, c, Q, seed=seed, mc_samples=mc_samples)

    def _check_z(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).ravel()
        if z.shape != (self.m,):
            raise InvalidArgumentError("z", z.shape, reason=f"expected {self.m} potentials")
        return z

    def evaluate(self, z, p=None) -> tuple[float, np.ndarray, np.ndarray]:
        """(M(z, p), gradient in z, cell probabilities)."""
        z = self._check_z(z)
        weights = self.P.weights if p is None else _normalized(p)
        integral, probs = self.backend.evaluate(z)
        return float(weights @ z + integral), weights - probs, probs

    def value(self, z, p=None) -> float:
        return self.evaluate(z, p)[0]

    def gradient(self, z, p=None) -> np.ndarray:
        return self.evaluate(z, p)[1]

    def atom_integrals(self) -> np.ndarray:
        """integral of c(., x_i) dQ for every atom."""
        return self.backend.atom_integrals()

    def noise(self, probs) -> float:
        return self.backend.noise(np.asarray(probs))

    def hessian(self, z, method: str = None, h: float = 1e-3, floor: float = 1e-9) -> np.ndarray:
        """D^2_z M at z by central differences or by interface integrals.

        Raises:
            HessianDegenerateError: If some cell has probability below floor
            UnsupportedBackendError: If the interface method is unavailable
        """
        z = self._check_z(z)
        _, _, probs = self.evaluate(z)
        small = np.flatnonzero(probs < floor)
        if small.size:
            k = int(small[0])
            logger.warning(f"Cell {k} has probability {probs[k]:.3e}; Hessian not reliable")
            raise HessianDegenerateError(k, float(probs[k]), floor)

        method = method or default_hessian_method(self.c, self.Q)
        if method == "fd-gradient":
            H = np.empty((self.m, self.m))
            for j in range(self.m):
                step = np.zeros(self.m)
                step[j] = h
                H[:, j] = (self.gradient(z + step) - self.gradient(z - step)) / (2.0 * h)
            return 0.5 * (H + H.T)
        if method != "interface-quadrature":
            raise InvalidArgumentError("method", method, reason="fd-gradient or interface-quadrature")

        if self.Q.dimension == 1:
            weights = self._interfaces_1d(z)
        elif self.Q.dimension == 2 and self.c.is_quadratic:
            weights = self._interfaces_2d(z)
        else:
            raise UnsupportedBackendError(
                "interface-quadrature", reason="needs d = 1, or d = 2 with quadratic cost")
        H = weights + weights.T
        H[np.diag_indices_from(H)] = -H.sum(axis=1)
        return H

    def _interfaces_1d(self, z: np.ndarray) -> np.ndarray:
        if not self.c.has_grad_y or not self.Q.has_density:
            raise UnsupportedBackendError("interface-quadrature", reason="needs a cost gradient and a density")
        geometry = self.backend if isinstance(self.backend, BreakpointBackend) else BreakpointBackend(
            self.X, self.c, self.Q)
        W = np.zeros((self.m, self.m))
        for u, left, right in geometry.boundaries(z):
            y = geometry._points(u)
            grads = self.c.pairwise_grad_y(y, self.X)[0]
            gap = float(np.linalg.norm(grads[left] - grads[right]))
            W[min(left, right), max(left, right)] += float(self.Q.density(y)[0]) / gap
        return W

    def _interfaces_2d(self, z: np.ndarray) -> np.ndarray:
        if not self.Q.has_density:
            raise UnsupportedBackendError("interface-quadrature", reason="needs a density")
        X, lo, hi = self.X, self.Q.lo, self.Q.hi
        sq = np.sum(X * X, axis=1)
        W = np.zeros((self.m, self.m))
        for i in range(self.m):
            for j in range(i + 1, self.m):
                normal = 2.0 * (X[j] - X[i])
                offset = sq[j] - sq[i] + z[i] - z[j]
                origin = normal * offset / (normal @ normal)
                direction = np.array([-normal[1], normal[0]]) / np.linalg.norm(normal)

                t_lo, t_hi = -np.inf, np.inf
                for axis in range(2):
                    if abs(direction[axis]) < 1e-15:
                        if not lo[axis] <= origin[axis] <= hi[axis]:
                            t_lo, t_hi = 1.0, 0.0
                        continue
                    a = (lo[axis] - origin[axis]) / direction[axis]
                    b = (hi[axis] - origin[axis]) / direction[axis]
                    t_lo, t_hi = max(t_lo, min(a, b)), min(t_hi, max(a, b))
                # the other cells cut the bisector down to the shared edge
                for k in range(self.m):
                    if k in (i, j):
                        continue
                    a_vec = 2.0 * (X[k] - X[i])
                    bound = sq[k] - sq[i] + z[i] - z[k] - a_vec @ origin
                    slope = a_vec @ direction
                    if abs(slope) < 1e-15:
                        if bound < 0:
                            t_lo, t_hi = 1.0, 0.0
                    elif slope > 0:
                        t_hi = min(t_hi, bound / slope)
                    else:
                        t_lo = max(t_lo, bound / slope)
                if not t_hi > t_lo:
                    continue

                t, w = gauss_legendre_panels(t_lo, t_hi, QUAD_PANELS_1D, QUAD_ORDER * 2)
                points = origin[None, :] + t[:, None] * direction[None, :]
                W[i, j] = float(np.sum(w * self.Q.density(points))) / np.linalg.norm(normal)
        return W


def default_hessian_method(c: CostFunction, Q: ContinuousMeasure) -> str:
    if Q.dimension == 1 and Q.has_quantile and Q.has_density and c.has_grad_y:
        return "interface-quadrature"
    if Q.dimension == 2 and c.is_quadratic and Q.has_density:
        return "interface-quadrature"
    return "fd-gradient"


# --- public operations ------------------------------------------------------

def eval_M(z, P: DiscreteMeasure, c: CostFunction, Q: ContinuousMeasure,
           backend: str = "quadrature", seed: int = MASTER_SEED, p=None, mc_samples: int = None) -> float:
    """Dual functional M(z, p); p defaults to P's weights and may be unnormalized."""
    return DualObjective(P, c, Q, backend, seed, mc_samples).value(z, p)


def grad_M_z(z, P: DiscreteMeasure, c: CostFunction, Q: ContinuousMeasure,
             backend: str = "quadrature", seed: int = MASTER_SEED, p=None, mc_samples: int = None) -> np.ndarray:
    """Component k is p_k / |p|_1 - Q(A_k(z)); components sum to zero."""
    return DualObjective(P, c, Q, backend, seed, mc_samples).gradient(z, p)


def grad_M_p(z, p) -> np.ndarray:
    """Gradient of M in p over the open hyperoctant: (z_i |p| - sum_j z_j p_j) / |p|^2."""
    z = np.asarray(z, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    total = p.sum()
    return (z * total - z @ p) / total ** 2


def c_transform(y, z, c: CostFunction, P: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
    """phi(y) = min_i {c(y, x_i) - z_i} and the attaining index, for (N, d) points."""
    y = np.asarray(y, dtype=float)
    y = y.reshape(-1, P.dimension)
    shifted = c.pairwise(y, P.points) - np.asarray(z, dtype=float)[None, :]
    labels = np.argmin(shifted, axis=1)
    return shifted[np.arange(y.shape[0]), labels], labels


def cell_assign(y, z, c: CostFunction, P: DiscreteMeasure) -> int:
    """Index of the Laguerre cell containing y (lowest index on ties)."""
    return int(c_transform(np.atleast_1d(np.asarray(y, dtype=float)), z, c, P)[1][0])


def sup_potential_deviation(z_hat, z, c: CostFunction, P: DiscreteMeasure, grid) -> dict:
    """Sup over grid of |phi_hat - phi| next to the atom-wise sup max_i |z_hat_i - z_i|.

    The grid sup never exceeds the atom sup.
    """
    phi_hat, _ = c_transform(grid, z_hat, c, P)
    phi, _ = c_transform(grid, z, c, P)
    diff = np.asarray(z_hat, dtype=float) - np.asarray(z, dtype=float)
    return {"grid_sup": float(np.max(np.abs(phi_hat - phi))), "atom_sup": float(np.max(np.abs(diff)))}


def hessian_M_z(z, P: DiscreteMeasure, c: CostFunction, Q: ContinuousMeasure, method: str = None,
                h: float = 1e-3, seed: int = MASTER_SEED, backend: str = "quadrature",
                floor: float = 1e-9, mc_samples: int = None) -> np.ndarray:
    return DualObjective(P, c, Q, backend, seed, mc_samples).hessian(z, method=method, h=h, floor=floor)


def restricted_eigh(H) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Eigen-decomposition of H restricted to <1>^perp.

    Returns:
        (eigenvalues, eigenvectors in R^m, basis) where basis has orthonormal
        columns spanning <1>^perp
    """
    H = np.asarray(H, dtype=float)
    m = H.shape[0]
    if m == 1:
        return np.empty(0), np.empty((1, 0)), np.empty((1, 0))
    frame = np.column_stack([np.ones(m), np.eye(m)[:, :m - 1]])
    basis = np.linalg.qr(frame)[0][:, 1:]
    eigenvalues, vectors = np.linalg.eigh(basis.T @ H @ basis)
    return eigenvalues, basis @ vectors, basis


def restricted_pinv(H) -> tuple[np.ndarray, float]:
    """Pseudo-inverse of H on <1>^perp and its largest restricted eigenvalue."""
    eigenvalues, vectors, _ = restricted_eigh(H)
    m = np.asarray(H).shape[0]
    if eigenvalues.size == 0:
        return np.zeros((m, m)), -np.inf
    return (vectors / eigenvalues[None, :]) @ vectors.T, float(eigenvalues.max())


def level_set_bounds(alpha: float, K: float, p) -> tuple[float, float]:
    """Box containing {z : M(z, p) >= alpha} in the gauge z_1 = 0.

    K is max_i of the integral of c(., x_i) dQ; assumes c >= 0.
    """
    p = _normalized(p)
    upper = (K - alpha) / p[0]
    lower = (alpha - K - max(upper, 0.0)) / p.min()
    return float(lower), float(upper)


def _initial_point(config: SolverConfig, m: int) -> np.ndarray:
    if config.warm_start is None:
        return np.zeros(m)
    z = np.asarray(config.warm_start, dtype=float).ravel()
    if z.shape != (m,):
        raise InvalidArgumentError("warm_start", z.shape, reason=f"expected {m} potentials")
    return z - z.mean()


def _fill_cell(objective: 'DualObjective', z: np.ndarray, k: int, target: float,
               doublings: int = 60, bisections: int = 40) -> float:
    """Shift tau for z_k that maximizes M along e_k: the smallest tau with Q(A_k) >= p_k.

    M is concave along e_k with slope p_k - Q(A_k), so the bracket [0, hi]
    only ever moves towards the line maximum.
    """
    def mass(tau: float) -> float:
        shifted = z.copy()
        shifted[k] += tau
        return float(objective.backend.evaluate(shifted)[1][k])

    lo, hi = 0.0, 1.0
    for _ in range(doublings):
        if mass(hi) >= target:
            break
        lo, hi = hi, 2.0 * hi
    else:
        logger.warning(f"Cell {k} could not be filled along its own coordinate")
        return 0.0
    for _ in range(bisections):
        mid = 0.5 * (lo + hi)
        if mass(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def solve_potentials(P: DiscreteMeasure, Q: ContinuousMeasure, c: CostFunction,
                     config: SolverConfig = None) -> SolveReport:
    """Maximize M(., p) over z.

    Cells holding at most eps_floor of Q's mass are first filled by exact
    line maximization along their own coordinate. Otherwise the ascent takes
    Armijo-backtracked gradient steps, switching to damped Newton on <1>^perp
    once every cell holds more than eps_floor. Steps leaving the level-set
    box of the starting value are rejected. A stalled line search is accepted
    when |grad| is within ten times the stopping threshold; the report then
    carries stalled=True and that relaxed tolerance.

    Raises:
        NoConvergenceError: If the iteration cap is hit
        IntegrabilityViolationError: If some atom integral is not finite
    """
    config = config or SolverConfig()
    if config.backend == "exact1d":
        return solve_exact_1d(P, Q, c, compute_hessian=config.compute_hessian)

    objective = DualObjective(P, c, Q, config.backend, config.seed, config.mc_samples)
    p = P.weights
    m = P.m
    eps_floor = config.eps_floor if config.eps_floor is not None else float(p.min()) / 2.0
    method = config.hessian_method or default_hessian_method(c, Q)

    try:
        atom_integrals = objective.atom_integrals()
    except IntegrationFailureError as e:
        raise IntegrabilityViolationError(-1) from e
    if not np.all(np.isfinite(atom_integrals)):
        index = int(np.argmax(~np.isfinite(atom_integrals)))
        logger.error(f"Cost integral against atom {index} is not finite")
        raise IntegrabilityViolationError(index, P.points[index], float(atom_integrals[index]))
    K = float(atom_integrals.max())

    z = _initial_point(config, m)
    value, grad, probs = objective.evaluate(z)
    lower, upper = level_set_bounds(value, K, p)
    logger.info(f"Solving semidiscrete dual: m={m}, d={P.dimension}, backend={objective.backend.name}, "
                f"hessian={method}")

    best_z, best_value = z.copy(), value
    newton_steps = 0
    threshold = config.tol
    stalled = False
    for iteration in range(config.max_iter + 1):
        noise = objective.noise(probs)
        threshold = max(config.tol, 3.0 * noise)
        grad_norm = float(np.linalg.norm(grad))
        logger.debug(f"iter {iteration}: M={value:.12g} |grad|={grad_norm:.3e} min cell={probs.min():.3e}")
        if grad_norm < threshold:
            break
        if iteration == config.max_iter:
            logger.error(f"Dual ascent stopped at the iteration cap with |grad|={grad_norm:.3e}")
            raise NoConvergenceError(iteration, grad_norm, best_iterate=(best_z - best_z.mean()).tolist(),
                                     best_value=best_value)

        undersized = np.flatnonzero(probs <= np.minimum(eps_floor, 0.5 * p))
        if m > 1 and undersized.size:
            logger.debug(f"Filling cells {undersized.tolist()} along their coordinates")
            for k in undersized:
                z[k] += _fill_cell(objective, z, int(k), float(p[k]))
            z = z - z.mean()
            value, grad, probs = objective.evaluate(z)
            if value > best_value:
                best_z, best_value = z.copy(), value
            continue

        direction, is_newton = grad * config.initial_step, False
        if m > 1 and probs.min() > eps_floor:
            try:
                H = objective.hessian(z, method=method, h=config.fd_step, floor=config.hessian_floor)
                H_pinv, top = restricted_pinv(H)
                if top <= NEWTON_EIGEN_CEILING:
                    direction, is_newton = -H_pinv @ grad, True
                else:
                    logger.warning(f"Restricted Hessian eigenvalue {top:.3e} too close to zero; gradient step")
            except HessianDegenerateError as e:
                logger.warning(f"{e}; falling back to a gradient step")

        slope = float(grad @ direction)
        step, accepted = 1.0, False
        for _ in range(config.max_halvings + 1):
            candidate = z + step * direction
            anchored = candidate - candidate[0]
            if anchored.min() >= lower and anchored.max() <= upper:
                new_value, new_grad, new_probs = objective.evaluate(candidate)
                if new_value >= value + config.armijo * step * slope:
                    accepted = True
                    break
            step *= 0.5
        if not accepted:
            logger.warning(f"Line search stalled at |grad|={grad_norm:.3e}")
            if grad_norm < 10.0 * threshold:
                threshold, stalled = 10.0 * threshold, True
                break
            raise NoConvergenceError(iteration, grad_norm, best_iterate=(best_z - best_z.mean()).tolist(),
                                     best_value=best_value)

        z = candidate - candidate.mean()
        value, grad, probs = new_value, new_grad, new_probs
        newton_steps += int(is_newton)
        if value > best_value:
            best_z, best_value = z.copy(), value

    hessian = None
    if config.compute_hessian and m > 1:
        try:
            hessian = objective.hessian(z, method=method, h=config.fd_step, floor=config.hessian_floor)
        except (HessianDegenerateError, UnsupportedBackendError) as e:
            logger.warning(f"No Hessian in report: {e}")

    report = SolveReport(
        potentials=PotentialVector.in_gauge(z), cost=value, cell_probs=probs,
        grad_norm=float(np.linalg.norm(grad)), hessian=hessian, iterations=iteration,
        backend=objective.backend.name, integration_noise=objective.noise(probs),
        newton_steps=newton_steps, tolerance=threshold, stalled=stalled,
    )
    logger.info(f"Solved in {iteration} iterations ({newton_steps} Newton): cost={report.cost:.10g}, "
                f"|grad|={report.grad_norm:.3e}")
    return report


def _check_oracle_inputs(P: DiscreteMeasure, Q: ContinuousMeasure, c: CostFunction):
    if P.dimension != 1 or Q.dimension != 1:
        raise InvalidArgumentError("dimension", P.dimension, reason="exact 1D solve needs d = 1")
    if not P.is_sorted_1d():
        raise InvalidArgumentError("points", P.points[:, 0].tolist(), reason="support must be sorted ascending")
    if c.exponent is None or not c.exponent > 1:
        raise InvalidArgumentError("cost", c.name, reason="exact 1D solve needs a strictly convex power cost")
    if not Q.has_quantile:
        raise UnsupportedBackendError("exact1d", reason="measure has no quantile function")


def solve_exact_1d(P: DiscreteMeasure, Q: ContinuousMeasure, c: CostFunction,
                   weights=None, compute_hessian: bool = True) -> SolveReport:
    """Closed-form 1D solve: cells are consecutive quantile intervals.

    Boundaries are b_k = F^{-1}(p_1 + ... + p_k); potentials follow the chain
    c(b_k, x_k) - z_k = c(b_k, x_{k+1}) - z_{k+1}. `weights` overrides P's
    weights and may contain zeros (empty cells).

    Raises:
        InvalidArgumentError: If the support is unsorted, d != 1 or the cost is not strictly convex
    """
    _check_oracle_inputs(P, Q, c)
    p = P.weights if weights is None else np.asarray(weights, dtype=float).ravel()
    if p.shape != (P.m,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise InvalidArgumentError("weights", np.asarray(p).tolist(), reason="need m nonnegative weights summing to 1")

    X = P.points
    levels = np.clip(np.cumsum(p)[:-1], 0.0, 1.0)
    b = np.asarray(Q.quantile(levels), dtype=float).reshape(-1, 1)
    z = np.zeros(P.m)
    if P.m > 1:
        costs = c.pairwise(b, X)  # (m-1, m)
        steps = costs[np.arange(P.m - 1), np.arange(1, P.m)] - costs[np.arange(P.m - 1), np.arange(P.m - 1)]
        z[1:] = np.cumsum(steps)

    geometry = BreakpointBackend(X, c, Q, grid=2)
    edges = np.concatenate([[0.0], levels, [1.0]])
    cost = sum(geometry.atom_cost_integral(k, edges[k], edges[k + 1])
               for k in range(P.m) if edges[k + 1] > edges[k])

    hessian = None
    if compute_hessian and P.m > 1:
        if Q.has_density and c.has_grad_y and np.all(p > 0):
            W = np.zeros((P.m, P.m))
            grads = c.pairwise_grad_y(b, X)  # (m-1, m, 1)
            density = Q.density(b)
            for k in range(P.m - 1):
                W[k, k + 1] = density[k] / np.linalg.norm(grads[k, k] - grads[k, k + 1])
            hessian = W + W.T
            hessian[np.diag_indices_from(hessian)] = -hessian.sum(axis=1)
        else:
            logger.debug("Exact 1D solve without Hessian: empty cell or no density")

    logger.debug(f"Exact 1D solve: boundaries={b[:, 0].tolist()}, cost={cost:.12g}")
    return SolveReport(
        potentials=PotentialVector.in_gauge(z), cost=float(cost), cell_probs=p.copy(),
        grad_norm=0.0, hessian=hessian, iterations=0, backend="exact-1d", integration_noise=0.0,
    )


def transport_value(p, P: DiscreteMeasure, Q: ContinuousMeasure, c: CostFunction,
                    config: SolverConfig = None) -> float:
    """Gamma(p) = sup_z M(z, p) for weights p in the open hyperoctant."""
    weights = _normalized(p)
    return solve_potentials(P.with_weights(weights), Q, c, config).cost
