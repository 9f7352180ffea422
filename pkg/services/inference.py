"""Asymptotic laws of the empirical transport cost, W_p and the potentials."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from config.settings import MASTER_SEED, REPLICATE_WORKERS, RESTRICTED_EIGEN_FLOOR
from lib.transport.costs import CostFunction
from lib.transport.exceptions import (
    AssumptionViolationError,
    DeltaMethodInapplicableError,
    InvalidArgumentError,
    SingularHessianError,
)
from lib.transport.measures import ContinuousMeasure
from lib.transport.seeding import SeedPurpose, derive_rng
from services.discrete_transport import (
    DualOptimalFace,
    TransportPlanLP,
    extract_dual_face,
    face_point,
    is_singleton,
    sup_over_opt,
)
from services.semidiscrete_solver import SolveReport, restricted_eigh

logger = logging.getLogger(__name__)

GAUSSIAN = "gaussian"
SUP_OF_GAUSSIAN = "sup_of_gaussian"
SUP_ABS_GAUSSIAN = "sup_abs_gaussian"
DRAW_CHUNK = 10_000


@dataclass(frozen=True, eq=False)
class MultinomialCovariance:
    """Sigma(p) = diag(p) - p p^T, the covariance of sqrt(n)(p_hat - p)."""
    p: np.ndarray
    matrix: np.ndarray

    def sample(self, draws: int, rng: np.random.Generator) -> np.ndarray:
        """(draws, m) rows from N(0, Sigma(p)): W ~ N(0, diag p), then W - p (1^T W)."""
        W = rng.standard_normal((int(draws), self.p.size)) * np.sqrt(self.p)[None, :]
        return W - W.sum(axis=1, keepdims=True) * self.p[None, :]


@dataclass(frozen=True, eq=False)
class PotentialsCovariance:
    """Sigma(z~) = H^+ A H^+ on <1>^perp."""
    matrix: np.ndarray
    A: np.ndarray

    def contrast_variance(self, i: int, j: int) -> float:
        """Asymptotic variance of z_j - z_i."""
        v = np.zeros(self.matrix.shape[0])
        v[i], v[j] = -1.0, 1.0
        return float(v @ self.matrix @ v)

    def sample(self, draws: int, rng: np.random.Generator) -> np.ndarray:
        eigenvalues, vectors = np.linalg.eigh(0.5 * (self.matrix + self.matrix.T))
        root = vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))[None, :]
        return rng.standard_normal((int(draws), self.matrix.shape[0])) @ root.T


@dataclass(eq=False)
class LimitLaw:
    """Weak limit of a sqrt(n) fluctuation.

    A gaussian law stores its variance on the final scale; the sup kinds
    multiply every draw by scale_factor.
    """
    kind: str
    variance: float = 0.0
    face: Optional[DualOptimalFace] = None
    cov: Optional[MultinomialCovariance] = None
    abs_cov: Optional[PotentialsCovariance] = None
    scale_factor: float = 1.0
    plug_in: bool = False

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, SUP_OF_GAUSSIAN, SUP_ABS_GAUSSIAN):
            raise InvalidArgumentError("kind", self.kind)
        if self.variance < 0:
            raise InvalidArgumentError("variance", self.variance, reason="variance must be nonnegative")
        if not self.scale_factor > 0:
            raise InvalidArgumentError("scale_factor", self.scale_factor, reason="scale factor must be positive")

    def draw(self, draws: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == GAUSSIAN:
            return np.sqrt(self.variance) * rng.standard_normal(int(draws))
        if self.kind == SUP_OF_GAUSSIAN:
            X = self.cov.sample(draws, rng)
            return self.scale_factor * np.array([sup_over_opt(self.face, x) for x in X])
        N = self.abs_cov.sample(draws, rng)
        return self.scale_factor * np.max(np.abs(N), axis=1)

    def to_dict(self) -> dict:
        data = {"kind": self.kind, "scale_factor": self.scale_factor, "plug_in": self.plug_in}
        if self.kind == GAUSSIAN:
            data["variance"] = self.variance
        if self.face is not None:
            data["face"] = self.face.to_dict()
        if self.cov is not None:
            data["cov"] = self.cov.matrix.tolist()
        if self.abs_cov is not None:
            data["cov"] = self.abs_cov.matrix.tolist()
        return data


def sigma_p(p) -> MultinomialCovariance:
    p = np.asarray(p, dtype=float).ravel()
    return MultinomialCovariance(p=p, matrix=np.diag(p) - np.outer(p, p))


def asymptotic_variance_cost(z, p) -> float:
    """sigma^2(P, z) = z^T Sigma(p) z, computed as sum_i p_i (z_i - z_bar)^2."""
    z = np.asarray(z, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    centered = z - z @ p
    return float(p @ (centered * centered))


def hadamard_derivative(z_or_face: Union[np.ndarray, DualOptimalFace, list], p, q_direction) -> float:
    """Directional derivative of Gamma at p: sum_i (z_i - sum_j z_j p_j) q_i.

    With a face, the sup over it of the same expression, taken as one LP on
    the centered direction q - (sum q) p.
    """
    p = np.asarray(p, dtype=float).ravel()
    q = np.asarray(q_direction, dtype=float).ravel()
    if isinstance(z_or_face, DualOptimalFace):
        return sup_over_opt(z_or_face, q - q.sum() * p)
    z = np.asarray(z_or_face, dtype=float).ravel()
    return float((z - z @ p) @ q)


def uniqueness_gaps(c: CostFunction, Q: ContinuousMeasure) -> list[str]:
    """Names of the missing preconditions for a unique potential."""
    missing = c.flags.missing_for_uniqueness()
    if not Q.connected_support:
        missing.append("connected support")
    if not Q.has_density:
        missing.append("density")
    return missing


def regularity_gaps(c: CostFunction, Q: ContinuousMeasure) -> list[str]:
    """Missing (Reg), (Twist), (QC), (Hol), (PW) for the potentials limit."""
    missing = [name.upper() for name in ("reg", "twist", "qc") if not getattr(c.flags, name).holds]
    if not Q.holder_density:
        missing.append("HOL")
    if not Q.poincare_wirtinger:
        missing.append("PW")
    return missing


def cost_limit_law(solution: Union[SolveReport, TransportPlanLP, DualOptimalFace], p, mode: str = "auto",
                   c: CostFunction = None, Q: ContinuousMeasure = None, plug_in: bool = False) -> LimitLaw:
    """Limit of sqrt(n)(T(P_n, Q) - T(P, Q)).

    Gaussian with variance sigma^2(P, z) when the potential is unique, the
    sup over the dual-optimal face of sum_i u_i X_i otherwise.

    Raises:
        AssumptionViolationError: If unique mode is requested without its preconditions
    """
    p = np.asarray(p, dtype=float).ravel()
    if mode not in ("auto", "unique", "face"):
        raise InvalidArgumentError("mode", mode, reason="auto, unique or face")
    if p.size == 1:
        return LimitLaw(GAUSSIAN, variance=0.0, plug_in=plug_in)

    if isinstance(solution, SolveReport):
        if mode == "face":
            raise InvalidArgumentError("mode", mode, reason="face mode needs a discrete LP solution")
        missing = uniqueness_gaps(c, Q) if c is not None and Q is not None else ["cost and measure metadata"]
        if missing:
            logger.error(f"Gaussian cost limit requested without {missing}")
            raise AssumptionViolationError(missing)
        return LimitLaw(GAUSSIAN, variance=asymptotic_variance_cost(solution.potentials.values, p),
                        plug_in=plug_in)

    face = extract_dual_face(solution) if isinstance(solution, TransportPlanLP) else solution
    if mode == "unique":
        if not is_singleton(face):
            logger.error("Gaussian cost limit requested for a non-singleton dual face")
            raise AssumptionViolationError(["unique dual optimum"])
        u = solution.dual_u if isinstance(solution, TransportPlanLP) else None
        if u is None:
            u = face_point(face, np.zeros(face.m))
        return LimitLaw(GAUSSIAN, variance=asymptotic_variance_cost(u, p), plug_in=plug_in)
    return LimitLaw(SUP_OF_GAUSSIAN, face=face, cov=sigma_p(p), plug_in=plug_in)


def wp_limit_law(cost_law: LimitLaw, p_exponent: float, T_value: float) -> LimitLaw:
    """Delta method for W_p = T^{1/p}: scale by 1 / (p T^{(p-1)/p}).

    Raises:
        DeltaMethodInapplicableError: If T_value <= 0
    """
    if not p_exponent >= 1:
        raise InvalidArgumentError("p_exponent", p_exponent, reason="W_p needs p >= 1")
    if not T_value > 0:
        logger.error(f"W_p delta method at T={T_value}")
        raise DeltaMethodInapplicableError(T_value)
    factor = 1.0 / (p_exponent * T_value ** ((p_exponent - 1.0) / p_exponent))
    if cost_law.kind == GAUSSIAN:
        return LimitLaw(GAUSSIAN, variance=cost_law.variance * factor ** 2,
                        scale_factor=cost_law.scale_factor * factor, plug_in=cost_law.plug_in)
    return LimitLaw(cost_law.kind, face=cost_law.face, cov=cost_law.cov, abs_cov=cost_law.abs_cov,
                    scale_factor=cost_law.scale_factor * factor, plug_in=cost_law.plug_in)


def gradient_outer_A(p, cell_probs=None) -> np.ndarray:
    """A = sum_k Q(A_k) g_k g_k^T with g_k = e_k - p, the gradient of g(x_k, .) in z."""
    p = np.asarray(p, dtype=float).ravel()
    w = p if cell_probs is None else np.asarray(cell_probs, dtype=float).ravel()
    eye = np.eye(p.size)
    A = np.zeros((p.size, p.size))
    for k in range(p.size):
        g = eye[k] - p
        A += w[k] * np.outer(g, g)
    return A


def potentials_covariance(hessian, p, cell_probs=None) -> PotentialsCovariance:
    """Sigma(z~) = H^+ A H^+ with H^+ the pseudo-inverse of H on <1>^perp.

    Raises:
        SingularHessianError: If a restricted eigenvalue exceeds the floor
    """
    H = np.asarray(hessian, dtype=float)
    m = H.shape[0]
    A = gradient_outer_A(p, cell_probs)
    if m == 1:
        return PotentialsCovariance(matrix=np.zeros((1, 1)), A=A)
    eigenvalues, vectors, _ = restricted_eigh(0.5 * (H + H.T))
    top = float(eigenvalues.max())
    if top > RESTRICTED_EIGEN_FLOOR:
        logger.error(f"Restricted Hessian not negative definite: top eigenvalue {top:.3e}")
        raise SingularHessianError(top, RESTRICTED_EIGEN_FLOOR)
    H_pinv = (vectors / eigenvalues[None, :]) @ vectors.T
    matrix = H_pinv @ A @ H_pinv
    return PotentialsCovariance(matrix=0.5 * (matrix + matrix.T), A=A)


def potentials_contrast_law(cov: PotentialsCovariance, i: int, j: int, plug_in: bool = False) -> LimitLaw:
    """Gaussian limit of sqrt(n)((z_hat_j - z_hat_i) - (z_j - z_i))."""
    return LimitLaw(GAUSSIAN, variance=max(cov.contrast_variance(i, j), 0.0), plug_in=plug_in)


def sup_norm_potential_law(cov: PotentialsCovariance, plug_in: bool = False) -> LimitLaw:
    """Law of max_i |N_i| with N ~ N(0, Sigma(z~))."""
    return LimitLaw(SUP_ABS_GAUSSIAN, abs_cov=cov, plug_in=plug_in)


def simulate_limit(law: LimitLaw, draws: int, seed: int = MASTER_SEED,
                   workers: int = REPLICATE_WORKERS) -> np.ndarray:
    """i.i.d. draws from law.

    Chunk k of DRAW_CHUNK draws uses the stream (seed, LAW_DRAWS, k), so the
    sample does not depend on the worker count.
    """
    if draws < 1:
        raise InvalidArgumentError("draws", draws, reason="need at least one draw")
    sizes = [min(DRAW_CHUNK, draws - start) for start in range(0, draws, DRAW_CHUNK)]

    def run(chunk: int) -> np.ndarray:
        return law.draw(sizes[chunk], derive_rng(seed, SeedPurpose.LAW_DRAWS, chunk))

    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, range(len(sizes))))
    else:
        parts = [run(k) for k in range(len(sizes))]
    sample = np.concatenate(parts)
    logger.debug(f"Simulated {draws} draws from {law.kind} law")
    return sample
