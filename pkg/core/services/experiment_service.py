import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import ks_2samp

from config.schemas import ExperimentConfig
from config.settings import KS_ALPHA_COEFF, SolverConfig, experiment_defaults
from lib.transport.costs import cost_from_description, cost_matrix
from lib.transport.exceptions import ExperimentFailedError, InvalidArgumentError, TransportError
from lib.transport.measures import DiscreteMeasure, measure_from_description, sample_discrete
from lib.transport.seeding import SeedPurpose, derive_int_seed
from services.discrete_transport import EXACT_MAX_CELLS, exact_transport_value, solve_discrete
from services.inference import (
    GAUSSIAN,
    SUP_OF_GAUSSIAN,
    LimitLaw,
    cost_limit_law,
    potentials_contrast_law,
    potentials_covariance,
    regularity_gaps,
    simulate_limit,
    sup_norm_potential_law,
    wp_limit_law,
)
from services.semidiscrete_solver import solve_exact_1d, solve_potentials
from utils.data_processor import DataProcessor

logger = logging.getLogger(__name__)

# one LP per draw makes sup-of-Gaussian laws far slower to sample
SUP_OF_GAUSSIAN_MAX_DRAWS = 10_000
NONNEGATIVE_TOL = 1e-9
EXACT_AGREEMENT_TOL = 1e-12


@dataclass(eq=False)
class ExperimentReport:
    name: str
    config: dict
    statistic: str
    truth: dict
    law: LimitLaw
    replicate_statistics: list
    failed: list
    metrics: dict
    law_draws: int
    law_sample: np.ndarray = field(default_factory=lambda: np.empty(0))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "config": self.config,
            "statistic": self.statistic,
            "truth": self.truth,
            "law": self.law.to_dict(),
            "replicate_statistics": list(self.replicate_statistics),
            "failed": self.failed,
            "metrics": self.metrics,
            "law_draws": self.law_draws,
        }


def ks_statistic(sample_a, sample_b) -> float:
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    a = np.asarray(sample_a, dtype=float).ravel()
    b = np.asarray(sample_b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("sample", reason="both samples must be nonempty")
    return float(ks_2samp(a, b).statistic)


def ks_critical_value(n1: int, n2: int, coeff: float = KS_ALPHA_COEFF) -> float:
    """Large-sample two-sample KS critical value coeff * sqrt(1/n1 + 1/n2)."""
    return float(coeff * np.sqrt(1.0 / n1 + 1.0 / n2))


class ExperimentService:
    """Runs one replication experiment.

    Truth values are computed once from the true measures; every replicate
    draws its own multinomial sample from a seed derived from
    (master_seed, replicate index), re-solves and records its sqrt(n)
    fluctuation. The limit law is only used after all replicates are in.
    """

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.P = measure_from_description(cfg.P)
        self.Q = measure_from_description(cfg.Q)
        self.c = cost_from_description(cfg.cost.model_dump())
        if not isinstance(self.P, DiscreteMeasure):
            raise InvalidArgumentError("P", reason="P must be discrete")
        self.discrete = isinstance(self.Q, DiscreteMeasure)
        if self.discrete and cfg.statistic in ("potentials", "sup_norm_potentials"):
            raise InvalidArgumentError("statistic", cfg.statistic, reason="potential statistics need a continuous Q")
        self.backend = "lp" if self.discrete else (cfg.backend or self._default_backend())
        self.contrast = tuple(cfg.contrast) if cfg.contrast is not None else (0, min(1, self.P.m - 1))
        self.truth = None
        self.truth_cost = None
        self.truth_potentials = None
        self._C = None

    def _default_backend(self) -> str:
        oracle_ready = (self.P.dimension == 1 and self.Q.has_quantile and self.P.is_sorted_1d()
                        and self.c.exponent is not None and self.c.exponent > 1)
        return "exact1d" if oracle_ready else "quadrature"

    def _solver_config(self, warm_start=None, compute_hessian: bool = False) -> SolverConfig:
        spec = self.cfg.solver
        return SolverConfig(
            backend=self.backend, tol=spec.tol, max_iter=spec.max_iter, mc_samples=spec.mc_samples,
            seed=spec.seed, hessian_method=spec.hessian_method, compute_hessian=compute_hessian,
            warm_start=None if warm_start is None else list(warm_start),
        )

    def prepare_truth(self):
        """Solve the true problem once; fixes T and the true potentials."""
        if self.discrete:
            self._C = cost_matrix(self.c, self.P, self.Q.points)
            self.truth = solve_discrete(self.P.weights, self.Q.weights, self._C)
            self.truth_cost = self.truth.primal_value
            self.truth_potentials = self.truth.dual_u
            if self._C.size <= EXACT_MAX_CELLS:
                self.check_truth_exactly()
        else:
            self.truth = solve_potentials(self.P, self.Q, self.c, self._solver_config(compute_hessian=True))
            self.truth_cost = self.truth.cost
            self.truth_potentials = np.asarray(self.truth.potentials.values)
        logger.info(f"Truth for '{self.cfg.name}': T={self.truth_cost:.10g} (backend {self.backend})")

    def check_truth_exactly(self) -> float:
        """Deviation of the LP truth from the rational optimum; warns above 1e-12."""
        exact = exact_transport_value(self.P.weights, self.Q.weights, self._C)
        deviation = abs(self.truth_cost - float(exact))
        if deviation > EXACT_AGREEMENT_TOL:
            logger.warning(f"{self.cfg.name}: LP truth {self.truth_cost:.15g} differs from exact {exact} "
                           f"by {deviation:.2e}")
        else:
            logger.debug(f"{self.cfg.name}: LP truth matches exact value {exact}")
        return deviation

    def build_law(self) -> LimitLaw:
        p = self.P.weights
        statistic = self.cfg.statistic
        mode = self.cfg.mode
        if self.discrete:
            cost_law = cost_limit_law(self.truth, p, mode="face" if mode == "auto" else mode)
        elif statistic in ("cost", "wp"):
            cost_law = cost_limit_law(self.truth, p, mode="unique" if mode == "auto" else mode, c=self.c, Q=self.Q)
        if statistic == "cost":
            return cost_law
        if statistic == "wp":
            return wp_limit_law(cost_law, self.c.exponent, self.truth_cost)
        if self.truth.hessian is None:
            raise InvalidArgumentError("statistic", statistic, reason="truth solve produced no Hessian")
        gaps = regularity_gaps(self.c, self.Q)
        if gaps:
            logger.warning(f"'{self.cfg.name}': potentials law without declared {gaps}")
        cov = potentials_covariance(self.truth.hessian, p, self.truth.cell_probs)
        if statistic == "potentials":
            return potentials_contrast_law(cov, *self.contrast)
        return sup_norm_potential_law(cov)

    def _solve_replicate(self, freq: np.ndarray):
        """(cost, potentials or None) for empirical weights freq."""
        keep = freq > 0
        if self.discrete:
            sol = solve_discrete(freq[keep], self.Q.weights, self._C[keep])
            return sol.primal_value, None
        if self.backend == "exact1d":
            report = solve_exact_1d(self.P, self.Q, self.c, weights=freq, compute_hessian=False)
            return report.cost, np.asarray(report.potentials.values)
        if not keep.all():
            if self.cfg.statistic in ("potentials", "sup_norm_potentials"):
                raise InvalidArgumentError("counts", freq.tolist(), reason="empty atom leaves its potential undefined")
            P_hat = DiscreteMeasure(points=self.P.points[keep], weights=freq[keep] / freq[keep].sum())
            return solve_potentials(P_hat, self.Q, self.c, self._solver_config(self.truth_potentials[keep])).cost, None
        P_hat = self.P.with_weights(freq)
        report = solve_potentials(P_hat, self.Q, self.c, self._solver_config(self.truth_potentials))
        return report.cost, np.asarray(report.potentials.values)

    def replicate_seed(self, index: int) -> int:
        return derive_int_seed(self.cfg.master_seed, SeedPurpose.REPLICATE, index)

    def run_replicate(self, index: int, seed: Optional[int] = None) -> float:
        """sqrt(n)-scaled fluctuation of replicate `index`."""
        n = self.cfg.n
        counts = sample_discrete(self.P, n, self.replicate_seed(index) if seed is None else seed)
        cost, z_hat = self._solve_replicate(counts.frequencies)
        root_n = np.sqrt(n)
        statistic = self.cfg.statistic
        if statistic == "cost":
            return float(root_n * (cost - self.truth_cost))
        if statistic == "wp":
            p = self.c.exponent
            return float(root_n * (max(cost, 0.0) ** (1.0 / p) - self.truth_cost ** (1.0 / p)))
        deviation = z_hat - self.truth_potentials
        if statistic == "potentials":
            i, j = self.contrast
            return float(root_n * (deviation[j] - deviation[i]))
        return float(root_n * np.max(np.abs(deviation)))

    def _attempt(self, index: int) -> tuple[int, Optional[float], Optional[str]]:
        try:
            return index, self.run_replicate(index), None
        except TransportError as e:
            logger.warning(f"Replicate {index} failed: {e}")
            return index, None, str(e)

    def run_replicates(self) -> tuple[list, list]:
        replicates = self.cfg.replicates
        step = max(1, replicates // 10)
        values, failed = [], []
        with ThreadPoolExecutor(max_workers=self.cfg.workers) as pool:
            # map yields in replicate order whatever the completion order
            for index, value, error in pool.map(self._attempt, range(replicates)):
                if error is None:
                    values.append(value)
                else:
                    failed.append({"index": index, "error": error})
                if (index + 1) % step == 0:
                    logger.info(f"'{self.cfg.name}': {index + 1}/{replicates} replicates done")
        limit = experiment_defaults.max_failed_fraction
        if len(failed) > limit * replicates:
            logger.error(f"{len(failed)} of {replicates} replicates failed")
            raise ExperimentFailedError(len(failed), replicates, limit)
        return values, failed

    def compare(self, values: np.ndarray, law: LimitLaw, law_sample: np.ndarray) -> dict:
        levels = experiment_defaults.quantile_levels
        empirical_q = np.quantile(values, levels)
        law_q = np.quantile(law_sample, levels)
        ks = ks_statistic(values, law_sample)
        emp_mean, emp_var = float(values.mean()), float(values.var(ddof=1))
        if law.kind == GAUSSIAN:
            law_mean, law_var = 0.0, float(law.variance)
        else:
            law_mean, law_var = float(law_sample.mean()), float(law_sample.var(ddof=1))

        variance_ratio = emp_var / law_var if law_var > 0 else None
        checks = {
            "ks": ks <= self.cfg.ks_threshold,
            "variance": variance_ratio is not None and abs(variance_ratio - 1.0) <= self.cfg.variance_tolerance,
        }
        if self.cfg.mean_tolerance is not None:
            checks["mean"] = abs(emp_mean - law_mean) <= self.cfg.mean_tolerance
        return {
            "ks_statistic": ks,
            "ks_critical_value": ks_critical_value(values.size, law_sample.size),
            "ks_threshold": self.cfg.ks_threshold,
            "empirical_mean": emp_mean,
            "empirical_variance": emp_var,
            "law_mean": law_mean,
            "law_variance": law_var,
            "mean_ratio": emp_mean / law_mean if law_mean != 0 else None,
            "variance_ratio": variance_ratio,
            "nonnegative_fraction": float(np.mean(values >= -NONNEGATIVE_TOL)),
            "quantiles": [
                {"level": level, "empirical": float(a), "law": float(b)}
                for level, a, b in zip(levels, empirical_q, law_q)
            ],
            "checks": checks,
            "passed": all(checks.values()),
        }

    def run(self, law_override: Optional[LimitLaw] = None) -> ExperimentReport:
        cfg = self.cfg
        logger.info(f"Experiment '{cfg.name}': statistic={cfg.statistic}, n={cfg.n}, replicates={cfg.replicates}")
        self.prepare_truth()
        values, failed = self.run_replicates()
        law = law_override or self.build_law()

        draws = cfg.law_draws
        if law.kind == SUP_OF_GAUSSIAN and draws > SUP_OF_GAUSSIAN_MAX_DRAWS:
            logger.info(f"Capping sup-of-Gaussian law draws at {SUP_OF_GAUSSIAN_MAX_DRAWS} (one LP per draw)")
            draws = SUP_OF_GAUSSIAN_MAX_DRAWS
        law_sample = simulate_limit(law, draws, derive_int_seed(cfg.master_seed, SeedPurpose.LAW_DRAWS),
                                    workers=cfg.workers)
        values = np.asarray(values, dtype=float)
        metrics = self.compare(values, law, law_sample)
        logger.info(f"'{cfg.name}': KS={metrics['ks_statistic']:.4f}, variance ratio={metrics['variance_ratio']}, "
                    f"passed={metrics['passed']}")

        truth = {"cost": self.truth_cost, "potentials": np.asarray(self.truth_potentials).tolist(),
                 "backend": self.backend}
        return ExperimentReport(
            name=cfg.name, config=cfg.model_dump(mode="json"), statistic=cfg.statistic, truth=truth,
            law=law, replicate_statistics=values.tolist(), failed=failed, metrics=metrics,
            law_draws=draws, law_sample=law_sample,
        )


def run_experiment(cfg: ExperimentConfig, law_override: Optional[LimitLaw] = None) -> ExperimentReport:
    return ExperimentService(cfg).run(law_override)


def emit_report(report: ExperimentReport, format: str = "json", out_dir: str = "reports") -> list[str]:
    """Write <name>.json, and with format csv also <name>.csv of (source, value) rows.

    Raises:
        ReportWriteError: If a file cannot be written
    """
    if format not in ("json", "csv"):
        raise InvalidArgumentError("format", format, reason="json or csv")
    paths = [DataProcessor.write_json(report, os.path.join(out_dir, f"{report.name}.json"))]
    if format == "csv":
        columns = {"replicate": report.replicate_statistics, "law": report.law_sample}
        paths.append(DataProcessor.write_samples_csv(columns, os.path.join(out_dir, f"{report.name}.csv")))
    return paths
