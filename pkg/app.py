import argparse
import logging
import os
import sys

import numpy as np

from config.schemas import DiscreteProblemSpec, ExperimentConfig, SolveSpec, parse_model
from config.settings import SolverConfig, load_config_file
from core.services.experiment_service import emit_report, run_experiment
from lib.transport.costs import check_integrability, cost_from_description, cost_matrix
from lib.transport.exceptions import ConfigError, InvalidArgumentError, NoConvergenceError, TransportError
from lib.transport.measures import DiscreteMeasure, measure_from_description
from services.discrete_transport import extract_dual_face, solve_discrete
from services.inference import (
    cost_limit_law,
    potentials_contrast_law,
    potentials_covariance,
    regularity_gaps,
    simulate_limit,
    sup_norm_potential_law,
    wp_limit_law,
)
from services.semidiscrete_solver import solve_potentials
from utils.data_processor import DataProcessor

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NO_CONVERGENCE = 3
EXIT_CHECK_FAILED = 4

INTEGRABILITY_SAMPLES = 20_000


def load_spec(model_cls, path: str):
    return parse_model(model_cls, load_config_file(path), path=path)


def solver_config_from(spec: SolveSpec, args) -> SolverConfig:
    solver = spec.solver
    return SolverConfig(
        backend=args.backend or solver.backend or "quadrature",
        tol=solver.tol, max_iter=solver.max_iter, mc_samples=solver.mc_samples,
        seed=args.seed if args.seed is not None else solver.seed,
        hessian_method=solver.hessian_method,
    )


def run_solve(spec: SolveSpec, args) -> dict:
    """
    Solve one semidiscrete (or, with a discrete Q, fully discrete) problem.

    Returns:
        dict: JSON-ready result with the solve report and the built objects
    """
    P = measure_from_description(spec.P)
    Q = measure_from_description(spec.Q)
    c = cost_from_description(spec.cost.model_dump())
    if isinstance(Q, DiscreteMeasure):
        sol = solve_discrete(P.weights, Q.weights, cost_matrix(c, P, Q.points))
        return {"P": P, "Q": Q, "c": c, "solution": sol}

    config = solver_config_from(spec, args)
    # cheap MC screen before any deterministic integration
    check_integrability(c, P, Q, INTEGRABILITY_SAMPLES, config.seed)
    report = solve_potentials(P, Q, c, config)
    return {"P": P, "Q": Q, "c": c, "solution": report}


def build_law(spec: SolveSpec, solved: dict):
    inference = spec.inference
    P, Q, c, solution = solved["P"], solved["Q"], solved["c"], solved["solution"]
    p = P.weights
    statistic = inference.statistic
    if isinstance(Q, DiscreteMeasure):
        if statistic not in ("cost", "wp"):
            raise InvalidArgumentError("statistic", statistic, reason="potential statistics need a continuous Q")
        law = cost_limit_law(solution, p, mode="face" if inference.mode == "auto" else inference.mode,
                             plug_in=inference.plug_in)
        cost = solution.primal_value
    else:
        cost = solution.cost
        if statistic in ("potentials", "sup_norm_potentials"):
            if solution.hessian is None:
                raise InvalidArgumentError("statistic", statistic, reason="solve produced no Hessian")
            gaps = regularity_gaps(c, Q)
            if gaps:
                logger.warning(f"Potentials law without declared {gaps}; treat it as a heuristic")
            cov = potentials_covariance(solution.hessian, p, solution.cell_probs)
            if statistic == "potentials":
                return potentials_contrast_law(cov, 0, min(1, P.m - 1), plug_in=inference.plug_in)
            return sup_norm_potential_law(cov, plug_in=inference.plug_in)
        law = cost_limit_law(solution, p, mode="unique" if inference.mode == "auto" else inference.mode,
                             c=c, Q=Q, plug_in=inference.plug_in)
    if statistic == "wp":
        return wp_limit_law(law, c.exponent, cost)
    return law


def command_solve(args) -> int:
    spec = load_spec(SolveSpec, args.config)
    solved = run_solve(spec, args)
    DataProcessor.write_json({"solution": solved["solution"]}, os.path.join(args.out, "solve.json"))
    return EXIT_OK


def command_discrete(args) -> int:
    spec = load_spec(DiscreteProblemSpec, args.config)
    if spec.p is not None and spec.q is not None:
        if spec.cost_matrix is not None:
            C = np.asarray(spec.cost_matrix, dtype=float)
        else:
            C = DataProcessor.read_cost_matrix(spec.cost_matrix_csv)
        p, q = spec.p, spec.q
    else:
        P, Q = measure_from_description(spec.P), measure_from_description(spec.Q)
        C = cost_matrix(cost_from_description(spec.cost.model_dump()), P, Q.points)
        p, q = P.weights, Q.weights
    sol = solve_discrete(p, q, C)
    face = extract_dual_face(sol)
    law = cost_limit_law(sol, sol.p, mode="face" if spec.inference.mode == "auto" else spec.inference.mode,
                         plug_in=spec.inference.plug_in)
    DataProcessor.write_json({"solution": sol, "face": face, "residuals": sol.residuals(), "law": law},
                             os.path.join(args.out, "discrete.json"))
    return EXIT_OK


def command_infer(args) -> int:
    spec = load_spec(SolveSpec, args.config)
    solved = run_solve(spec, args)
    law = build_law(spec, solved)
    DataProcessor.write_json({"solution": solved["solution"], "law": law}, os.path.join(args.out, "infer.json"))
    return EXIT_OK


def command_simulate(args) -> int:
    spec = load_spec(SolveSpec, args.config)
    solved = run_solve(spec, args)
    law = build_law(spec, solved)
    seed = args.seed if args.seed is not None else spec.solver.seed
    sample = simulate_limit(law, spec.inference.draws, seed)
    if args.format == "csv":
        DataProcessor.write_samples_csv({"law": sample}, os.path.join(args.out, "simulate.csv"))
    else:
        DataProcessor.write_json({"law": law, "sample": sample}, os.path.join(args.out, "simulate.json"))
    return EXIT_OK


def command_experiment(args) -> int:
    cfg = load_spec(ExperimentConfig, args.config)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.backend is not None:
        cfg.backend = args.backend
    report = run_experiment(cfg)
    emit_report(report, format=args.format or cfg.format, out_dir=args.out or cfg.out_dir)
    if args.check and not report.metrics["passed"]:
        logger.error(f"Acceptance check failed for '{cfg.name}': {report.metrics['checks']}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {
    "solve": command_solve,
    "discrete": command_discrete,
    "infer": command_infer,
    "simulate": command_simulate,
    "experiment": command_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Semidiscrete optimal transport solver and inference toolkit.")
    parser.add_argument('--debug', action='store_true', help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("solve", "Solve one semidiscrete problem"),
        ("discrete", "Solve a discrete LP and extract its dual-optimal face"),
        ("infer", "Build the limit law from a solve"),
        ("simulate", "Draw from the limit law of a solve"),
        ("experiment", "Run a replication experiment"),
    ]:
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument('--config', required=True, help="Path to a JSON config")
        cmd.add_argument('--seed', type=int, default=None, help="Override the master/solver seed")
        cmd.add_argument('--backend', choices=["mc", "quadrature", "exact1d"], default=None,
                         help="Integration backend")
        cmd.add_argument('--out', default=None if name == "experiment" else "reports", help="Output directory")
        cmd.add_argument('--format', choices=["json", "csv"], default=None if name == "experiment" else "json")
        if name == "experiment":
            cmd.add_argument('--check', action='store_true', help="Exit 4 when an acceptance threshold is breached")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.debug:
        logging.getLogger().setLevel(logging.DEBUG)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InvalidArgumentError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_CONFIG
    except NoConvergenceError as e:
        logger.error(f"Solver did not converge: {e}")
        return EXIT_NO_CONVERGENCE
    except TransportError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_ERROR


if __name__ == '__main__':
    sys.exit(main())
