import os
import logging
import json
from dataclasses import dataclass, field
from typing import Optional
from dotenv import load_dotenv

# Configure logging
logging.basicConfig(
    level=os.getenv("VERBOSITY", "INFO").upper(),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

PROJECT_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Load environment variables from .env
env_path = os.path.join(PROJECT_ROOT, '.env')
if os.path.exists(env_path):
    load_dotenv(env_path)
    logger.info(f"Loaded .env file from {env_path}")
else:
    logger.debug(f"No .env file found at {env_path}")

# Solver settings
SOLVER_TOL: float = float(os.getenv("SOLVER_TOL", 1e-7))
SOLVER_MAX_ITER: int = int(os.getenv("SOLVER_MAX_ITER", 200))
SOLVER_MAX_HALVINGS: int = int(os.getenv("SOLVER_MAX_HALVINGS", 40))
ARMIJO_SLOPE: float = float(os.getenv("ARMIJO_SLOPE", 1e-4))
FD_STEP: float = float(os.getenv("FD_STEP", 1e-3))
HESSIAN_CELL_FLOOR: float = float(os.getenv("HESSIAN_CELL_FLOOR", 1e-9))
NEWTON_EIGEN_CEILING: float = float(os.getenv("NEWTON_EIGEN_CEILING", -1e-8))
RESTRICTED_EIGEN_FLOOR: float = float(os.getenv("RESTRICTED_EIGEN_FLOOR", -1e-10))

# Integration settings
MC_SAMPLES: int = int(os.getenv("MC_SAMPLES", 200_000))
QUAD_CELLS: int = int(os.getenv("QUAD_CELLS", 64))  # per axis
QUAD_ORDER: int = int(os.getenv("QUAD_ORDER", 4))  # Gauss-Legendre nodes per cell and axis
QUAD_PANELS_1D: int = int(os.getenv("QUAD_PANELS_1D", 8))  # panels per cell piece in 1D
BREAKPOINT_GRID: int = int(os.getenv("BREAKPOINT_GRID", 2049))

# Experiment settings
MASTER_SEED: int = int(os.getenv("MASTER_SEED", 20240601))
LAW_DRAWS: int = int(os.getenv("LAW_DRAWS", 100_000))
REPLICATE_WORKERS: int = int(os.getenv("REPLICATE_WORKERS", 4))
MAX_FAILED_FRACTION: float = float(os.getenv("MAX_FAILED_FRACTION", 0.01))
KS_ALPHA_COEFF: float = float(os.getenv("KS_ALPHA_COEFF", 1.36))  # 5% two-sample KS
QUANTILE_LEVELS: tuple = (0.01, 0.05, 0.25, 0.5, 0.75, 0.95, 0.99)


@dataclass
class SolverConfig:
    """Options for one semidiscrete dual ascent."""
    backend: str = os.getenv("SOLVER_BACKEND", "quadrature")  # mc | quadrature | exact1d
    tol: float = SOLVER_TOL
    max_iter: int = SOLVER_MAX_ITER
    mc_samples: int = MC_SAMPLES
    seed: int = MASTER_SEED
    eps_floor: Optional[float] = None  # None -> min_k p_k / 2
    armijo: float = ARMIJO_SLOPE
    initial_step: float = 1.0
    max_halvings: int = SOLVER_MAX_HALVINGS
    fd_step: float = FD_STEP
    hessian_method: Optional[str] = None  # None -> interface-quadrature when available
    hessian_floor: float = HESSIAN_CELL_FLOOR
    compute_hessian: bool = True
    warm_start: Optional[list] = None


@dataclass
class ExperimentDefaults:
    law_draws: int = LAW_DRAWS
    workers: int = REPLICATE_WORKERS
    max_failed_fraction: float = MAX_FAILED_FRACTION
    ks_threshold: float = float(os.getenv("KS_THRESHOLD", 0.05))
    variance_tolerance: float = float(os.getenv("VARIANCE_TOLERANCE", 0.15))
    quantile_levels: tuple = field(default_factory=lambda: QUANTILE_LEVELS)


def resolve_path(path: str) -> str:
    """Resolve a path relative to the project root unless it is absolute."""
    if os.path.isabs(path):
        return path
    return os.path.join(PROJECT_ROOT, path)


def load_config_file(path: str) -> dict:
    """Load a JSON config file.

    Args:
        path: Absolute path or path relative to the project root

    Returns:
        Parsed JSON content

    Raises:
        ConfigError: If the file is missing or not valid JSON
    """
    from lib.transport.exceptions import ConfigError

    config_path = resolve_path(path)
    if not os.path.exists(config_path):
        # the CLI passes paths relative to the working directory
        if os.path.exists(path):
            config_path = os.path.abspath(path)
        else:
            logger.error(f"Config file not found: {path}")
            raise ConfigError("file not found", path=path)
    try:
        with open(config_path, 'r') as f:
            payload = json.load(f)
        logger.info(f"Loaded config from {config_path}")
        return payload
    except json.JSONDecodeError as e:
        logger.error(f"JSON decode error in {config_path}: {e}")
        raise ConfigError(f"JSON decode error: {e}", path=path)


experiment_defaults = ExperimentDefaults()
