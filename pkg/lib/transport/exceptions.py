class TransportError(Exception):
    """Base exception for transport solver and inference errors."""
    def __init__(self, message: str = "Transport computation error occurred", **context):
        self.context = context
        details = ", ".join(f"{key}={value!r}" for key, value in context.items() if value is not None)
        self.message = f"{message}{' (' + details + ')' if details else ''}"
        super().__init__(self.message)

class InvalidArgumentError(TransportError):
    """Raised when an argument violates an operation's precondition."""
    def __init__(self, parameter: str, value: any = None, reason: str = None):
        message = f"Invalid argument '{parameter}'"
        if reason:
            message += f": {reason}"
        super().__init__(message, value=value)
        self.parameter = parameter

class ConfigError(TransportError):
    """Raised when a configuration file or payload cannot be used."""
    def __init__(self, reason: str, path: str = None, field: str = None):
        super().__init__(f"Invalid configuration: {reason}", path=path, field=field)
        self.path = path

class IntegrationFailureError(TransportError):
    """Raised when an integrand is not finite at an evaluation point."""
    def __init__(self, point=None, value: float = None):
        message = "Integrand returned a non-finite value"
        super().__init__(message, point=None if point is None else list(map(float, point)), value=value)
        self.point = point

class UnsupportedBackendError(TransportError):
    """Raised when a measure cannot serve the requested integration backend."""
    def __init__(self, backend: str, reason: str = None):
        message = f"Backend '{backend}' is not supported"
        if reason:
            message += f": {reason}"
        super().__init__(message)
        self.backend = backend

class IntegrabilityViolationError(TransportError):
    """Raised when the cost is not Q-integrable against some atom."""
    def __init__(self, atom_index: int, atom=None, estimate: float = None):
        message = f"Cost is not integrable against atom {atom_index}"
        super().__init__(message, atom=None if atom is None else list(map(float, atom)), estimate=estimate)
        self.atom_index = atom_index

class HessianDegenerateError(TransportError):
    """Raised when a Laguerre cell is too small for a reliable Hessian."""
    def __init__(self, cell_index: int, probability: float, floor: float):
        message = f"Cell {cell_index} has probability {probability:.3e} below floor {floor:.1e}"
        super().__init__(message)
        self.cell_index = cell_index
        self.probability = probability

class NoConvergenceError(TransportError):
    """Raised when the dual ascent hits its iteration cap."""
    def __init__(self, iterations: int, grad_norm: float, best_iterate=None, best_value: float = None):
        message = f"No convergence after {iterations} iterations, gradient norm {grad_norm:.3e}"
        super().__init__(message, best_value=best_value)
        self.iterations = iterations
        self.grad_norm = grad_norm
        self.best_iterate = best_iterate

class FaceExtractionError(TransportError):
    """Raised when the dual-optimal face turns out unbounded or infeasible."""
    def __init__(self, status: int = None, detail: str = None):
        message = "Dual-optimal face is not a bounded nonempty polytope"
        if detail:
            message += f": {detail}"
        super().__init__(message, status=status)

class AssumptionViolationError(TransportError):
    """Raised when a limit law is requested without its preconditions."""
    def __init__(self, missing: list[str]):
        message = f"Uniqueness preconditions not met: {', '.join(missing)}"
        super().__init__(message)
        self.missing = missing

class DeltaMethodInapplicableError(TransportError):
    """Raised when the delta method is applied at a degenerate point."""
    def __init__(self, value: float):
        super().__init__("Delta method undefined at transport cost zero", value=value)

class SingularHessianError(TransportError):
    """Raised when the Hessian restricted to <1>^perp is not negative definite."""
    def __init__(self, eigenvalue: float, floor: float):
        message = f"Restricted Hessian eigenvalue {eigenvalue:.3e} above {floor:.1e}"
        super().__init__(message)
        self.eigenvalue = eigenvalue

class ReportWriteError(TransportError):
    """Raised when a report file cannot be written."""
    def __init__(self, path: str, reason: str = None):
        message = f"Failed to write report to '{path}'"
        if reason:
            message += f": {reason}"
        super().__init__(message)
        self.path = path

class ExperimentFailedError(TransportError):
    """Raised when too many replicates of an experiment fail."""
    def __init__(self, failed: int, replicates: int, limit: float):
        message = f"{failed}/{replicates} replicates failed (limit {limit:.0%})"
        super().__init__(message)
        self.failed = failed
