"""
errors.py - Exception hierarchy for the simulator.

Every failure the library can raise derives from SubnetBNEError and carries the
process exit code the CLI should use when it escapes to the top level.
"""

from typing import Any, Optional, Sequence


class SubnetBNEError(Exception):
    """Base class for all simulator errors"""

    exit_code = 1


class ConfigError(SubnetBNEError):
    """Schema violation in an experiment document"""

    exit_code = 2

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class ValidationFailure(SubnetBNEError):
    """A structural check (connectivity, sum structure) did not pass"""

    exit_code = 2


class NonFiniteEvaluationError(SubnetBNEError):
    """A cost or gradient evaluator returned NaN or inf"""

    def __init__(self, side: int, agent: Optional[int], inputs: Any, block: Optional[int] = None):
        self.side = side
        self.agent = agent
        self.block = block
        self.inputs = inputs
        where = f"side={side}, agent={agent}"
        if block is not None:
            where += f", block={block}"
        super().__init__(f"non-finite evaluation ({where}) at inputs {inputs!r}")


class AssumptionViolationError(SubnetBNEError):
    """The game violates a standing assumption (e.g. a vanishing marginal density)"""

    def __init__(self, what: str, where: Any = None):
        self.what = what
        self.where = where
        super().__init__(what if where is None else f"{what} at {where!r}")


class QuadratureResolutionError(SubnetBNEError):
    """Quadrature too coarse to locate a quantile or to hold the mass tolerance"""

    def __init__(self, side: int, index: int, detail: str):
        self.side = side
        self.index = index
        super().__init__(f"side {side}, point {index}: {detail}")


class DomainError(SubnetBNEError):
    """An index or type value outside its admissible range"""

    def __init__(self, value: Any, bounds: Sequence[Any], what: str = "value"):
        self.value = value
        self.bounds = tuple(bounds)
        super().__init__(f"{what} {value!r} outside {self.bounds!r}")


class NonConvergenceError(SubnetBNEError):
    """The centralized oracle hit its iteration cap"""

    def __init__(self, final_gap: float, iterations: int):
        self.final_gap = final_gap
        self.iterations = iterations
        super().__init__(f"no convergence after {iterations} iterations (gap {final_gap:.3e})")


class ProtocolError(SubnetBNEError):
    """Packets that do not match the frame they were delivered on"""


class DivergenceError(SubnetBNEError):
    """Runaway or non-finite agent state"""

    exit_code = 3

    def __init__(self, tick: int, side: int, magnitude: float):
        self.tick = tick
        self.side = side
        self.magnitude = magnitude
        super().__init__(f"state diverged at tick {tick} on side {side} (|state|={magnitude:.3e})")


class PartialResultError(SubnetBNEError):
    """Wall-clock budget exhausted; the partial run is attached"""

    def __init__(self, partial: Any, tick: int, budget: float):
        self.partial = partial
        self.tick = tick
        self.budget = budget
        super().__init__(f"wall-clock budget of {budget:.1f}s exceeded at tick {tick}")


class AccountingError(SubnetBNEError):
    """The data-size identity bytes == 12 * d * messages does not hold"""

    def __init__(self, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"byte accounting mismatch: expected {expected}, counted {actual}")


class OutputError(SubnetBNEError):
    """Filesystem failure while writing results"""

    def __init__(self, path: Any, cause: Exception):
        self.path = path
        super().__init__(f"failed to write {path}: {cause}")


class NumericError(SubnetBNEError):
    """A linear-algebra routine failed (e.g. the eigen-solver did not converge)"""
