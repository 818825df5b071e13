"""
Exception hierarchy for the reduction toolkit.

Library code raises these; the CLI maps ``exit_code`` onto the process exit status:
0 success, 1 numeric failure, 2 usage error, 3 hypotheses fail, 4 domain/boundary failure.
"""


class ReductionError(Exception):
    exit_code = 1

    def to_dict(self):
        return {"type": type(self).__name__, "message": str(self)}


# --- usage (exit 2) ---

class UsageError(ReductionError):
    exit_code = 2


class GridTooSmall(UsageError):
    pass


class ExpressionError(UsageError):
    pass


class ParseError(ExpressionError):
    def __init__(self, position, expected, text=""):
        self.position = position
        self.expected = expected
        self.text = text
        super().__init__(f"parse error at position {position}: expected {expected}")

    def to_dict(self):
        info = super().to_dict()
        info["position"] = self.position
        return info


# --- numeric failures (exit 1) ---

class QuadratureNotConverged(ReductionError):
    def __init__(self, error, tol):
        self.error = error
        self.tol = tol
        super().__init__(f"quadrature error estimate {error:.3e} exceeds tolerance {tol:.3e}")


class NonConvergence(ReductionError):
    pass


class NotConverged(ReductionError):
    pass


class DegenerateFit(ReductionError):
    pass


# --- hypotheses (exit 3) ---

class DegenerateCriticalPoint(ReductionError):
    exit_code = 3

    def __init__(self, location, min_eigenvalue):
        self.location = location
        self.min_eigenvalue = min_eigenvalue
        loc = ", ".join(f"{c:.6g}" for c in location)
        super().__init__(f"degenerate critical point at ({loc}), |lambda_min| = {min_eigenvalue:.3e}")


class ConditionIViolated(ReductionError):
    exit_code = 3


# --- domain / boundary (exit 4) ---

class SouthPoleSingularity(ReductionError):
    exit_code = 4


class OriginSingularity(ReductionError):
    exit_code = 4


class DomainError(ExpressionError):
    exit_code = 4

    def __init__(self, message, node=None):
        self.node = node
        super().__init__(message if node is None else f"{message} in '{node}'")


class BoundaryZero(ReductionError):
    exit_code = 4


class SingularZero(ReductionError):
    exit_code = 4


class CriticalPointsOutsideBox(ReductionError):
    exit_code = 4


class InvalidPoint(ValueError):
    pass
