"""Exception hierarchy.

Every error carries a stable upper-case ``code`` so the command line can
print machine-readable diagnostics.
"""


class FsiError(Exception):
    code = "FSI_ERROR"

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context

    def __str__(self):
        msg = super().__str__()
        return f"{self.code}: {msg}" if msg else self.code


class InvalidGeometryError(FsiError, ValueError):
    code = "INVALID_GEOMETRY"


class MeshingFailedError(FsiError, RuntimeError):
    code = "MESHING_FAILED"


class InvalidMeshError(FsiError, ValueError):
    code = "INVALID_MESH"


class SpaceMismatchError(FsiError, ValueError):
    code = "SPACE_MISMATCH"


class NonpositiveJacobianError(FsiError, ArithmeticError):
    code = "NONPOSITIVE_JACOBIAN"


class SingularMatrixError(FsiError, ArithmeticError):
    code = "SINGULAR_MATRIX"


class SingularJacobianError(FsiError, ArithmeticError):
    code = "SINGULAR_JACOBIAN"


class NoConvergenceError(FsiError, RuntimeError):
    code = "NO_CONVERGENCE"


class MaxSubiterExceededError(FsiError, RuntimeError):
    code = "MAX_SUBITER_EXCEEDED"


class ParameterOutOfRangeError(FsiError, ValueError):
    code = "PARAMETER_OUT_OF_RANGE"


class RankDeficientError(FsiError, ValueError):
    code = "RANK_DEFICIENT"


class ZeroSnapshotsError(FsiError, ValueError):
    code = "ZERO_SNAPSHOTS"


class DimensionMismatchError(FsiError, ValueError):
    code = "DIMENSION_MISMATCH"


class GridMismatchError(FsiError, ValueError):
    code = "GRID_MISMATCH"


class TimeStepError(FsiError, RuntimeError):
    """Wraps a failure inside a time loop with the failing step index."""

    code = "TIME_STEP_FAILED"

    def __init__(self, step, cause):
        super().__init__(f"step {step}: {cause}", step=step)
        self.step = step
        self.cause = cause
        self.code = getattr(cause, "code", type(self).code)

    def __str__(self):
        return f"{self.code}: {self.args[0]}"


class OutputExistsError(FsiError, FileExistsError):
    code = "OUTPUT_EXISTS"


class FileFormatError(FsiError, ValueError):
    code = "FILE_FORMAT"
