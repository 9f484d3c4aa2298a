"""Exception types shared across the package."""


class HiereigError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(HiereigError):
    """Operands have incompatible shapes."""


class AsymmetricMatrixError(HiereigError):
    """Input violates a symmetry contract."""


class NotDecomposableError(HiereigError):
    """Matrix is outside the class the edge-rule energy decomposition covers."""


class SingularPatchError(HiereigError):
    """A patch's closed energy is numerically singular."""


class PartitionError(HiereigError):
    """Partitioner cannot satisfy the acceptance predicate."""


class RankDeficiencyError(HiereigError):
    """Columns supplied to an orthogonal factorization are dependent."""


class ConvergenceError(HiereigError):
    """An iterative solve failed to reach its tolerance within budget."""


class CertificateError(HiereigError):
    """A returned eigenpair failed its independent residual check."""


class InputFormatError(HiereigError):
    """A file being ingested is malformed."""
