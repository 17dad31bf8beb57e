"""Exception hierarchy.

Every error raised deliberately by the package derives from
:class:`PriorGuideError` so the CLI can map it to a machine-readable
error document.
"""


class PriorGuideError(Exception):
    code = "error"


class InvalidInputError(PriorGuideError, ValueError):
    code = "invalid_input"


class UndefinedCorrelationError(PriorGuideError, ValueError):
    code = "undefined_correlation"


class UndefinedSimilarityError(PriorGuideError, ValueError):
    code = "undefined_similarity"


class NotPositiveDefiniteError(PriorGuideError, ArithmeticError):
    code = "not_positive_definite"


class SingularSystemError(PriorGuideError, ArithmeticError):
    code = "singular_system"


class SolverFault(PriorGuideError, RuntimeError):
    """An invariant of the ridge system was violated (should be impossible for lambda > 0)."""

    code = "internal_solver_fault"


class TemplateError(PriorGuideError, ValueError):
    code = "template_error"


class OracleUnavailableError(PriorGuideError, RuntimeError):
    code = "oracle_unavailable"


class CapabilityError(PriorGuideError, RuntimeError):
    code = "capability_error"


class AlignmentError(PriorGuideError, ValueError):
    code = "alignment_error"


class IngestionError(PriorGuideError, ValueError):
    code = "ingestion_error"

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class SpecError(PriorGuideError, ValueError):
    code = "spec_error"


class ArtifactError(PriorGuideError, ValueError):
    """Schema violation or a config/seed conflict with an existing artifact."""

    code = "artifact_error"
