"""Exception types shared across the toolkit."""


class StrikeAuditError(Exception):
    """Base class for all data and contract errors raised by this package."""


class SchemaError(StrikeAuditError):
    """CSV header is missing a required column."""


class ParseError(StrikeAuditError):
    """A cell holds a value outside its allowed alphabet."""


class DegenerateDataError(StrikeAuditError):
    """Input is empty or too small for the requested operation."""


class StratificationError(StrikeAuditError):
    """A class stratum is too small to split or fold."""


class CollinearityError(StrikeAuditError):
    """Singular information matrix; carries the names of dependent columns."""

    def __init__(self, columns):
        self.columns = tuple(columns)
        super().__init__(
            "singular information matrix; dependent columns: "
            + ", ".join(self.columns)
        )


class UndefinedTestError(StrikeAuditError):
    """Fisher test undefined: an empty row or column margin."""


class UndefinedMetricError(StrikeAuditError):
    """AUC undefined: labels contain a single class."""


class ContractViolationError(StrikeAuditError):
    """A caller broke an operation precondition (e.g. race columns present)."""


class StageError(StrikeAuditError):
    """Audit pipeline failure, labeled with the stage that raised it."""

    def __init__(self, stage, cause):
        self.stage = stage
        super().__init__(f"[{stage}] {cause}")
