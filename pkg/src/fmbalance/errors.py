"""Exception types raised across the package."""


class FMBalanceError(Exception):
    """Base class for package errors."""


class ConfigurationError(FMBalanceError, ValueError):
    pass


class DomainError(FMBalanceError, ValueError):
    pass


class IntegrationError(FMBalanceError, RuntimeError):
    """Time integration failed to converge; carries the record id."""

    def __init__(self, message, record_id=None):
        super().__init__(message)
        self.record_id = record_id


class ConditioningError(FMBalanceError, RuntimeError):
    pass


class TrainingError(FMBalanceError, RuntimeError):
    pass


class DataError(FMBalanceError, ValueError):
    pass


class SamplingError(FMBalanceError, RuntimeError):
    """Accept-reject sampling fell below its minimum acceptance rate."""


class MissingArtifactError(FMBalanceError, FileNotFoundError):
    pass
