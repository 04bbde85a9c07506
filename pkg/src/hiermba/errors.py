"""Exception types raised across the package."""


class HierMBAError(Exception):
    """Base class for package errors."""


class DefinitenessError(HierMBAError, ValueError):
    """A matrix that must be positive definite is not (even after jitter)."""


class DomainError(HierMBAError, ValueError):
    """A distribution parameter lies outside its admissible range."""


class InsufficientSamplesError(HierMBAError, ValueError):
    """Too few draws to compute a requested summary."""


class InputError(HierMBAError, ValueError):
    """Malformed or non-finite input data."""


class ConfigError(HierMBAError, ValueError):
    """Invalid configuration (missing field, bad value, unknown method)."""


class StuckChainError(HierMBAError, RuntimeError):
    """A Metropolis chain rejected every proposal for too long."""


class PilotTooShortError(HierMBAError, ValueError):
    """Chain is shorter than the Raftery-Lewis minimum pilot length."""

    def __init__(self, n_min, n_given):
        self.n_min = int(n_min)
        self.n_given = int(n_given)
        super().__init__(
            f"chain of length {n_given} is shorter than the minimum pilot "
            f"length n_min={n_min}; run a longer pilot"
        )


class DegenerateChainError(HierMBAError, ValueError):
    """Binarized chain takes a single state, so no transition can be fitted."""


class IngestionError(HierMBAError, ValueError):
    """External posterior draws could not be ingested."""


class TaskFailedError(HierMBAError, RuntimeError):
    """A per-source task failed inside the parallel executor."""

    def __init__(self, source_id, cause):
        self.source_id = source_id
        self.cause = cause
        super().__init__(f"task for source {source_id} failed: {cause!r}")


class SchemaError(ConfigError):
    """A record or config lacks a required field."""
