"""Hierarchical Bayesian inference by direct Gibbs sampling and by a
two-stage meta-analysis of independently sampled source posteriors."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigError,
    DefinitenessError,
    DegenerateChainError,
    DomainError,
    HierMBAError,
    IngestionError,
    InputError,
    InsufficientSamplesError,
    PilotTooShortError,
    SchemaError,
    StuckChainError,
    TaskFailedError,
)
from .model import (  # noqa: E402
    ChainTrace,
    HierarchicalDataset,
    SourceData,
    SourceDraws,
    summarize_draws,
)
from .rngdist import MatrixSym, RandomStream  # noqa: E402

__all__ = [
    "ChainTrace",
    "ConfigError",
    "DefinitenessError",
    "DegenerateChainError",
    "DomainError",
    "HierarchicalDataset",
    "HierMBAError",
    "IngestionError",
    "InputError",
    "InsufficientSamplesError",
    "MatrixSym",
    "PilotTooShortError",
    "RandomStream",
    "SchemaError",
    "SourceData",
    "SourceDraws",
    "StuckChainError",
    "TaskFailedError",
    "summarize_draws",
]
