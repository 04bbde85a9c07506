"""Domain types shared by all samplers: data sets, hyperparameter states,
chain traces and per-source posterior draw summaries.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import DomainError, InputError, InsufficientSamplesError
from .rngdist import MatrixSym, RandomStream, cholesky_jitter, inv_wishart_rvs

__all__ = [
    "SourceData",
    "HierarchicalDataset",
    "NormalHyper",
    "IWHyper",
    "VCHyper",
    "NIWHyper",
    "HyperState",
    "ChainTrace",
    "SourceDraws",
    "summarize_draws",
    "generate_example1",
    "generate_example2",
    "generate_example3",
    "write_dataset_csv",
    "read_dataset_csv",
]


@dataclass(frozen=True, eq=False)
class SourceData:
    """Observations from one source.

    ``observations`` is stored as an ``(n_j, d)`` array; ``covariates`` as
    ``(n_j, k)`` or ``None``.
    """

    source_id: int
    observations: np.ndarray
    covariates: Optional[np.ndarray] = None

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=float)
        if obs.ndim == 1:
            obs = obs[:, None]
        if obs.ndim != 2 or obs.shape[0] < 1:
            raise InputError(f"source {self.source_id}: need at least one observation")
        if not np.all(np.isfinite(obs)):
            raise InputError(f"source {self.source_id}: non-finite observations")
        object.__setattr__(self, "observations", obs)
        if self.covariates is not None:
            cov = np.asarray(self.covariates, dtype=float)
            if cov.ndim == 1:
                cov = cov[:, None]
            if cov.shape[0] != obs.shape[0]:
                raise InputError(
                    f"source {self.source_id}: {cov.shape[0]} covariate rows "
                    f"for {obs.shape[0]} observations"
                )
            object.__setattr__(self, "covariates", cov)

    @property
    def n(self) -> int:
        return self.observations.shape[0]

    @property
    def dim(self) -> int:
        return self.observations.shape[1]

    @property
    def values(self) -> np.ndarray:
        """Observations as a flat vector (for ``d = 1`` data)."""
        return self.observations[:, 0]


@dataclass(eq=False)
class HierarchicalDataset:
    sources: list
    meta: Optional[dict] = None

    def __post_init__(self):
        if len(self.sources) < 2:
            raise InputError("a hierarchical data set needs J >= 2 sources")
        ids = [s.source_id for s in self.sources]
        if ids != list(range(1, len(ids) + 1)):
            raise InputError("source ids must be 1..J in order without gaps")
        dims = {s.dim for s in self.sources}
        if len(dims) != 1:
            raise InputError("all observation vectors must share one dimension")

    @property
    def J(self) -> int:
        return len(self.sources)

    def __len__(self):
        return len(self.sources)

    def __iter__(self):
        return iter(self.sources)


# -- hyperparameter states --------------------------------------------------


@dataclass
class NormalHyper:
    """Population mean and covariance of normally distributed source
    parameters."""

    mu: np.ndarray
    sigma: MatrixSym


@dataclass
class IWHyper:
    """Scale and degrees of freedom of an inverse-Wishart population."""

    phi: MatrixSym
    kappa: float


@dataclass
class VCHyper:
    """Variance-components hyperparameters."""

    beta0: float
    sigma_u2: float
    sigma_v2: float

    def __post_init__(self):
        if not (self.sigma_u2 > 0 and self.sigma_v2 > 0):
            raise DomainError("variance components must be strictly positive")


@dataclass
class NIWHyper:
    """Normal-inverse-Wishart population parameters (retail model)."""

    mu: np.ndarray
    sigma: MatrixSym


HyperState = Union[NormalHyper, IWHyper, VCHyper, NIWHyper]


# -- traces -----------------------------------------------------------------


@dataclass(eq=False)
class ChainTrace:
    """Ordered draws of all tracked parameters.

    ``draws`` has one row per iteration (including burn-in) and one column
    per entry of ``names``.
    """

    names: list
    draws: np.ndarray
    burn_in: int = 0
    wall_clock_seconds: float = 0.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.names = list(self.names)
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 2 or self.draws.shape[1] != len(self.names):
            raise ValueError("draw matrix does not match parameter names")
        if not 0 <= self.burn_in < max(self.draws.shape[0], 1):
            raise ValueError("burn_in must be smaller than the number of iterations")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("trace contains non-finite values")

    @property
    def iterations(self) -> int:
        return self.draws.shape[0]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(name) from None

    def column(self, name: str, retained: bool = True) -> np.ndarray:
        col = self.draws[:, self.index(name)]
        return col[self.burn_in:] if retained else col

    def retained(self) -> np.ndarray:
        return self.draws[self.burn_in:]

    def posterior_mean(self, name: str) -> float:
        return float(np.mean(self.column(name)))

    def to_csv(self, path) -> None:
        """One row per retained iteration; first column is the iteration index."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", *self.names])
            for i in range(self.burn_in, self.iterations):
                w.writerow([i, *(repr(float(v)) for v in self.draws[i])])

    @classmethod
    def from_csv(cls, path) -> "ChainTrace":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        names = rows[0][1:]
        draws = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=float)
        return cls(names, draws.reshape(-1, len(names)), burn_in=0)


# -- per-source posterior draws ---------------------------------------------


@dataclass(eq=False)
class SourceDraws:
    """Posterior draws for one source plus cached summaries.

    ``draws`` is ``(L, q)``; for matrix-valued parameters each row is a
    flattened ``p x p`` matrix and ``matrix_dim = p``. ``draws`` may be
    ``None`` when only summaries were supplied.
    """

    source_id: int
    draws: Optional[np.ndarray]
    mean: np.ndarray
    cov: MatrixSym
    n_draws: int
    nu: Optional[float] = None
    matrix_dim: Optional[int] = None
    acceptance_rate: Optional[float] = None
    seconds: float = 0.0

    @property
    def q(self) -> int:
        return self.mean.shape[0]

    @property
    def mean_matrix(self) -> np.ndarray:
        p = self.matrix_dim
        if p is None:
            raise ValueError("draws are not matrix valued")
        m = self.mean.reshape(p, p)
        return 0.5 * (m + m.T)

    def matrices(self) -> np.ndarray:
        if self.draws is None or self.matrix_dim is None:
            raise ValueError("no matrix-valued draws available")
        p = self.matrix_dim
        return self.draws.reshape(-1, p, p)


def summarize_draws(draws, source_id: int = 1, nu: Optional[float] = None,
                    matrix_dim: Optional[int] = None) -> SourceDraws:
    """Cache the mean and sample covariance (denominator ``L - 1``) of a
    draw matrix.

    A singular covariance is repaired by adding ``1e-9 * trace / q`` to the
    diagonal (``1e-9`` when the trace is zero).
    """
    d = np.asarray(draws, dtype=float)
    if d.ndim == 1:
        d = d[:, None]
    L = d.shape[0]
    if L < 2:
        raise InsufficientSamplesError(f"need at least 2 draws, got {L}")
    if not np.all(np.isfinite(d)):
        raise InputError(f"source {source_id}: non-finite draws")
    mean = d.mean(axis=0)
    centred = d - mean
    cov = centred.T @ centred / (L - 1)
    cov = 0.5 * (cov + cov.T)
    chol, jitter = cholesky_jitter(cov)
    if jitter:
        cov = cov + jitter * np.eye(cov.shape[0])
    ms = MatrixSym(cov, check=False)
    ms._chol = chol
    ms.jitter = jitter
    return SourceDraws(source_id=int(source_id), draws=d, mean=mean, cov=ms,
                       n_draws=L, nu=nu, matrix_dim=matrix_dim)


# -- synthetic generators ---------------------------------------------------


def _check_common(J, n_j):
    if J < 2:
        raise DomainError("J must be at least 2")
    ns = np.broadcast_to(np.asarray(n_j, dtype=int), (J,))
    if np.any(ns < 1):
        raise DomainError("every source needs n_j >= 1")
    return ns


def generate_example1(J: int, n_j, mu: float, sigma2: float,
                      rng: RandomStream) -> HierarchicalDataset:
    """``theta_j ~ N(mu, sigma2)``, ``x_ji ~ N(theta_j, 1)``."""
    ns = _check_common(J, n_j)
    if not sigma2 > 0:
        raise DomainError("sigma2 must be positive")
    gen = rng.gen
    theta = mu + math.sqrt(sigma2) * gen.standard_normal(J)
    sources = [SourceData(j + 1, theta[j] + gen.standard_normal(ns[j]))
               for j in range(J)]
    meta = {"example": "example1", "truth": {"mu": mu, "sigma2": sigma2},
            "theta": theta.tolist(), "J": J, "n_j": ns.tolist()}
    return HierarchicalDataset(sources, meta)


def generate_example2(J: int, n_j, p: int, phi, kappa: float,
                      rng: RandomStream) -> HierarchicalDataset:
    """``Theta_j ~ IW_p(phi, kappa)``, ``x_ji ~ N_p(0, Theta_j)``."""
    ns = _check_common(J, n_j)
    if not kappa > p - 1:
        raise DomainError(f"kappa={kappa} must exceed p - 1 = {p - 1}")
    phi_m = MatrixSym(np.asarray(phi, dtype=float).reshape(p, p))
    gen = rng.gen
    thetas, sources = [], []
    for j in range(J):
        th = inv_wishart_rvs(phi_m.chol, kappa, gen)
        c, _ = cholesky_jitter(th)
        x = gen.standard_normal((ns[j], p)) @ c.T
        thetas.append(th)
        sources.append(SourceData(j + 1, x))
    phi_out = float(phi_m.values[0, 0]) if p == 1 else phi_m.values.tolist()
    meta = {"example": "example2", "truth": {"phi": phi_out, "kappa": kappa},
            "theta": [t.tolist() for t in thetas], "J": J, "n_j": ns.tolist(), "p": p}
    return HierarchicalDataset(sources, meta)


def generate_example3(J: int, n_j, beta0: float, sigma_u2: float, sigma_v2: float,
                      rng: RandomStream) -> HierarchicalDataset:
    """Variance components: ``y_ji = beta0 + u_j + v_ji``."""
    ns = _check_common(J, n_j)
    if sigma_u2 < 0 or sigma_v2 < 0:
        raise DomainError("variances must be non-negative")
    gen = rng.gen
    u = math.sqrt(sigma_u2) * gen.standard_normal(J)
    sources = [SourceData(j + 1, beta0 + u[j] + math.sqrt(sigma_v2) * gen.standard_normal(ns[j]))
               for j in range(J)]
    meta = {"example": "example3",
            "truth": {"beta0": beta0, "sigma_u2": sigma_u2, "sigma_v2": sigma_v2},
            "theta": (beta0 + u).tolist(), "J": J, "n_j": ns.tolist()}
    return HierarchicalDataset(sources, meta)


# -- CSV serialization ------------------------------------------------------


def write_dataset_csv(dataset: HierarchicalDataset, path) -> None:
    """Columns ``source_id, obs_index, y_1..y_d[, c_1..c_k]`` with a header."""
    d = dataset.sources[0].dim
    ks = {0 if s.covariates is None else s.covariates.shape[1] for s in dataset}
    if len(ks) != 1:
        raise InputError("covariates must be present for all sources or none")
    k = ks.pop()
    header = ["source_id", "obs_index", *[f"y_{i + 1}" for i in range(d)],
              *[f"c_{i + 1}" for i in range(k)]]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for s in dataset:
            for i in range(s.n):
                row = [s.source_id, i + 1, *(repr(float(v)) for v in s.observations[i])]
                if k:
                    row.extend(repr(float(v)) for v in s.covariates[i])
                w.writerow(row)


def read_dataset_csv(path, meta: Optional[dict] = None) -> HierarchicalDataset:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["source_id", "obs_index"]:
            raise InputError(f"{path}: header must start with source_id,obs_index")
        ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
        ccols = [i for i, h in enumerate(header) if h.startswith("c_")]
        if not ycols:
            raise InputError(f"{path}: no y_ columns")
        groups: dict = {}
        for lineno, row in enumerate(reader, start=2):
            try:
                sid = int(row[0])
                y = [float(row[i]) for i in ycols]
                c = [float(row[i]) for i in ccols]
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            groups.setdefault(sid, ([], []))
            groups[sid][0].append(y)
            groups[sid][1].append(c)
    sources = [SourceData(sid, np.array(ys), np.array(cs) if ccols else None)
               for sid, (ys, cs) in sorted(groups.items())]
    return HierarchicalDataset(sources, meta)
