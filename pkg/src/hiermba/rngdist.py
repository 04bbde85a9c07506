"""Random streams, symmetric matrices and the distribution kernels used by
the samplers.

Every sampler takes an explicit :class:`RandomStream`. Streams are keyed by
``(seed, stream_id)`` through :class:`numpy.random.SeedSequence` spawn keys,
so per-source substreams are independent by construction and a stream's
draw sequence never depends on which worker consumes it.

Parametrizations
----------------
``W_p(S, v)``
    Wishart with scale ``S`` and ``v`` degrees of freedom, mean ``v * S``.
``IW_p(S, v)``
    Inverse-Wishart, ``X ~ IW_p(S, v)`` iff ``X^{-1} ~ W_p(S^{-1}, v)``;
    mean ``S / (v - p - 1)``. For ``p = 1`` this is an inverse-gamma with
    shape ``v/2`` and scale ``S/2``.
``GIG(p, a, b)``
    Density proportional to ``x^(p-1) exp(-(a x + b / x) / 2)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg, special, stats

from .errors import DefinitenessError, DomainError

__all__ = [
    "RandomStream",
    "MatrixSym",
    "as_matrix_sym",
    "cholesky_jitter",
    "sample_mvn",
    "logpdf_mvn",
    "sample_wishart",
    "sample_inv_wishart",
    "logpdf_wishart",
    "logpdf_inv_wishart",
    "sample_gamma",
    "sample_gig",
    "logpdf_half_cauchy",
    "wishart_rvs",
    "inv_wishart_rvs",
]

_MASK64 = (1 << 64) - 1
_LOG_2PI = math.log(2.0 * math.pi)
JITTER_REL = 1e-9


class RandomStream:
    """Seedable, splittable random stream.

    Parameters
    ----------
    seed : int
        64-bit unsigned base seed.
    stream_id : int
        Substream index; the parallel executor uses the source id.
    path : tuple of int
        Further spawn keys for nested substreams (see :meth:`child`).
    """

    __slots__ = ("seed", "stream_id", "path", "gen")

    def __init__(self, seed: int, stream_id: int = 0, path: tuple = ()):
        seed = int(seed)
        stream_id = int(stream_id)
        if not 0 <= seed <= _MASK64 or not 0 <= stream_id <= _MASK64:
            raise ValueError("seed and stream_id must be 64-bit unsigned integers")
        self.seed = seed
        self.stream_id = stream_id
        self.path = tuple(int(k) for k in path)
        ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_id, *self.path))
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "RandomStream":
        """Independent substream identified by ``keys`` below this one."""
        return RandomStream(self.seed, self.stream_id, self.path + tuple(keys))

    def __repr__(self):
        return f"RandomStream(seed={self.seed}, stream_id={self.stream_id}, path={self.path})"

    def __getstate__(self):
        return (self.seed, self.stream_id, self.path, self.gen.bit_generator.state)

    def __setstate__(self, state):
        seed, stream_id, path, bg_state = state
        self.__init__(seed, stream_id, path)
        self.gen.bit_generator.state = bg_state


def derive_seed(seed: int, *keys: int) -> int:
    """Deterministic 64-bit seed derived from a base seed and integer keys."""
    ss = np.random.SeedSequence([int(seed) & _MASK64, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def cholesky_jitter(a: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with one jittered retry.

    On failure the diagonal is inflated by ``1e-9 * trace / p`` (or ``1e-9``
    when the trace is not positive) and the factorization retried once.

    Returns
    -------
    chol : ndarray
        Lower-triangular factor with strictly positive diagonal.
    jitter : float
        Amount added to the diagonal (0.0 if none was needed).
    """
    a = np.asarray(a, dtype=float)
    try:
        chol = np.linalg.cholesky(a)
        if np.all(np.diag(chol) > 0) and np.all(np.isfinite(chol)):
            return chol, 0.0
    except np.linalg.LinAlgError:
        pass
    p = a.shape[0]
    tr = float(np.trace(a))
    jitter = JITTER_REL * (tr / p if tr > 0 and np.isfinite(tr) else 1.0)
    try:
        chol = np.linalg.cholesky(a + jitter * np.eye(p))
    except np.linalg.LinAlgError as exc:
        raise DefinitenessError("matrix is not positive definite") from exc
    if not (np.all(np.diag(chol) > 0) and np.all(np.isfinite(chol))):
        raise DefinitenessError("matrix is not positive definite")
    return chol, jitter


class MatrixSym:
    """Symmetric positive-definite matrix with a lazily computed Cholesky
    factor.

    Symmetry is checked at construction (relative tolerance 1e-12);
    definiteness is checked when the factor is first needed. If the
    factorization required jitter, :attr:`values` is updated to the
    jittered matrix so the factor and the values stay consistent.
    """

    __slots__ = ("values", "_chol", "jitter")

    def __init__(self, values, check: bool = True):
        a = np.array(values, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {a.shape}")
        if check:
            scale = max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
            if not np.all(np.isfinite(a)):
                raise DefinitenessError("matrix has non-finite entries")
            if np.max(np.abs(a - a.T)) > 1e-12 * scale:
                raise ValueError("matrix is not symmetric")
        self.values = a
        self._chol = None
        self.jitter = 0.0

    @classmethod
    def identity(cls, p: int) -> "MatrixSym":
        return cls(np.eye(p), check=False)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def chol(self) -> np.ndarray:
        if self._chol is None:
            chol, jitter = cholesky_jitter(self.values)
            if jitter:
                self.values = self.values + jitter * np.eye(self.dim)
                self.jitter = jitter
            self._chol = chol
        return self._chol

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def inverse(self) -> np.ndarray:
        c_inv = linalg.solve_triangular(self.chol, np.eye(self.dim), lower=True)
        return c_inv.T @ c_inv

    def solve(self, b) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), np.asarray(b, dtype=float))

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __repr__(self):
        return f"MatrixSym({self.values.tolist()})"


def as_matrix_sym(m) -> MatrixSym:
    return m if isinstance(m, MatrixSym) else MatrixSym(m)


def sample_mvn(mean, cov, rng: RandomStream) -> np.ndarray:
    """One draw from ``N_p(mean, cov)``."""
    cov = as_matrix_sym(cov)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if mean.shape != (cov.dim,):
        raise ValueError("mean and covariance dimensions disagree")
    z = rng.gen.standard_normal(cov.dim)
    return mean + cov.chol @ z


def logpdf_mvn(x, mean, cov) -> float:
    """Exact multivariate normal log-density."""
    cov = as_matrix_sym(cov)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if x.shape != mean.shape or x.shape != (cov.dim,):
        raise ValueError("dimension mismatch in logpdf_mvn")
    z = linalg.solve_triangular(cov.chol, x - mean, lower=True)
    return -0.5 * (cov.dim * _LOG_2PI + cov.logdet() + float(z @ z))


def _check_dof(dof, p):
    if not dof > p - 1:
        raise DomainError(f"degrees of freedom {dof} must exceed dim - 1 = {p - 1}")


def _bartlett(p: int, dof: float, gen: np.random.Generator) -> np.ndarray:
    a = np.zeros((p, p))
    a[np.diag_indices(p)] = np.sqrt(gen.chisquare(dof - np.arange(p)))
    if p > 1:
        a[np.tril_indices(p, -1)] = gen.standard_normal(p * (p - 1) // 2)
    return a


def wishart_rvs(scale_chol: np.ndarray, dof: float, gen: np.random.Generator) -> np.ndarray:
    """Bartlett draw from ``W_p(L L^T, dof)`` given the factor ``L``."""
    p = scale_chol.shape[0]
    if p == 1:
        return scale_chol * scale_chol * gen.chisquare(dof)
    la = scale_chol @ _bartlett(p, dof, gen)
    return la @ la.T


def inv_wishart_rvs(scale_chol: np.ndarray, dof: float, gen: np.random.Generator) -> np.ndarray:
    """Draw from ``IW_p(U U^T, dof)`` given the lower factor ``U`` of the scale.

    Uses ``X^{-1} = M A A^T M^T`` with ``M = U^{-T}`` (a square root of the
    inverse scale), hence ``X = (U A^{-T})(U A^{-T})^T``.
    """
    p = scale_chol.shape[0]
    if p == 1:
        return scale_chol * scale_chol / gen.chisquare(dof)
    a = _bartlett(p, dof, gen)
    a_inv = linalg.solve_triangular(a, np.eye(p), lower=True)
    t = scale_chol @ a_inv.T
    return t @ t.T


def sample_wishart(scale, dof: float, rng: RandomStream) -> MatrixSym:
    """One draw from ``W_p(scale, dof)`` by the Bartlett decomposition."""
    scale = as_matrix_sym(scale)
    _check_dof(dof, scale.dim)
    return MatrixSym(wishart_rvs(scale.chol, dof, rng.gen), check=False)


def sample_inv_wishart(scale, dof: float, rng: RandomStream) -> MatrixSym:
    """One draw from ``IW_p(scale, dof)``."""
    scale = as_matrix_sym(scale)
    _check_dof(dof, scale.dim)
    return MatrixSym(inv_wishart_rvs(scale.chol, dof, rng.gen), check=False)


def logpdf_wishart(x, scale, dof: float) -> float:
    """Exact ``W_p(scale, dof)`` log-density at ``x``."""
    x = as_matrix_sym(x)
    scale = as_matrix_sym(scale)
    p = scale.dim
    _check_dof(dof, p)
    tr = float(np.trace(scale.solve(x.values)))
    return (
        0.5 * (dof - p - 1) * x.logdet()
        - 0.5 * tr
        - 0.5 * dof * p * math.log(2.0)
        - 0.5 * dof * scale.logdet()
        - special.multigammaln(0.5 * dof, p)
    )


def logpdf_inv_wishart(x, scale, dof: float) -> float:
    """Exact ``IW_p(scale, dof)`` log-density at ``x``."""
    x = as_matrix_sym(x)
    scale = as_matrix_sym(scale)
    p = scale.dim
    _check_dof(dof, p)
    tr = float(np.trace(x.solve(scale.values)))
    return (
        0.5 * dof * scale.logdet()
        - 0.5 * dof * p * math.log(2.0)
        - special.multigammaln(0.5 * dof, p)
        - 0.5 * (dof + p + 1) * x.logdet()
        - 0.5 * tr
    )


def sample_gamma(shape: float, rate: float, rng: RandomStream, size=None):
    """Gamma draw(s) with the given shape and rate (mean ``shape / rate``)."""
    if not (shape > 0 and rate > 0):
        raise DomainError("gamma shape and rate must be positive")
    return rng.gen.gamma(shape, 1.0 / rate, size)


def sample_gig(p: float, a: float, b: float, rng: RandomStream) -> float:
    """One draw from ``GIG(p, a, b)``.

    For ``p > 0`` the gamma kernel ``x^(p-1) exp(-a x / 2)`` dominates the
    target, so a Gamma(p, rate a/2) proposal accepted with probability
    ``exp(-b / (2x))`` is exact. Other cases, or a run of rejections,
    fall back to :data:`scipy.stats.geninvgauss`.
    """
    if not (a > 0 and b >= 0):
        raise DomainError("GIG requires a > 0 and b >= 0")
    gen = rng.gen
    if p > 0:
        if b == 0:
            return float(gen.gamma(p, 2.0 / a))
        for _ in range(64):
            x = gen.gamma(p, 2.0 / a)
            if gen.random() < math.exp(-b / (2.0 * x)):
                return float(x)
    if b == 0:
        raise DomainError("GIG with b = 0 requires p > 0")
    y = stats.geninvgauss.rvs(p, math.sqrt(a * b), random_state=gen)
    return float(math.sqrt(b / a) * y)


def logpdf_half_cauchy(x: float, scale: float) -> float:
    """Log-density of the half-Cauchy distribution on ``[0, inf)``."""
    if not scale > 0:
        raise DomainError("half-Cauchy scale must be positive")
    if x < 0:
        return -math.inf
    u = x / scale
    return math.log(2.0 / (math.pi * scale)) - math.log1p(u * u)
