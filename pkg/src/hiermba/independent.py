"""Stage one: per-source posterior sampling with the hyperparameters held
fixed.

The conjugate samplers draw exact i.i.d. variates; :func:`rw_metropolis`
covers the non-conjugate case. Every function here reads only its own
source's data, so sources can be processed in any order or in parallel.
"""

from __future__ import annotations

import csv
import math
import time
from collections import defaultdict
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, IngestionError, InputError, StuckChainError
from .model import SourceData, SourceDraws, summarize_draws
from .rngdist import RandomStream, cholesky_jitter, inv_wishart_rvs

__all__ = [
    "indep_normal",
    "indep_invwishart",
    "indep_variance",
    "normal_posterior_params",
    "invwishart_posterior_params",
    "variance_posterior_params",
    "rw_metropolis",
    "metropolis_chain",
    "write_draws_csv",
    "read_draws_csv",
]


def _get(fixed, key, default=None):
    if isinstance(fixed, Mapping):
        if key in fixed:
            return fixed[key]
    elif hasattr(fixed, key):
        return getattr(fixed, key)
    if default is None:
        raise ConfigError(f"fixed hyperparameters lack {key!r}")
    return default


def _check_L(L):
    if int(L) < 2:
        raise ConfigError("L must be at least 2")
    return int(L)


def normal_posterior_params(x, mu: float, sigma2: float, obs_var: float = 1.0):
    """Mean and variance of ``theta | x`` for ``x_i ~ N(theta, obs_var)``
    and ``theta ~ N(mu, sigma2)``."""
    x = np.asarray(x, dtype=float).ravel()
    if not (sigma2 > 0 and obs_var > 0):
        raise ConfigError("variances must be positive")
    v = 1.0 / (1.0 / sigma2 + x.size / obs_var)
    return v * (mu / sigma2 + x.sum() / obs_var), v


def indep_normal(source: SourceData, fixed, L: int, rng: RandomStream,
                 obs_var: float = 1.0) -> SourceDraws:
    """Exact draws of a scalar source mean under a fixed normal prior.

    Parameters
    ----------
    source : SourceData
        Scalar observations.
    fixed : mapping or object
        Must provide ``mu`` and ``sigma2``.
    L : int
        Number of draws.
    obs_var : float
        Known observation variance (1 for the unit-variance model).
    """
    L = _check_L(L)
    t0 = time.perf_counter()
    if source.dim != 1:
        raise InputError("indep_normal expects scalar observations")
    m, v = normal_posterior_params(source.values, float(_get(fixed, "mu")),
                                   float(_get(fixed, "sigma2")), obs_var)
    draws = m + math.sqrt(v) * rng.gen.standard_normal(L)
    out = summarize_draws(draws, source_id=source.source_id)
    out.seconds = time.perf_counter() - t0
    return out


def invwishart_posterior_params(x, phi, kappa: float):
    """Scale and dof of ``Theta | x ~ IW(phi + sum x x^T, kappa + n)`` for
    zero-mean normal rows ``x``. An empty ``x`` returns the prior."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    p = phi.shape[0]
    x = np.asarray(x, dtype=float).reshape(-1, p)
    return phi + x.T @ x, float(kappa) + x.shape[0]


def indep_invwishart(source: SourceData, fixed, L: int, rng: RandomStream) -> SourceDraws:
    """Exact draws of a source covariance under a fixed ``IW(phi, kappa)``
    prior. Rows of the returned draws are flattened ``p x p`` matrices and
    ``nu`` is set to the source sample size."""
    L = _check_L(L)
    t0 = time.perf_counter()
    scale, dof = invwishart_posterior_params(source.observations, _get(fixed, "phi"),
                                             _get(fixed, "kappa"))
    p = scale.shape[0]
    gen = rng.gen
    if p == 1:
        draws = (scale[0, 0] / gen.chisquare(dof, L))[:, None]
    else:
        c, _ = cholesky_jitter(scale)
        draws = np.stack([inv_wishart_rvs(c, dof, gen).ravel() for _ in range(L)])
    out = summarize_draws(draws, source_id=source.source_id, nu=float(source.n), matrix_dim=p)
    out.seconds = time.perf_counter() - t0
    return out


def variance_posterior_params(y, center: float, sigma_v2: float, kappa: float):
    """Scale and dof of ``tau2 | y ~ IW_1(sigma_v2 (kappa - 2) + SS, kappa + n)``
    where ``SS`` is the sum of squared residuals about ``center``."""
    r = np.asarray(y, dtype=float).ravel() - float(center)
    return sigma_v2 * (kappa - 2.0) + float(r @ r), float(kappa) + r.size


def indep_variance(source: SourceData, center, fixed, L: int, rng: RandomStream) -> SourceDraws:
    """Exact draws of a source's residual variance with the residuals taken
    about a plug-in ``center``; ``fixed`` provides ``sigma_v2`` and ``kappa``."""
    L = _check_L(L)
    t0 = time.perf_counter()
    c = float(np.asarray(center, dtype=float).ravel()[0])
    kappa = float(_get(fixed, "kappa"))
    if not kappa > 2:
        raise ConfigError("kappa must exceed 2 for the sigma_v2 (kappa - 2) scale")
    scale, dof = variance_posterior_params(source.values, c, float(_get(fixed, "sigma_v2")), kappa)
    draws = (scale / rng.gen.chisquare(dof, L))[:, None]
    out = summarize_draws(draws, source_id=source.source_id, nu=float(source.n), matrix_dim=1)
    out.seconds = time.perf_counter() - t0
    return out


# -- random-walk Metropolis -------------------------------------------------


def _proposal_factor(step_cov) -> np.ndarray:
    """Square-root factor of a possibly singular step covariance."""
    a = np.asarray(step_cov, dtype=float)
    a = np.atleast_2d(a)
    try:
        c = np.linalg.cholesky(a)
        if np.all(np.diag(c) > 0):
            return c
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    return v * np.sqrt(np.clip(w, 0.0, None))


def _eval(logpost, x) -> float:
    lp = float(logpost(x))
    if math.isnan(lp):
        raise InputError(f"log posterior returned NaN at {x!r}")
    return lp


def metropolis_chain(logpost: Callable, init, step_cov, L: int, burn_in: int,
                     rng: RandomStream, target: float = 0.3):
    """Random-walk Metropolis with a Gaussian proposal.

    During burn-in the proposal scale is adapted by a Robbins-Monro
    recursion on ``log(scale)`` toward acceptance ``target``; the retained
    ``L`` iterations use the frozen scale, so they form a valid Metropolis
    chain.

    Returns
    -------
    draws : ndarray, shape (L, q)
    acceptance_rate : float
        Fraction of accepted proposals among the retained iterations.
    scale : float
        Final proposal scale multiplier.

    Raises
    ------
    StuckChainError
        After ``min(10 L, burn_in + L)`` consecutive rejections, so a chain
        that never moves fails even when the run is shorter than ``10 L``.
        A proposal equal to the current state counts as a rejection.
    """
    L = _check_L(L)
    burn_in = int(burn_in)
    if burn_in < 0:
        raise ConfigError("burn_in must be non-negative")
    x = np.atleast_1d(np.asarray(init, dtype=float)).copy()
    q = x.size
    lp = _eval(logpost, x)
    if not math.isfinite(lp):
        raise InputError("log posterior is not finite at the initial value")
    factor = _proposal_factor(step_cov).reshape(q, q)
    gen = rng.gen
    total = burn_in + L
    limit = min(10 * L, total)
    log_scale = 0.0
    scale = 1.0
    out = np.empty((L, q))
    accepted = 0
    run = 0
    for t in range(total):
        prop = x + scale * (factor @ gen.standard_normal(q))
        log_u = math.log(gen.random())
        if np.array_equal(prop, x):
            a_prob, ok = 0.0, False
        else:
            lp_new = _eval(logpost, prop)
            a_prob = 1.0 if lp_new >= lp else math.exp(lp_new - lp)
            ok = log_u < lp_new - lp
        if ok:
            x, lp = prop, lp_new
            run = 0
        else:
            run += 1
            if run >= limit:
                raise StuckChainError(f"{run} consecutive rejections")
        if t < burn_in:
            log_scale += (a_prob - target) / (t + 1) ** 0.6
            scale = math.exp(log_scale)
        else:
            out[t - burn_in] = x
            accepted += ok
    return out, accepted / L, scale


def rw_metropolis(logpost: Callable, init, step_cov, L: int, burn_in: int,
                  rng: RandomStream, source_id: int = 1, target: float = 0.3) -> SourceDraws:
    """Adaptive random-walk Metropolis returning the retained draws as a
    :class:`SourceDraws` (see :func:`metropolis_chain`)."""
    t0 = time.perf_counter()
    draws, rate, _ = metropolis_chain(logpost, init, step_cov, L, burn_in, rng, target)
    out = summarize_draws(draws, source_id=source_id)
    out.acceptance_rate = rate
    out.seconds = time.perf_counter() - t0
    return out


# -- CSV exchange of draws ---------------------------------------------------


def write_draws_csv(draws_list, path) -> None:
    """Write draws as ``source_id, draw_index, v_1..v_q`` rows."""
    draws_list = list(draws_list)
    if not draws_list:
        raise ConfigError("nothing to write")
    q = draws_list[0].q
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["source_id", "draw_index", *[f"v_{i + 1}" for i in range(q)]])
        for d in draws_list:
            if d.draws is None:
                raise ConfigError(f"source {d.source_id} carries summaries only")
            for i, row in enumerate(d.draws):
                w.writerow([d.source_id, i, *(repr(float(v)) for v in row)])


def read_draws_csv(path, nu: Mapping = None, matrix_dim: int = None) -> list:
    """Read draws written by :func:`write_draws_csv` (or produced elsewhere
    in the same layout). Returns summaries ordered by source id."""
    rows = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if header[:2] != ["source_id", "draw_index"] or len(header) < 3:
            raise IngestionError(f"{path}: expected header source_id,draw_index,v_1..")
        for k, r in enumerate(reader, start=2):
            if len(r) != len(header):
                raise IngestionError(f"{path}:{k}: expected {len(header)} fields")
            try:
                rows[int(r[0])].append((int(r[1]), [float(v) for v in r[2:]]))
            except ValueError as exc:
                raise IngestionError(f"{path}:{k}: {exc}") from None
    if not rows:
        raise IngestionError(f"{path}: no draws")
    out = []
    for sid in sorted(rows):
        vals = np.array([v for _, v in sorted(rows[sid])])
        sd_nu = None if nu is None else nu.get(sid)
        out.append(summarize_draws(vals, source_id=sid, nu=sd_nu, matrix_dim=matrix_dim))
    return out
