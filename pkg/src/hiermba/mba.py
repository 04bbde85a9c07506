"""Substitute hierarchical model: combine independently sampled source
posteriors through an L-th-root scaled likelihood.

Two conjugate families are supported for the per-source parameter
``psi_j`` (the expectation of the source posterior):

``mvnormal``
    ``theta*_jl ~ N_q(psi_j, S_j)`` with ``psi_j ~ N_q(mu, Sigma)``.
``invwishart``
    ``Theta*_jl ~ W_p(Psi_j / nu_j, nu_j)`` with ``Psi_j ~ IW_p(Phi, kappa)``.

Hyperparameter updates are the same conditionals a direct Gibbs sampler
uses, with ``psi_j`` in place of ``theta_j``; :mod:`hiermba.fhm` imports
them from here.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np

from .errors import ConfigError, DomainError
from .model import ChainTrace, IWHyper, NormalHyper, SourceDraws
from .rngdist import (
    MatrixSym,
    RandomStream,
    as_matrix_sym,
    cholesky_jitter,
    inv_wishart_rvs,
    logpdf_mvn,
    logpdf_wishart,
    sample_gig,
    wishart_rvs,
)

__all__ = [
    "NormalPrior",
    "WishartPrior",
    "InvWishartPrior",
    "SubstituteSpec",
    "scaled_loglik",
    "mvn_full_conditional",
    "iw_full_conditional",
    "mu_full_conditional",
    "sigma_full_conditional",
    "phi_full_conditional",
    "hyper_update_normal",
    "hyper_update_iw",
    "run_mba",
    "MVNORMAL",
    "INVWISHART",
]

MVNORMAL = "mvnormal"
INVWISHART = "invwishart"


# -- hyperpriors ------------------------------------------------------------


@dataclass
class NormalPrior:
    """``mu ~ N_q(mu0, sigma0)`` and ``Sigma ~ IW_q(omega, k)``, independent."""

    mu0: np.ndarray
    sigma0: np.ndarray
    omega: np.ndarray
    k: float

    def __post_init__(self):
        self.mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        q = self.mu0.shape[0]
        self.sigma0 = np.asarray(self.sigma0, dtype=float).reshape(q, q)
        self.omega = np.asarray(self.omega, dtype=float).reshape(q, q)
        if not self.k > q - 1:
            raise DomainError(f"k={self.k} must exceed q - 1 = {q - 1}")
        cholesky_jitter(self.sigma0)
        cholesky_jitter(self.omega)

    @classmethod
    def scalar(cls, mu0=0.0, sigma0_2=1.0, omega=1.0, k=3.0) -> "NormalPrior":
        return cls(np.array([mu0]), np.array([[sigma0_2]]), np.array([[omega]]), k)

    @property
    def q(self) -> int:
        return self.mu0.shape[0]

    @cached_property
    def sigma0_inv(self) -> np.ndarray:
        return MatrixSym(self.sigma0).inverse()

    @cached_property
    def sigma0_inv_mu0(self) -> np.ndarray:
        return self.sigma0_inv @ self.mu0

    def initial_state(self) -> NormalHyper:
        q = self.q
        sigma = self.omega / (self.k - q - 1) if self.k > q + 1 else self.omega
        return NormalHyper(self.mu0.copy(), MatrixSym(sigma))


@dataclass
class WishartPrior:
    """``Phi ~ W_p(V, m)``; conjugate for inverse-Wishart sources."""

    V: np.ndarray
    m: float

    def __post_init__(self):
        self.V = np.atleast_2d(np.asarray(self.V, dtype=float))
        if not self.m > self.V.shape[0] - 1:
            raise DomainError("Wishart prior dof must exceed p - 1")

    @cached_property
    def V_inv(self) -> np.ndarray:
        return MatrixSym(self.V).inverse()

    def initial_phi(self) -> np.ndarray:
        return self.m * self.V


@dataclass
class InvWishartPrior:
    """``Phi ~ IW_1(V, m)`` (scalar only).

    Combined with ``J`` inverse-Wishart sources with known ``kappa`` the
    full conditional of ``Phi`` is ``GIG((J kappa - m) / 2, sum 1/Psi_j, V)``.
    """

    V: float
    m: float

    def __post_init__(self):
        self.V = float(np.asarray(self.V, dtype=float).reshape(()))
        if not (self.V > 0 and self.m > 0):
            raise DomainError("inverse-Wishart prior needs V > 0 and m > 0")

    def initial_phi(self) -> np.ndarray:
        v = self.V / (self.m - 2) if self.m > 2 else self.V
        return np.array([[v]])


Hyperprior = Union[NormalPrior, WishartPrior, InvWishartPrior]


# -- hyperparameter conditionals --------------------------------------------


def _as_rows(psis) -> np.ndarray:
    a = np.asarray(psis, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def mu_full_conditional(psis, sigma, prior: NormalPrior):
    """Mean and covariance of ``mu | Sigma, psi_1..psi_J``."""
    psis = _as_rows(psis)
    J = psis.shape[0]
    s_inv = as_matrix_sym(sigma).inverse()
    prec = prior.sigma0_inv + J * s_inv
    cov = MatrixSym(0.5 * (prec + prec.T)).inverse()
    mean = cov @ (prior.sigma0_inv_mu0 + s_inv @ psis.sum(axis=0))
    return mean, cov


def sigma_full_conditional(psis, mu, prior: NormalPrior):
    """Scale and dof of ``Sigma | mu, psi_1..psi_J ~ IW``."""
    dev = _as_rows(psis) - np.asarray(mu, dtype=float)
    return prior.omega + dev.T @ dev, prior.k + dev.shape[0]


def hyper_update_normal(psis, prior: NormalPrior, current: NormalHyper,
                        rng: RandomStream) -> NormalHyper:
    """One Gibbs sweep over ``(mu, Sigma)``: ``mu`` first, then ``Sigma``."""
    gen = rng.gen
    if prior.q == 1:
        return _hyper_update_normal_scalar(psis, prior, current, gen)
    mean, cov = mu_full_conditional(psis, current.sigma, prior)
    c, _ = cholesky_jitter(cov)
    mu = mean + c @ gen.standard_normal(mean.shape[0])
    scale, dof = sigma_full_conditional(psis, mu, prior)
    sc, _ = cholesky_jitter(scale)
    sigma = inv_wishart_rvs(sc, dof, gen)
    return NormalHyper(mu, MatrixSym(0.5 * (sigma + sigma.T), check=False))


def _hyper_update_normal_scalar(psis, prior: NormalPrior, current, gen) -> NormalHyper:
    # same variates as the matrix path, without the linear-algebra overhead
    x = np.asarray(psis, dtype=float).ravel()
    J = x.size
    s2 = float(np.asarray(current.sigma)[0, 0])
    p0 = prior.sigma0_inv[0, 0]
    prec = p0 + J / s2
    mean = (p0 * prior.mu0[0] + x.sum() / s2) / prec
    mu = mean + gen.standard_normal() / math.sqrt(prec)
    dev = x - mu
    sigma = (prior.omega[0, 0] + float(dev @ dev)) / gen.chisquare(prior.k + J)
    return NormalHyper(np.array([mu]), MatrixSym(np.array([[sigma]]), check=False))


def phi_full_conditional(psi_mats, kappa: float, prior):
    """Parameters of ``Phi | Psi_1..Psi_J``.

    Returns ``("wishart", scale, dof)`` for a :class:`WishartPrior` and
    ``("gig", p, a, b)`` for an :class:`InvWishartPrior`.
    """
    mats = np.asarray(psi_mats, dtype=float)
    if mats.ndim == 1:
        mats = mats[:, None, None]
    J, p, _ = mats.shape
    if isinstance(prior, WishartPrior):
        if p == 1:
            inv_sum = np.array([[np.sum(1.0 / mats[:, 0, 0])]])
        else:
            inv_sum = sum(MatrixSym(m, check=False).inverse() for m in mats)
        prec = prior.V_inv + inv_sum
        scale = MatrixSym(0.5 * (prec + prec.T)).inverse()
        return ("wishart", scale, prior.m + J * kappa)
    if isinstance(prior, InvWishartPrior):
        if p != 1:
            raise ConfigError("inverse-Wishart hyperprior on Phi is scalar only")
        a = float(np.sum(1.0 / mats[:, 0, 0]))
        return ("gig", 0.5 * (J * kappa - prior.m), a, prior.V)
    raise ConfigError(f"unsupported hyperprior {type(prior).__name__}")


def hyper_update_iw(psi_mats, prior, current: IWHyper, rng: RandomStream) -> IWHyper:
    """Draw ``Phi`` from its full conditional; ``kappa`` stays fixed."""
    if isinstance(prior, WishartPrior) and prior.V.shape[0] == 1:
        mats = np.asarray(psi_mats, dtype=float).ravel()
        scale = 1.0 / (prior.V_inv[0, 0] + float(np.sum(1.0 / mats)))
        phi = scale * rng.gen.chisquare(prior.m + mats.size * current.kappa)
        return IWHyper(MatrixSym(np.array([[phi]]), check=False), current.kappa)
    kind, *params = phi_full_conditional(psi_mats, current.kappa, prior)
    if kind == "wishart":
        scale, dof = params
        c, _ = cholesky_jitter(scale)
        phi = wishart_rvs(c, dof, rng.gen)
    else:
        p, a, b = params
        phi = np.array([[sample_gig(p, a, b, rng)]])
    return IWHyper(MatrixSym(0.5 * (phi + phi.T), check=False), current.kappa)


# -- substitute model -------------------------------------------------------


@dataclass
class SubstituteSpec:
    """Everything the substitute Gibbs sampler needs.

    Only the cached summaries of each :class:`SourceDraws` are read
    (``mean`` and ``cov`` for ``mvnormal``; ``mean`` and ``nu`` for
    ``invwishart``), so summary-only inputs work.
    """

    family: str
    draws: list
    prior: Hyperprior
    kappa: Optional[float] = None

    def __post_init__(self):
        if self.family not in (MVNORMAL, INVWISHART):
            raise ConfigError(f"unknown family {self.family!r}")
        if not self.draws:
            raise ConfigError("substitute model needs at least one source")
        qs = {d.q for d in self.draws}
        if len(qs) != 1:
            raise ConfigError(f"sources disagree on draw dimension: {sorted(qs)}")
        ids = [d.source_id for d in self.draws]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate source ids")
        if self.family == MVNORMAL:
            if not isinstance(self.prior, NormalPrior):
                raise ConfigError("mvnormal family needs a NormalPrior")
            if self.prior.q != qs.pop():
                raise ConfigError("prior dimension does not match the draws")
        else:
            if not isinstance(self.prior, (WishartPrior, InvWishartPrior)):
                raise ConfigError("invwishart family needs a Wishart or inverse-Wishart prior")
            if self.kappa is None:
                raise ConfigError("invwishart family needs kappa")
            for d in self.draws:
                if d.nu is None:
                    raise ConfigError(f"source {d.source_id}: nu is required")
                if d.matrix_dim is None:
                    p = int(round(np.sqrt(d.q)))
                    if p * p != d.q:
                        raise ConfigError(f"source {d.source_id}: draws are not square matrices")
                    d.matrix_dim = p

    @property
    def ordered(self) -> list:
        return sorted(self.draws, key=lambda d: d.source_id)


def scaled_loglik(psi, draws: SourceDraws, family: str) -> float:
    """``(1/L) sum_l log f*(theta*_jl | psi)``, the log of the L-th-root
    scaled likelihood.

    Returns ``-inf`` when ``psi`` is outside the support.
    """
    if draws.draws is None:
        raise ConfigError("scaled_loglik needs the raw draws")
    L = draws.draws.shape[0]
    if family == MVNORMAL:
        psi = np.atleast_1d(np.asarray(psi, dtype=float))
        total = sum(logpdf_mvn(x, psi, draws.cov) for x in draws.draws)
        return total / L
    if family == INVWISHART:
        if draws.nu is None:
            raise ConfigError("nu is required for the inverse-Wishart family")
        p = draws.matrix_dim or int(round(np.sqrt(draws.q)))
        psi = np.asarray(psi, dtype=float).reshape(p, p)
        try:
            c, _ = cholesky_jitter(psi)
        except Exception:
            return -np.inf
        if np.any(np.diag(c) <= 0):
            return -np.inf
        scale = MatrixSym(psi / draws.nu, check=False)
        total = sum(logpdf_wishart(x.reshape(p, p), scale, draws.nu) for x in draws.draws)
        return total / L
    raise ConfigError(f"unknown family {family!r}")


def mvn_full_conditional(draws: SourceDraws, hyper: NormalHyper):
    """``psi_j | mu, Sigma, theta*_j ~ N(mu', Sigma')`` with
    ``Sigma' = (Sigma^-1 + S_j^-1)^-1`` and
    ``mu' = Sigma' (Sigma^-1 mu + S_j^-1 mean(theta*_j))``.

    The number of draws does not enter: only their mean and ``S_j`` do.
    """
    s_inv = as_matrix_sym(hyper.sigma).inverse()
    sj_inv = draws.cov.inverse()
    prec = s_inv + sj_inv
    cov = MatrixSym(0.5 * (prec + prec.T)).inverse()
    mean = cov @ (s_inv @ np.atleast_1d(hyper.mu) + sj_inv @ draws.mean)
    return mean, MatrixSym(0.5 * (cov + cov.T))


def iw_full_conditional(draws: SourceDraws, hyper: IWHyper):
    """``Psi_j | Phi, Theta*_j ~ IW(Phi + nu_j mean(Theta*_j), kappa + nu_j)``."""
    if draws.nu is None:
        raise ConfigError(f"source {draws.source_id}: nu is required")
    p = hyper.phi.dim
    mean = draws.mean_matrix if draws.matrix_dim else draws.mean.reshape(p, p)
    scale = as_matrix_sym(hyper.phi).values + draws.nu * mean
    return MatrixSym(0.5 * (scale + scale.T)), hyper.kappa + draws.nu


def _tri_names(prefix: str, p: int) -> list:
    if p == 1:
        return [prefix]
    return [f"{prefix}_{a + 1}_{b + 1}" for a in range(p) for b in range(a, p)]


def _tri(m: np.ndarray) -> np.ndarray:
    p = m.shape[-1]
    iu = np.triu_indices(p)
    return m[..., iu[0], iu[1]]


def _run_mvnormal(spec: SubstituteSpec, iters: int, rng: RandomStream):
    srcs = spec.ordered
    prior = spec.prior
    J, q = len(srcs), prior.q
    means = np.stack([d.mean for d in srcs])
    sj_inv = np.stack([d.cov.inverse() for d in srcs])
    names = (["mu"] if q == 1 else [f"mu_{i + 1}" for i in range(q)])
    names += ["sigma2"] if q == 1 else _tri_names("sigma", q)
    if q == 1:
        names += [f"psi_{d.source_id}" for d in srcs]
    else:
        names += [f"psi_{d.source_id}_{c + 1}" for d in srcs for c in range(q)]
    ntri = q * (q + 1) // 2
    out = np.empty((iters, len(names)))
    state = prior.initial_state()
    psi = means.copy()
    gen = rng.gen
    if q == 1:
        sj, mj = sj_inv[:, 0, 0], means[:, 0]
        psi = mj.copy()
        for t in range(iters):
            state = hyper_update_normal(psi, prior, state, rng)
            mu, s2 = state.mu[0], state.sigma.values[0, 0]
            prec = 1.0 / s2 + sj
            psi = (mu / s2 + sj * mj) / prec + gen.standard_normal(J) / np.sqrt(prec)
            out[t, 0] = mu
            out[t, 1] = s2
            out[t, 2:] = psi
        return names, out
    for t in range(iters):
        state = hyper_update_normal(psi, prior, state, rng)
        s_inv = state.sigma.inverse()
        prec = s_inv[None] + sj_inv
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        rhs = (s_inv @ state.mu)[None] + np.einsum("jab,jb->ja", sj_inv, means)
        m = np.einsum("jab,jb->ja", cov, rhs)
        chol = np.linalg.cholesky(cov)
        psi = m + np.einsum("jab,jb->ja", chol, gen.standard_normal((J, q)))
        out[t, :q] = state.mu
        out[t, q:q + ntri] = _tri(state.sigma.values)
        out[t, q + ntri:] = psi.ravel()
    return names, out


def _run_invwishart(spec: SubstituteSpec, iters: int, rng: RandomStream):
    srcs = spec.ordered
    prior = spec.prior
    kappa = float(spec.kappa)
    J = len(srcs)
    p = srcs[0].matrix_dim
    means = np.stack([d.mean_matrix for d in srcs])
    nus = np.array([float(d.nu) for d in srcs])
    ntri = p * (p + 1) // 2
    names = _tri_names("phi", p) + _tri_names("psi_mean", p)
    names += [n for d in srcs for n in _tri_names(f"psi_{d.source_id}", p)]
    out = np.empty((iters, len(names)))
    state = IWHyper(MatrixSym(prior.initial_phi()), kappa)
    psi = means.copy()
    gen = rng.gen
    data_scale = nus[:, None, None] * means
    dofs = kappa + nus
    if p == 1:
        psi = means[:, 0, 0].copy()
        for t in range(iters):
            state = hyper_update_iw(psi, prior, state, rng)
            phi = state.phi.values[0, 0]
            psi = (phi + data_scale[:, 0, 0]) / gen.chisquare(dofs)
            out[t, 0] = phi
            out[t, 1] = psi.mean()
            out[t, 2:] = psi
        return names, out
    for t in range(iters):
        state = hyper_update_iw(psi, prior, state, rng)
        scales = state.phi.values[None] + data_scale
        psi = np.stack([inv_wishart_rvs(cholesky_jitter(scales[j])[0], dofs[j], gen)
                        for j in range(J)])
        out[t, :ntri] = _tri(state.phi.values)
        out[t, ntri:2 * ntri] = _tri(psi.mean(axis=0))
        out[t, 2 * ntri:] = _tri(psi).ravel()
    return names, out


def run_mba(spec: SubstituteSpec, iters: int, burn_in: int, rng: RandomStream) -> ChainTrace:
    """Gibbs sampler over ``(phi, psi_1..psi_J)`` in the substitute model.

    Sources are processed in ``source_id`` order regardless of the order in
    ``spec.draws``; per-source variates are drawn as one block per sweep.
    For the inverse-Wishart family the trace also carries ``psi_mean``,
    the average of the ``Psi_j`` over sources.
    """
    if iters <= burn_in:
        raise ValueError("iters must exceed burn_in")
    t0 = time.perf_counter()
    if spec.family == MVNORMAL:
        names, out = _run_mvnormal(spec, iters, rng)
    else:
        names, out = _run_invwishart(spec, iters, rng)
    return ChainTrace(names, out, burn_in=burn_in,
                      wall_clock_seconds=time.perf_counter() - t0,
                      info={"method": "mba", "family": spec.family})
