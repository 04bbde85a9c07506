"""Direct Gibbs samplers for the full hierarchical models.

Each sweep first updates the hyperparameters given the current source
parameters, then visits the sources one at a time and redraws each
source parameter from its full conditional computed from that source's
observations. The per-source visit is deliberately sequential: it is the
unit of work whose cost grows with the number of sources.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InputError
from .mba import NormalPrior, WishartPrior, hyper_update_iw, hyper_update_normal
from .model import ChainTrace, HierarchicalDataset, IWHyper
from .rngdist import MatrixSym, RandomStream, cholesky_jitter, inv_wishart_rvs

__all__ = ["VCPrior", "fhm_example1", "fhm_example2", "fhm_example3"]


def _scalar_sources(data: HierarchicalDataset) -> list:
    obs = []
    for s in data:
        if s.dim != 1:
            raise InputError("this sampler expects scalar observations")
        if not np.all(np.isfinite(s.values)):
            raise InputError(f"source {s.source_id}: non-finite observations")
        obs.append(s.values)
    return obs


def _check_iters(iters, burn_in):
    if not 0 <= burn_in < iters:
        raise ValueError("need 0 <= burn_in < iters")


def fhm_example1(data: HierarchicalDataset, prior: NormalPrior = None, iters: int = 2000,
                 burn_in: int = 500, rng: RandomStream = None) -> ChainTrace:
    """Normal-normal model with unit observation variance.

    ``x_ji ~ N(theta_j, 1)``, ``theta_j ~ N(mu, sigma2)``,
    ``mu ~ N(mu0, sigma0_2)``, ``sigma2 ~ IW_1(Omega, k)``.
    """
    _check_iters(iters, burn_in)
    prior = prior or NormalPrior.scalar(0.0, 1.0, 1.0, 3.0)
    if prior.q != 1:
        raise DomainError("fhm_example1 is scalar")
    rng = rng or RandomStream(0)
    gen = rng.gen
    obs = _scalar_sources(data)
    J = len(obs)
    theta = np.array([x.mean() for x in obs])
    state = prior.initial_state()
    names = ["mu", "sigma2", *[f"theta_{s.source_id}" for s in data]]
    out = np.empty((iters, 2 + J))
    t0 = time.perf_counter()
    for t in range(iters):
        state = hyper_update_normal(theta, prior, state, rng)
        mu = float(state.mu[0])
        s2 = float(state.sigma.values[0, 0])
        for j, x in enumerate(obs):
            prec = 1.0 / s2 + x.size
            theta[j] = (mu / s2 + x.sum()) / prec + gen.standard_normal() / math.sqrt(prec)
        out[t, 0] = mu
        out[t, 1] = s2
        out[t, 2:] = theta
    return ChainTrace(names, out, burn_in, time.perf_counter() - t0, {"method": "fhm"})


def fhm_example2(data: HierarchicalDataset, prior=None, kappa: float = 3.0, iters: int = 2000,
                 burn_in: int = 500, rng: RandomStream = None) -> ChainTrace:
    """Inverse-Wishart model with zero-mean normal data.

    ``x_ji ~ N_p(0, Theta_j)``, ``Theta_j ~ IW_p(Phi, kappa)`` with
    ``Phi ~ W_p(V, m)`` (:class:`WishartPrior`) or, for ``p = 1``,
    ``Phi ~ IW_1(V, m)`` (:class:`InvWishartPrior`).
    """
    _check_iters(iters, burn_in)
    p = data.sources[0].dim
    prior = prior or WishartPrior(np.eye(p), 3.0)
    if not kappa > p - 1:
        raise DomainError("kappa must exceed p - 1")
    rng = rng or RandomStream(0)
    gen = rng.gen
    obs = [s.observations for s in data]
    J = len(obs)
    thetas = np.empty((J, p, p))
    for j, x in enumerate(obs):
        m = x.T @ x / x.shape[0]
        _, jit = cholesky_jitter(m)
        thetas[j] = m + jit * np.eye(p)
    state = IWHyper(MatrixSym(prior.initial_phi()), float(kappa))
    iu = np.triu_indices(p)
    ntri = iu[0].size
    if p == 1:
        names = ["phi", *[f"theta_{s.source_id}" for s in data]]
    else:
        tri = [f"{a + 1}_{b + 1}" for a, b in zip(*iu)]
        names = [f"phi_{t}" for t in tri]
        names += [f"theta_{s.source_id}_{t}" for s in data for t in tri]
    out = np.empty((iters, ntri * (J + 1)))
    t0 = time.perf_counter()
    for t in range(iters):
        state = hyper_update_iw(thetas, prior, state, rng)
        phi = state.phi.values
        for j, x in enumerate(obs):
            dof = kappa + x.shape[0]
            if p == 1:
                thetas[j, 0, 0] = (phi[0, 0] + float(x[:, 0] @ x[:, 0])) / gen.chisquare(dof)
            else:
                scale = phi + x.T @ x
                thetas[j] = inv_wishart_rvs(cholesky_jitter(scale)[0], dof, gen)
        out[t, :ntri] = phi[iu]
        out[t, ntri:] = thetas[:, iu[0], iu[1]].ravel()
    return ChainTrace(names, out, burn_in, time.perf_counter() - t0, {"method": "fhm"})


@dataclass
class VCPrior:
    """Priors for the variance-components model.

    ``beta0 ~ N(beta0_mean, beta0_var)``, ``sigma_u2 ~ IW_1(u_scale, u_dof)``
    and ``sigma_v2 ~ IW_1(v_scale, v_dof)``.
    """

    beta0_mean: float = 0.0
    beta0_var: float = 1e4
    u_scale: float = 1.0
    u_dof: float = 3.0
    v_scale: float = 1.0
    v_dof: float = 3.0

    def normal_prior(self) -> NormalPrior:
        return NormalPrior.scalar(self.beta0_mean, self.beta0_var, self.u_scale, self.u_dof)


def fhm_example3(data: HierarchicalDataset, prior: VCPrior = None, iters: int = 2000,
                 burn_in: int = 500, rng: RandomStream = None) -> ChainTrace:
    """Variance-components Gibbs sampler.

    ``y_ji ~ N(theta_j, sigma_v2)``, ``theta_j ~ N(beta0, sigma_u2)``.
    Sweep order: ``beta0``, ``sigma_u2``, ``sigma_v2`` (pooling all
    residuals), then each ``theta_j``.
    """
    _check_iters(iters, burn_in)
    prior = prior or VCPrior()
    rng = rng or RandomStream(0)
    gen = rng.gen
    obs = _scalar_sources(data)
    J = len(obs)
    N = sum(x.size for x in obs)
    theta = np.array([x.mean() for x in obs])
    np_prior = prior.normal_prior()
    state = np_prior.initial_state()
    sv2 = prior.v_scale / (prior.v_dof - 2) if prior.v_dof > 2 else prior.v_scale
    names = ["beta0", "sigma_u2", "sigma_v2", *[f"theta_{s.source_id}" for s in data]]
    out = np.empty((iters, 3 + J))
    t0 = time.perf_counter()
    for t in range(iters):
        state = hyper_update_normal(theta, np_prior, state, rng)
        b0 = float(state.mu[0])
        su2 = float(state.sigma.values[0, 0])
        ss = 0.0
        for j, x in enumerate(obs):
            r = x - theta[j]
            ss += float(r @ r)
        sv2 = (prior.v_scale + ss) / gen.chisquare(prior.v_dof + N)
        for j, x in enumerate(obs):
            prec = 1.0 / su2 + x.size / sv2
            theta[j] = (b0 / su2 + x.sum() / sv2) / prec + gen.standard_normal() / math.sqrt(prec)
        out[t, 0] = b0
        out[t, 1] = su2
        out[t, 2] = sv2
        out[t, 3:] = theta
    return ChainTrace(names, out, burn_in, time.perf_counter() - t0, {"method": "fhm"})
