"""Gamma log-linear sales model per store.

``V_jt ~ Gamma(shape r_j, mean lambda_jt)`` with
``log lambda_jt = beta_j1 + beta_j2 log(price_jt) + beta_j3 display_jt``
and ``beta_j ~ N_3(mu, Sigma)``.

Stage one samples each store's ``(beta_j, log r_j)`` by adaptive
random-walk Metropolis under a vague ``N_3(0, 10^2 I)`` prior and a
half-Cauchy(5) prior on ``r_j``; stage two combines the ``beta_j`` draws
with the normal substitute model. :func:`retail_fhm_baseline` is a
Metropolis-within-Gibbs sampler for the full model, meant for a reduced
number of stores.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import optimize
from scipy.special import gammaln

from .errors import IngestionError, InputError
from .independent import metropolis_chain
from .mba import MVNORMAL, NormalPrior, SubstituteSpec, hyper_update_normal, run_mba
from .model import ChainTrace, SourceDraws, summarize_draws
from .rngdist import RandomStream, logpdf_half_cauchy

__all__ = [
    "RetailRecord",
    "StoreData",
    "retail_loglik",
    "retail_logpost",
    "retail_stage_one",
    "retail_mba",
    "retail_fhm_baseline",
    "default_retail_prior",
    "generate_retail",
    "read_retail_csv",
    "write_retail_csv",
    "RetailIngest",
]

BETA_PRIOR_SD = 10.0
R_PRIOR_SCALE = 5.0


@dataclass(frozen=True)
class RetailRecord:
    store_id: int
    week: int
    volume: float
    log_price: float
    display_pct: float

    def __post_init__(self):
        vals = (self.volume, self.log_price, self.display_pct)
        if not all(math.isfinite(v) for v in vals):
            raise InputError(f"store {self.store_id} week {self.week}: non-finite field")
        if not self.volume > 0:
            raise InputError(f"store {self.store_id} week {self.week}: volume must be positive")


@dataclass
class StoreData:
    """Column arrays for one store (the form the samplers use)."""

    store_id: int
    volume: np.ndarray
    log_price: np.ndarray
    display: np.ndarray

    def __post_init__(self):
        self.volume = np.asarray(self.volume, dtype=float)
        self.log_price = np.asarray(self.log_price, dtype=float)
        self.display = np.asarray(self.display, dtype=float)
        n = self.volume.size
        if n == 0:
            raise InputError(f"store {self.store_id}: no records")
        if self.log_price.size != n or self.display.size != n:
            raise InputError(f"store {self.store_id}: column lengths differ")
        if np.any(self.volume <= 0) or not np.all(np.isfinite(self.volume)):
            raise InputError(f"store {self.store_id}: volumes must be positive and finite")
        self.log_volume = np.log(self.volume)
        self.design = np.column_stack([np.ones(n), self.log_price, self.display])

    @property
    def n(self) -> int:
        return self.volume.size

    @classmethod
    def from_records(cls, records: Sequence[RetailRecord]) -> "StoreData":
        records = list(records)
        if not records:
            raise InputError("store has no records")
        ids = {r.store_id for r in records}
        if len(ids) != 1:
            raise InputError("records from more than one store")
        records.sort(key=lambda r: r.week)
        return cls(records[0].store_id, [r.volume for r in records],
                   [r.log_price for r in records], [r.display_pct for r in records])

    def records(self) -> list:
        return [RetailRecord(self.store_id, t, float(v), float(p), float(d))
                for t, (v, p, d) in enumerate(zip(self.volume, self.log_price, self.display))]


def _store(data) -> StoreData:
    return data if isinstance(data, StoreData) else StoreData.from_records(data)


def retail_loglik(beta, log_r: float, records) -> float:
    """Gamma log-likelihood with shape ``r = exp(log_r)`` and rate
    ``r / lambda_t``. Returns ``-inf`` for overflowing or otherwise
    non-finite values."""
    s = _store(records)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        eta = s.design @ np.asarray(beta, dtype=float)
        r = math.exp(log_r) if log_r < 700 else math.inf
        val = float(np.sum(r * (log_r - eta) - gammaln(r) + (r - 1.0) * s.log_volume
                           - r * np.exp(s.log_volume - eta)))
    return val if math.isfinite(val) else -math.inf


def _log_prior_log_r(log_r: float, scale: float = R_PRIOR_SCALE) -> float:
    # half-Cauchy on r plus the log-Jacobian of r = exp(log_r)
    if log_r > 700:
        return -math.inf
    return logpdf_half_cauchy(math.exp(log_r), scale) + log_r


def retail_logpost(theta, store, beta_prior_sd: float = BETA_PRIOR_SD,
                   r_scale: float = R_PRIOR_SCALE) -> float:
    """Stage-one log posterior over ``theta = (beta_1, beta_2, beta_3, log r)``."""
    theta = np.asarray(theta, dtype=float)
    beta, log_r = theta[:3], float(theta[3])
    lp = _log_prior_log_r(log_r, r_scale) - 0.5 * float(beta @ beta) / beta_prior_sd ** 2
    if not math.isfinite(lp):
        return -math.inf
    return lp + retail_loglik(beta, log_r, store)


def _numeric_hessian(f, x, h=1e-4) -> np.ndarray:
    d = x.size
    H = np.empty((d, d))
    e = np.eye(d) * h
    for i in range(d):
        for j in range(i, d):
            v = (f(x + e[i] + e[j]) - f(x + e[i] - e[j]) - f(x - e[i] + e[j])
                 + f(x - e[i] - e[j])) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return H


def _laplace(logpost, x0):
    """Posterior mode and a positive-definite covariance at the mode."""
    res = optimize.minimize(lambda x: -logpost(x), x0, method="BFGS")
    x = res.x if np.all(np.isfinite(res.x)) and math.isfinite(logpost(res.x)) else x0
    H = _numeric_hessian(logpost, x)
    if np.all(np.isfinite(H)):
        w, v = np.linalg.eigh(-0.5 * (H + H.T))
        w = np.clip(w, 1e-8, None)
        cov = (v / w) @ v.T
    else:
        cov = 0.01 * np.eye(x.size)
    return x, cov


def _init_point(s: StoreData) -> np.ndarray:
    lv = s.log_volume
    coef, *_ = np.linalg.lstsq(s.design, lv, rcond=None)
    resid = lv - s.design @ coef
    var = max(float(np.var(resid)), 1e-3)
    return np.append(coef, math.log(max(1.0 / var, 1e-2)))


def retail_stage_one(store, L: int = 1000, burn_in: int = 1000, rng: RandomStream = None,
                     beta_prior_sd: float = BETA_PRIOR_SD,
                     r_scale: float = R_PRIOR_SCALE) -> SourceDraws:
    """Independent posterior draws of ``beta_j`` for one store.

    The chain runs jointly over ``(beta_j, log r_j)``, starts at the
    posterior mode and uses the Laplace covariance (scaled by
    ``2.38^2 / 4``) as the initial proposal covariance. Only the ``beta``
    margins are returned; ``SourceDraws.nu`` is set to the number of weeks.
    """
    t0 = time.perf_counter()
    s = _store(store)
    rng = rng or RandomStream(0, s.store_id)

    def lp(th):
        return retail_logpost(th, s, beta_prior_sd, r_scale)

    mode, cov = _laplace(lp, _init_point(s))
    draws, rate, _ = metropolis_chain(lp, mode, cov * (2.38 ** 2 / 4), L, burn_in, rng)
    out = summarize_draws(draws[:, :3], source_id=s.store_id, nu=float(s.n))
    out.acceptance_rate = rate
    out.seconds = time.perf_counter() - t0
    return out


def default_retail_prior() -> NormalPrior:
    """``mu ~ N_3(0, I)`` and ``Sigma ~ IW_3(I, 6)``."""
    return NormalPrior(np.zeros(3), np.eye(3), np.eye(3), 6.0)


def retail_mba(all_draws: Sequence[SourceDraws], prior: Optional[NormalPrior] = None,
               iters: int = 4000, burn_in: int = 1000, rng: RandomStream = None) -> ChainTrace:
    """Combine per-store ``beta`` draws with the normal substitute model."""
    prior = prior or default_retail_prior()
    spec = SubstituteSpec(MVNORMAL, list(all_draws), prior)
    return run_mba(spec, iters, burn_in, rng or RandomStream(0))


def retail_fhm_baseline(stores: Sequence, iters: int = 6000, burn_in: int = 2000,
                        rng: RandomStream = None, prior: Optional[NormalPrior] = None,
                        r_scale: float = R_PRIOR_SCALE, target: float = 0.3) -> ChainTrace:
    """Metropolis-within-Gibbs for the full hierarchical sales model.

    Each sweep draws ``(mu, Sigma)`` from their conjugate conditionals and
    then makes one Metropolis move per store on ``(beta_j, log r_j)``.
    Per-store proposal scales adapt during burn-in only.
    """
    t0 = time.perf_counter()
    prior = prior or default_retail_prior()
    rng = rng or RandomStream(0)
    gen = rng.gen
    st = sorted((_store(s) for s in stores), key=lambda s: s.store_id)
    J = len(st)
    x = np.empty((J, 4))
    factors = []
    for j, s in enumerate(st):
        mode, cov = _laplace(lambda th, s=s: retail_logpost(th, s, BETA_PRIOR_SD, r_scale),
                             _init_point(s))
        x[j] = mode
        factors.append(np.linalg.cholesky(cov * (2.38 ** 2 / 4)))
    log_scale = np.zeros(J)
    state = prior.initial_state()
    names = [f"mu_{i + 1}" for i in range(3)]
    names += [f"sigma_{a + 1}_{b + 1}" for a in range(3) for b in range(a, 3)]
    names += [f"beta_{s.store_id}_{c + 1}" for s in st for c in range(3)]
    names += [f"log_r_{s.store_id}" for s in st]
    iu = np.triu_indices(3)
    out = np.empty((iters, len(names)))

    def cond(th, s, mu, s_inv):
        d = th[:3] - mu
        lp = _log_prior_log_r(float(th[3]), r_scale) - 0.5 * float(d @ s_inv @ d)
        if not math.isfinite(lp):
            return -math.inf
        return lp + retail_loglik(th[:3], float(th[3]), s)

    for t in range(iters):
        state = hyper_update_normal(x[:, :3], prior, state, rng)
        mu = state.mu
        s_inv = state.sigma.inverse()
        for j, s in enumerate(st):
            cur = cond(x[j], s, mu, s_inv)
            prop = x[j] + math.exp(log_scale[j]) * (factors[j] @ gen.standard_normal(4))
            new = cond(prop, s, mu, s_inv)
            if math.isnan(new):
                raise InputError(f"store {s.store_id}: log posterior is NaN")
            a = 1.0 if new >= cur else math.exp(new - cur)
            if gen.random() < a:
                x[j] = prop
            if t < burn_in:
                log_scale[j] += (a - target) / (t + 1) ** 0.6
        out[t, :3] = mu
        out[t, 3:9] = state.sigma.values[iu]
        out[t, 9:9 + 3 * J] = x[:, :3].ravel()
        out[t, 9 + 3 * J:] = x[:, 3]
    return ChainTrace(names, out, burn_in, time.perf_counter() - t0, {"method": "fhm"})


# -- synthetic data and CSV ingestion -----------------------------------------


def generate_retail(J: int, T: int, rng: RandomStream, mu=(1.0, -2.0, 0.5),
                    sigma=0.25, r: float = 3.0, r_log_sd: float = 0.2) -> list:
    """Synthetic stores with the real-data schema.

    ``beta_j ~ N_3(mu, sigma I)`` (``sigma`` may also be a 3x3 matrix),
    ``r_j = r exp(N(0, r_log_sd^2))``, log price around ``log 3`` and
    display fractions uniform on ``[0, 1]``. The generating values are on
    the ``truth`` attribute of the returned list.
    """
    gen = rng.gen
    mu = np.asarray(mu, dtype=float)
    cov = np.asarray(sigma, dtype=float)
    cov = cov * np.eye(3) if cov.ndim == 0 else cov
    betas = gen.multivariate_normal(mu, cov, size=J)
    rs = r * np.exp(r_log_sd * gen.standard_normal(J))
    stores = _StoreList()
    for j in range(J):
        lp = math.log(3.0) + 0.15 * gen.standard_normal(T)
        disp = gen.random(T)
        lam = np.exp(betas[j, 0] + betas[j, 1] * lp + betas[j, 2] * disp)
        vol = gen.gamma(rs[j], lam / rs[j])
        stores.append(StoreData(j + 1, vol, lp, disp))
    stores.truth = {"mu": mu, "sigma": cov, "beta": betas, "r": rs}
    return stores


class _StoreList(list):
    truth: dict


@dataclass
class RetailIngest:
    stores: list
    display_scale: str


def read_retail_csv(path) -> RetailIngest:
    """Read ``store, volume, price, display`` rows (``week`` optional).

    Display values are treated as percentages and divided by 100 when
    their maximum exceeds 1.5; the detected convention is returned.
    """
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"store", "volume", "price", "display"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise IngestionError(f"{path}: columns {sorted(need)} are required")
        for k, r in enumerate(reader, start=2):
            try:
                sid = int(r["store"])
                week = int(r["week"]) if r.get("week") not in (None, "") else None
                vol, price, disp = float(r["volume"]), float(r["price"]), float(r["display"])
            except (TypeError, ValueError) as exc:
                raise IngestionError(f"{path}:{k}: {exc}") from None
            if not (vol > 0 and price > 0 and math.isfinite(vol) and math.isfinite(price)
                    and math.isfinite(disp)):
                raise IngestionError(f"{path}:{k}: volume and price must be positive")
            rows.setdefault(sid, []).append((week, vol, math.log(price), disp))
    if not rows:
        raise IngestionError(f"{path}: no records")
    max_disp = max(d for recs in rows.values() for *_, d in recs)
    percent = max_disp > 1.5
    stores = []
    for sid in sorted(rows):
        recs = rows[sid]
        if all(w is not None for w, *_ in recs):
            recs = sorted(recs, key=lambda r: r[0])
        stores.append(StoreData(sid, [r[1] for r in recs], [r[2] for r in recs],
                                [r[3] / 100.0 if percent else r[3] for r in recs]))
    return RetailIngest(stores, "percent" if percent else "fraction")


def write_retail_csv(stores: Sequence[StoreData], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["store", "week", "volume", "price", "display"])
        for s in stores:
            for t in range(s.n):
                w.writerow([s.store_id, t, repr(float(s.volume[t])),
                            repr(float(math.exp(s.log_price[t]))), repr(float(s.display[t]))])
