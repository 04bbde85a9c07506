"""Simulation protocol: pilot-calibrated run lengths, replicate loops for
the three synthetic examples, the timing sweep over ``J`` and the
MSE-versus-samples path.

Run lengths come from 10 pilot runs per method: the Raftery-Lewis
recommendation is computed for every tracked hyperparameter of every
pilot and the maximum burn-in and post-burn-in length are used for all
replicates. Stage-one draw counts are calibrated the same way on pilot
stage-one draws.

Timing: a direct (FHM) replicate costs its Gibbs run; an MBA replicate
costs the wall clock of the parallel stage one plus the stage-two run.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .diagnostics import evaluate_replicates, raftery_lewis
from .errors import ConfigError
from .fhm import VCPrior, fhm_example1, fhm_example2, fhm_example3
from .independent import indep_invwishart, indep_normal, indep_variance
from .mba import (
    INVWISHART,
    MVNORMAL,
    InvWishartPrior,
    NormalPrior,
    SubstituteSpec,
    WishartPrior,
    run_mba,
)
from .model import (
    ChainTrace,
    HierarchicalDataset,
    generate_example1,
    generate_example2,
    generate_example3,
)
from .parallel import TaskPlan, run_parallel
from .rngdist import RandomStream, derive_seed

__all__ = [
    "RunLength",
    "Example1Setup",
    "Example2Setup",
    "Example3Setup",
    "calibrate",
    "run_replicates",
    "ReplicateResult",
    "timing_sweep",
    "mse_path",
    "make_setup",
    "METHODS",
]

METHODS = ("fhm", "mba")

# stream path tags; keep distinct so pilot, data and sampler streams never overlap
_PILOT_DATA, _DATA, _FHM, _STAGE_ONE, _STAGE_TWO, _PILOT_FHM, _PILOT_S1, _PILOT_S2 = range(8)


@dataclass(frozen=True)
class RunLength:
    burn_in: int
    iters: int

    @classmethod
    def fixed(cls, iters: int, burn_in: int) -> "RunLength":
        return cls(int(burn_in), int(iters))


# -- example setups -----------------------------------------------------------


@dataclass
class Example1Setup:
    """Normal-normal model with unit observation variance."""

    J: int = 10
    n_j: int = 5
    mu: float = 2.0
    sigma2: float = 3.0
    prior: NormalPrior = field(default_factory=lambda: NormalPrior.scalar(0.0, 1.0, 1.0, 3.0))
    stage_one: dict = field(default_factory=lambda: {"mu": 0.0, "sigma2": 100.0})

    tracked = ("mu", "sigma2")

    def generate(self, rng: RandomStream) -> HierarchicalDataset:
        return generate_example1(self.J, self.n_j, self.mu, self.sigma2, rng)

    def truths(self, data: HierarchicalDataset) -> dict:
        return {"mu": self.mu, "sigma2": self.sigma2}

    def fhm(self, data, run: RunLength, rng) -> ChainTrace:
        return fhm_example1(data, self.prior, run.iters, run.burn_in, rng)

    def stage_one_tasks(self, data, L: int) -> list:
        return [(s.source_id, functools.partial(indep_normal, s, dict(self.stage_one), L))
                for s in data]

    def pilot_draws(self, result) -> list:
        return [d.draws[:, 0] for d in result]

    def stage_two(self, draws, run: RunLength, rng) -> ChainTrace:
        return run_mba(SubstituteSpec(MVNORMAL, list(draws), self.prior), run.iters,
                       run.burn_in, rng)


@dataclass
class Example2Setup:
    """Inverse-Wishart model for zero-mean scalar data (``p = 1``)."""

    J: int = 20
    n_j: int = 10
    phi: float = 40.0
    kappa: float = 3.0
    prior: object = field(default_factory=lambda: WishartPrior(100.0, 3.0))
    stage_one: dict = field(default_factory=lambda: {"phi": 1.0, "kappa": 3.0})

    tracked = ("phi",)

    def generate(self, rng: RandomStream) -> HierarchicalDataset:
        return generate_example2(self.J, self.n_j, 1, self.phi, self.kappa, rng)

    def truths(self, data) -> dict:
        return {"phi": self.phi}

    def fhm(self, data, run, rng) -> ChainTrace:
        return fhm_example2(data, self.prior, self.kappa, run.iters, run.burn_in, rng)

    def stage_one_tasks(self, data, L: int) -> list:
        return [(s.source_id, functools.partial(indep_invwishart, s, dict(self.stage_one), L))
                for s in data]

    def pilot_draws(self, result) -> list:
        return [d.draws[:, 0] for d in result]

    def stage_two(self, draws, run, rng) -> ChainTrace:
        spec = SubstituteSpec(INVWISHART, list(draws), self.prior, kappa=self.kappa)
        return run_mba(spec, run.iters, run.burn_in, rng)


def _vc_stage_one(source, theta_prior: dict, tau_fixed: dict, L: int, rng: RandomStream):
    """Stage one for the variance-components model.

    The source mean is sampled with the source's own sample variance
    plugged in as the observation variance; the residual variance is then
    sampled about the posterior mean of the source mean.
    """
    y = source.values
    obs_var = float(np.var(y, ddof=1)) if y.size > 1 else 1.0
    obs_var = max(obs_var, 1e-12)
    th = indep_normal(source, theta_prior, L, rng.child(0), obs_var=obs_var)
    tau = indep_variance(source, th.mean, tau_fixed, L, rng.child(1))
    return th, tau


@dataclass
class Example3Setup:
    """Variance-components model ``y_ji = beta0 + u_j + v_ji``."""

    J: int = 15
    n_j: int = 18
    beta0: float = 30.0
    sigma_u2: float = 10.0
    sigma_v2: float = 40.0
    prior: VCPrior = field(default_factory=VCPrior)
    theta_stage_one: dict = field(default_factory=lambda: {"mu": 0.0, "sigma2": 100.0})
    tau_stage_one: dict = field(default_factory=lambda: {"sigma_v2": 1.0, "kappa": 3.0})
    tau_prior: object = field(default_factory=lambda: InvWishartPrior(1.0, 3.0))
    tau_kappa: float = 3.0

    tracked = ("beta0", "sigma_u2", "sigma_v2")

    def generate(self, rng) -> HierarchicalDataset:
        return generate_example3(self.J, self.n_j, self.beta0, self.sigma_u2, self.sigma_v2, rng)

    def truths(self, data) -> dict:
        return {"beta0": self.beta0, "sigma_u2": self.sigma_u2, "sigma_v2": self.sigma_v2}

    def fhm(self, data, run, rng) -> ChainTrace:
        return fhm_example3(data, self.prior, run.iters, run.burn_in, rng)

    def stage_one_tasks(self, data, L: int) -> list:
        return [(s.source_id, functools.partial(_vc_stage_one, s, dict(self.theta_stage_one),
                                                dict(self.tau_stage_one), L))
                for s in data]

    def pilot_draws(self, result) -> list:
        return [d.draws[:, 0] for pair in result for d in pair]

    def stage_two(self, draws, run, rng) -> ChainTrace:
        thetas = [p[0] for p in draws]
        taus = [p[1] for p in draws]
        t_th = run_mba(SubstituteSpec(MVNORMAL, thetas, self.prior.normal_prior()),
                       run.iters, run.burn_in, rng.child(0))
        t_tau = run_mba(SubstituteSpec(INVWISHART, taus, self.tau_prior, kappa=self.tau_kappa),
                        run.iters, run.burn_in, rng.child(1))
        J = len(thetas)
        sids = [d.source_id for d in sorted(thetas, key=lambda d: d.source_id)]
        names = ["beta0", "sigma_u2", "sigma_v2", "tau_phi"]
        cols = [t_th.draws[:, 0], t_th.draws[:, 1], t_tau.column("psi_mean", False),
                t_tau.column("phi", False)]
        names += [f"theta_{s}" for s in sids] + [f"tau2_{s}" for s in sids]
        cols += [t_th.draws[:, 2 + j] for j in range(J)]
        cols += [t_tau.column(f"psi_{s}", False) for s in sids]
        return ChainTrace(names, np.column_stack(cols), run.burn_in,
                          t_th.wall_clock_seconds + t_tau.wall_clock_seconds,
                          {"method": "mba"})


# -- protocol -----------------------------------------------------------------


def _rl_max(chains: Sequence[np.ndarray], q, r, s) -> RunLength:
    burn, n = 0, 0
    for c in chains:
        rl = raftery_lewis(c, q, r, s)
        burn, n = max(burn, rl.burn_in), max(n, rl.n_required)
    return RunLength(burn, burn + n)


@dataclass
class Calibration:
    fhm: Optional[RunLength] = None
    stage_one_L: Optional[int] = None
    stage_two: Optional[RunLength] = None


def calibrate(setup, methods=METHODS, seed: int = 0, n_pilots: int = 10,
              pilot_iters: int = 2000, q: float = 0.5, r: float = 0.05, s: float = 0.95,
              workers: int = 1, executor: str = "thread",
              datasets: Optional[Sequence[HierarchicalDataset]] = None) -> Calibration:
    """Raftery-Lewis run lengths, maximised over pilots and tracked
    parameters. Stage one is calibrated on pilot draws of every source.

    Pilots use fresh synthetic data sets unless ``datasets`` is given, in
    which case pilot ``i`` runs on ``datasets[i % len(datasets)]``.
    """
    cal = Calibration()
    pilot_run = RunLength(0, pilot_iters)
    fhm_chains, s1_chains, s2_chains = [], [], []
    for i in range(n_pilots):
        if datasets:
            data = datasets[i % len(datasets)]
        else:
            data = setup.generate(RandomStream(seed, 0, (_PILOT_DATA, i)))
        if "fhm" in methods:
            tr = setup.fhm(data, pilot_run, RandomStream(seed, 0, (_PILOT_FHM, i)))
            fhm_chains += [tr.column(n, False) for n in setup.tracked]
        if "mba" in methods:
            plan = TaskPlan(setup.stage_one_tasks(data, pilot_iters), workers,
                            derive_seed(seed, _PILOT_S1, i), executor)
            res = run_parallel(plan)
            s1_chains += setup.pilot_draws(res)
            tr = setup.stage_two(res, pilot_run, RandomStream(seed, 0, (_PILOT_S2, i)))
            s2_chains += [tr.column(n, False) for n in setup.tracked]
    if fhm_chains:
        cal.fhm = _rl_max(fhm_chains, q, r, s)
    if s2_chains:
        cal.stage_two = _rl_max(s2_chains, q, r, s)
        cal.stage_one_L = max(2, _rl_max(s1_chains, q, r, s).iters)
    return cal


@dataclass
class ReplicateResult:
    reports: dict
    traces: dict
    calibration: Calibration


def run_replicates(setup, methods=METHODS, replicates: int = 100, seed: int = 0,
                   workers: int = 1, executor: str = "thread",
                   calibration: Optional[Calibration] = None, n_pilots: int = 10,
                   pilot_iters: int = 2000, keep_traces: bool = False,
                   datasets: Optional[Sequence[HierarchicalDataset]] = None) -> ReplicateResult:
    """Run every method on the same ``replicates`` synthetic data sets.

    Returns one :class:`ExperimentReport` per method. Replicate ``i`` uses
    the same data set for all methods. With ``datasets`` the given data
    sets replace the synthetic ones; their ``meta["truth"]`` must hold the
    tracked parameters.
    """
    methods = tuple(methods)
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ConfigError(f"unknown method(s) {bad}; expected a subset of {METHODS}")
    if datasets is not None:
        datasets = list(datasets)
        replicates = len(datasets)
        for k, d in enumerate(datasets):
            truth = (d.meta or {}).get("truth", {})
            missing = [p for p in setup.tracked if p not in truth]
            if missing:
                raise ConfigError(f"dataset {k}: meta truth lacks {missing}")
    cal = calibration or calibrate(setup, methods, seed, n_pilots, pilot_iters,
                                   workers=workers, executor=executor, datasets=datasets)
    traces = {m: [] for m in methods}
    truths = []
    for i in range(replicates):
        if datasets is not None:
            data = datasets[i]
            truths.append({p: float(data.meta["truth"][p]) for p in setup.tracked})
        else:
            data = setup.generate(RandomStream(seed, 0, (_DATA, i)))
            truths.append(setup.truths(data))
        if "fhm" in methods:
            traces["fhm"].append(setup.fhm(data, cal.fhm, RandomStream(seed, 0, (_FHM, i))))
        if "mba" in methods:
            plan = TaskPlan(setup.stage_one_tasks(data, cal.stage_one_L), workers,
                            derive_seed(seed, _STAGE_ONE, i), executor)
            res = run_parallel(plan)
            tr = setup.stage_two(res, cal.stage_two, RandomStream(seed, 0, (_STAGE_TWO, i)))
            tr.info["stage_one_seconds"] = res.wall_seconds
            tr.info["total_seconds"] = res.wall_seconds + tr.wall_clock_seconds
            traces["mba"].append(tr)
    reports = {}
    for m in methods:
        rep = evaluate_replicates(traces[m], truths, method=m)
        run = cal.fhm if m == "fhm" else cal.stage_two
        rep.extra = {"burn_in": run.burn_in, "iters": run.iters}
        if m == "mba":
            rep.extra["stage_one_L"] = cal.stage_one_L
        reports[m] = rep
    return ReplicateResult(reports, traces if keep_traces else {}, cal)


def timing_sweep(make_setup, Js=(10, 20, 40, 80), replicates: int = 5, seed: int = 0,
                 workers: int = 8, executor: str = "thread", n_pilots: int = 10,
                 pilot_iters: int = 2000) -> list:
    """Mean wall-clock seconds of both methods for each ``J``.

    ``make_setup(J)`` returns an example setup. Rows carry ``J``,
    ``fhm_seconds``, ``mba_seconds`` and their ratio.
    """
    rows = []
    for J in Js:
        res = run_replicates(make_setup(J), METHODS, replicates, seed, workers, executor,
                             n_pilots=n_pilots, pilot_iters=pilot_iters)
        f = res.reports["fhm"].avg_seconds
        m = res.reports["mba"].avg_seconds
        rows.append({"J": J, "fhm_seconds": f, "mba_seconds": m, "ratio": f / m})
    return rows


def mse_path(traces: Sequence[ChainTrace], truths, checkpoints: Sequence[int]) -> list:
    """MSE of posterior-mean estimates after each number of retained draws.

    For each checkpoint ``n`` the estimate is the mean of the first ``n``
    post-burn-in draws; time is the matching fraction of each run's
    post-burn-in cost plus its burn-in cost. Rows carry ``n_samples``,
    ``seconds`` and ``mse`` (mean over parameters and replicates).
    """
    traces = list(traces)
    if isinstance(truths, dict):
        truths = [truths] * len(traces)
    params = list(truths[0])
    rows = []
    for n in checkpoints:
        errs, secs = [], []
        for tr, truth in zip(traces, truths):
            n_ret = tr.iterations - tr.burn_in
            k = min(int(n), n_ret)
            per_iter = tr.wall_clock_seconds / tr.iterations
            secs.append(per_iter * (tr.burn_in + k))
            errs.append(np.mean([(tr.column(p)[:k].mean() - truth[p]) ** 2 for p in params]))
        rows.append({"n_samples": int(n), "seconds": float(np.mean(secs)),
                     "mse": float(np.mean(errs))})
    return rows


def make_setup(example: str, params: Optional[dict] = None):
    """Build an example setup from plain configuration values.

    ``params`` may hold the generating values (``J``, ``n_j``, ...), a
    ``prior`` mapping and stage-one settings; unknown keys raise
    :class:`ConfigError`.
    """
    params = dict(params or {})
    try:
        if example == "example1":
            pr = params.pop("prior", None)
            if pr is not None:
                params["prior"] = NormalPrior.scalar(pr.get("mu0", 0.0), pr.get("sigma0_2", 1.0),
                                                     pr.get("Omega", 1.0), pr.get("k", 3.0))
            return Example1Setup(**params)
        if example == "example2":
            pr = params.pop("prior", None)
            if pr is not None:
                cls = InvWishartPrior if pr.get("family", "wishart") == "invwishart" else WishartPrior
                params["prior"] = cls(pr.get("V", 1.0), pr.get("m", 3.0))
            return Example2Setup(**params)
        if example == "example3":
            pr = params.pop("prior", None)
            if pr is not None:
                params["prior"] = VCPrior(**pr)
            tp = params.pop("tau_prior", None)
            if tp is not None:
                params["tau_prior"] = InvWishartPrior(tp.get("V", 1.0), tp.get("m", 3.0))
            return Example3Setup(**params)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    raise ConfigError(f"unknown example {example!r}")
