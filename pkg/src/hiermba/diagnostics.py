"""Run-length control and accuracy metrics: Raftery-Lewis, equal-tailed
credible intervals, coverage and MSE over simulation replicates."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy import stats

from .errors import DegenerateChainError, PilotTooShortError, SchemaError
from .model import ChainTrace

__all__ = [
    "RafteryLewis",
    "raftery_lewis",
    "raftery_lewis_nmin",
    "CredibleInterval",
    "credible_interval",
    "ExperimentReport",
    "evaluate_replicates",
    "write_reports_csv",
]


@dataclass(frozen=True)
class RafteryLewis:
    burn_in: int
    n_required: int
    thinning: int
    n_min: int

    @property
    def total(self) -> int:
        return self.burn_in + self.n_required

    @property
    def dependence_factor(self) -> float:
        return self.total / self.n_min


def raftery_lewis_nmin(q: float = 0.5, r: float = 0.05, s: float = 0.95) -> int:
    """Minimum pilot length ``ceil(z^2 q (1 - q) / r^2)`` with ``z`` the
    ``(1 + s) / 2`` standard normal quantile."""
    z = stats.norm.ppf(0.5 * (1.0 + s))
    return int(math.ceil(z * z * q * (1.0 - q) / (r * r)))


def _transition_counts3(b: np.ndarray) -> np.ndarray:
    idx = 4 * b[:-2] + 2 * b[1:-1] + b[2:]
    return np.bincount(idx, minlength=8).reshape(2, 2, 2).astype(float)


def _bic_second_order(b: np.ndarray) -> float:
    """BIC of a second-order versus first-order Markov model."""
    t = _transition_counts3(b)
    g2 = 0.0
    for i1 in range(2):
        for i2 in range(2):
            for i3 in range(2):
                n = t[i1, i2, i3]
                if n:
                    fitted = t[i1, i2, :].sum() * t[:, i2, i3].sum() / t[:, i2, :].sum()
                    g2 += 2.0 * n * math.log(n / fitted)
    return g2 - 2.0 * math.log(b.size - 2)


def raftery_lewis(chain, q: float = 0.5, r: float = 0.05, s: float = 0.95,
                  eps: float = 0.001) -> RafteryLewis:
    """Raftery-Lewis run-length diagnostic for estimating the ``q``
    quantile to within ``+-r`` with probability ``s``.

    The chain is binarized at its empirical ``q`` quantile (by rank, so the
    result only depends on the ordering of the values). The thinning ``k``
    is the smallest for which a first-order Markov model is preferred to a
    second-order one by BIC; the transition probabilities of the thinned
    indicator chain give the burn-in and the post-burn-in length.

    Raises
    ------
    PilotTooShortError
        If the chain is shorter than the minimum pilot length.
    DegenerateChainError
        If the indicator sequence takes a single value.
    """
    x = np.asarray(chain, dtype=float).ravel()
    n_min = raftery_lewis_nmin(q, r, s)
    if x.size < n_min:
        raise PilotTooShortError(n_min, x.size)
    cut = np.sort(x)[int(math.floor((x.size - 1) * q))]
    b = (x <= cut).astype(np.int64)
    if b.min() == b.max():
        raise DegenerateChainError("quantile indicator takes a single value")
    k = 1
    while True:
        sub = b[::k]
        if sub.size < 4 or _bic_second_order(sub) < 0:
            break
        k += 1
    sub = b[::k]
    t = np.bincount(2 * sub[:-1] + sub[1:], minlength=4).reshape(2, 2).astype(float)
    if t[0].sum() == 0 or t[1].sum() == 0:
        raise DegenerateChainError("thinned indicator chain visits a single state")
    alpha = t[0, 1] / t[0].sum()
    beta = t[1, 0] / t[1].sum()
    if alpha + beta == 0:
        raise DegenerateChainError("indicator chain never changes state")
    z = stats.norm.ppf(0.5 * (1.0 + s))
    lam = abs(1.0 - alpha - beta)
    if lam == 0 or lam >= 1:
        burn = 0
    else:
        burn = max(0, math.ceil(math.log(eps * (alpha + beta) / max(alpha, beta)) / math.log(lam)))
    n_req = (2.0 - alpha - beta) * alpha * beta * z * z / ((alpha + beta) ** 3 * r * r)
    return RafteryLewis(burn_in=int(burn * k), n_required=int(math.ceil(n_req * k)),
                        thinning=k, n_min=n_min)


class CredibleInterval(NamedTuple):
    lo: float
    hi: float

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def credible_interval(chain, level: float = 0.95) -> CredibleInterval:
    """Equal-tailed interval with linearly interpolated quantiles."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    x = np.asarray(chain, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two draws")
    a = 0.5 * (1.0 - level)
    lo, hi = np.quantile(x, [a, 1.0 - a])
    return CredibleInterval(float(lo), float(hi))


@dataclass
class ExperimentReport:
    """Aggregated accuracy over simulation replicates."""

    method: str
    parameters: list
    coverage: dict
    mse: dict
    mse_overall: float
    avg_seconds: float
    n_replicates: int
    records: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def rows(self) -> list:
        return [{"method": self.method, "parameter": p, "coverage": self.coverage[p],
                 "mse": self.mse[p], "avg_seconds": self.avg_seconds}
                for p in self.parameters]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        write_reports_csv([self], path)


def write_reports_csv(reports: Sequence[ExperimentReport], path) -> None:
    """One row per (method, parameter) plus an ``overall`` MSE row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "parameter", "coverage", "mse",
                                           "avg_seconds"])
        w.writeheader()
        for rep in reports:
            for row in rep.rows():
                w.writerow(row)
            w.writerow({"method": rep.method, "parameter": "overall", "coverage": "",
                        "mse": rep.mse_overall, "avg_seconds": rep.avg_seconds})


def _trace_seconds(tr: ChainTrace) -> float:
    return float(tr.info.get("total_seconds", tr.wall_clock_seconds))


def evaluate_replicates(traces: Sequence[ChainTrace], truths, method: str = "",
                        level: float = 0.95) -> ExperimentReport:
    """Coverage and MSE of posterior-mean estimates over replicates.

    Parameters
    ----------
    traces : sequence of ChainTrace
        One trace per replicate.
    truths : mapping or sequence of mappings
        Parameter name to true value, either shared by all replicates or
        one mapping per replicate.
    method : str
        Label for the report rows.

    The overall MSE is the mean of the per-parameter MSEs.
    """
    traces = list(traces)
    if not traces:
        raise SchemaError("no replicates to evaluate")
    if isinstance(truths, Mapping):
        truths = [truths] * len(traces)
    truths = list(truths)
    if len(truths) != len(traces):
        raise SchemaError("need one truth record per replicate")
    params = list(truths[0])
    sq = {p: [] for p in params}
    hit = {p: [] for p in params}
    records = []
    for i, (tr, truth) in enumerate(zip(traces, truths)):
        for p in params:
            if p not in tr.names:
                raise SchemaError(f"replicate {i}: trace lacks parameter {p!r}")
            col = tr.column(p)
            pm = float(col.mean())
            ci = credible_interval(col, level)
            tv = float(truth[p])
            sq[p].append((pm - tv) ** 2)
            hit[p].append(ci.contains(tv))
            records.append({"replicate": i, "parameter": p, "posterior_mean": pm,
                            "lo": ci.lo, "hi": ci.hi, "covered": bool(ci.contains(tv)),
                            "seconds": _trace_seconds(tr)})
    mse = {p: float(np.mean(sq[p])) for p in params}
    cov = {p: float(np.mean(hit[p])) for p in params}
    return ExperimentReport(
        method=method,
        parameters=params,
        coverage=cov,
        mse=mse,
        mse_overall=float(np.mean(list(mse.values()))),
        avg_seconds=float(np.mean([_trace_seconds(t) for t in traces])),
        n_replicates=len(traces),
        records=records,
    )
