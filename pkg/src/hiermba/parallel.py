"""Deterministic fan-out of per-source tasks.

Each task receives a :class:`RandomStream` built from ``(base_seed,
source_id)``, so results never depend on the worker count or on the
order in which tasks finish.
"""

from __future__ import annotations

import os
import pickle
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

from .errors import ConfigError, TaskFailedError
from .rngdist import RandomStream

__all__ = ["TaskPlan", "ParallelResult", "run_parallel", "available_workers", "resolve_workers"]

EXECUTORS = ("thread", "process")


def available_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover
        return os.cpu_count() or 1


def resolve_workers(workers: int, n_tasks: int) -> int:
    """``0`` means one worker per available core; the result is capped at
    the number of tasks (and is at least 1)."""
    workers = int(workers)
    if workers < 0:
        raise ConfigError("workers must be >= 0")
    w = available_workers() if workers == 0 else workers
    return max(1, min(w, max(n_tasks, 1)))


@dataclass
class TaskPlan:
    """Per-source tasks plus execution settings.

    ``tasks`` is a list of ``(source_id, fn)`` where ``fn(rng)`` returns the
    task result. For the process executor ``fn`` must be picklable (for
    example a :func:`functools.partial` of a module-level function).
    """

    tasks: list
    workers: int = 1
    base_seed: int = 0
    executor: str = "process"

    def __post_init__(self):
        self.tasks = list(self.tasks)
        ids = [sid for sid, _ in self.tasks]
        if len(set(ids)) != len(ids):
            raise ConfigError("one task per source: duplicate source ids")
        if int(self.workers) < 0:
            raise ConfigError("workers must be >= 0")
        if self.executor not in EXECUTORS:
            raise ConfigError(f"executor must be one of {EXECUTORS}")


class ParallelResult(list):
    """Task results ordered by source id, with timing attributes."""

    wall_seconds: float = 0.0
    task_seconds: dict
    workers: int = 1


def _execute(source_id: int, fn: Callable, base_seed: int):
    t0 = time.perf_counter()
    try:
        res = fn(RandomStream(base_seed, source_id))
    except Exception as exc:  # reported to the parent with the source id
        try:
            pickle.dumps(exc)
        except Exception:
            exc = RuntimeError(repr(exc))
        return source_id, None, exc, time.perf_counter() - t0
    return source_id, res, None, time.perf_counter() - t0


def run_parallel(plan: TaskPlan) -> ParallelResult:
    """Run every task and return results ordered by source id.

    A failing task aborts the batch with :class:`TaskFailedError` naming
    the lowest failing source id. Per-task seconds are stored on results
    that have a ``seconds`` attribute and in ``result.task_seconds``.
    """
    t0 = time.perf_counter()
    tasks = sorted(plan.tasks, key=lambda t: t[0])
    out = ParallelResult()
    out.task_seconds = {}
    w = resolve_workers(plan.workers, len(tasks))
    out.workers = w
    if not tasks:
        out.wall_seconds = time.perf_counter() - t0
        return out
    if w == 1:
        results = []
        for sid, fn in tasks:
            r = _execute(sid, fn, plan.base_seed)
            results.append(r)
            if r[2] is not None:
                break
    else:
        pool_cls = ThreadPoolExecutor if plan.executor == "thread" else ProcessPoolExecutor
        with pool_cls(max_workers=w) as pool:
            futs = [pool.submit(_execute, sid, fn, plan.base_seed) for sid, fn in tasks]
            results = []
            for f in futs:
                r = f.result()
                results.append(r)
                if r[2] is not None:
                    for g in futs:
                        g.cancel()
                    break
    for sid, res, exc, secs in results:
        if exc is not None:
            raise TaskFailedError(sid, exc) from exc
        if hasattr(res, "seconds"):
            res.seconds = secs
        out.task_seconds[sid] = secs
        out.append(res)
    out.wall_seconds = time.perf_counter() - t0
    return out
