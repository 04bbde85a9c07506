"""Command-line entry point.

Subcommands ``simulate``, ``run``, ``combine`` and ``retail`` each read a
JSON config (validated against the schemas shipped in
``hiermba/schemas``) and write their outputs plus a ``manifest.json`` to
``--out``. Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import functools
import hashlib
import json
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
import scipy

from . import __version__
from .diagnostics import credible_interval, write_reports_csv
from .errors import ConfigError, HierMBAError, IngestionError
from .experiments import make_setup, mse_path, run_replicates, timing_sweep
from .independent import read_draws_csv
from .mba import (
    MVNORMAL,
    InvWishartPrior,
    NormalPrior,
    SubstituteSpec,
    WishartPrior,
    run_mba,
)
from .model import (
    SourceDraws,
    generate_example1,
    generate_example2,
    generate_example3,
    read_dataset_csv,
    write_dataset_csv,
)
from .parallel import TaskPlan, run_parallel
from .retail import (
    generate_retail,
    read_retail_csv,
    retail_fhm_baseline,
    retail_mba,
    retail_stage_one,
    write_retail_csv,
)
from .rngdist import MatrixSym, RandomStream, derive_seed

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


# -- config handling ------------------------------------------------------------


def load_schema(name: str) -> dict:
    text = resources.files("hiermba").joinpath("schemas", f"{name}.json").read_text("utf-8")
    return json.loads(text)


def validate_config(config: dict, name: str) -> None:
    """Raise :class:`ConfigError` listing every violation with its field path."""
    validator = jsonschema.Draft202012Validator(load_schema(name))
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [f"{'/'.join(str(p) for p in e.absolute_path) or '<root>'}: {e.message}"
                for e in errors]
        raise ConfigError("invalid config:\n  " + "\n  ".join(msgs))


def read_config(path, name: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be an object")
    validate_config(config, name)
    return config


def _dump(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_manifest(out: Path, command: str, config: dict, seed: int, extra: dict,
                   seconds: float) -> None:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    _dump({
        "command": command,
        "config": config,
        "config_sha256": hashlib.sha256(canon.encode("utf-8")).hexdigest(),
        "seed": seed,
        "versions": {"hiermba": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        **extra,
        "timing": {"wall_seconds": seconds},
    }, out / "manifest.json")


def _apply_overrides(config: dict, args) -> dict:
    config = dict(config)
    if args.seed is not None:
        config["seed"] = args.seed
    if getattr(args, "workers", None) is not None and "workers" in _schema_props(args.command):
        config["workers"] = args.workers
    return config


def _schema_props(name: str) -> dict:
    return load_schema(name).get("properties", {})


# -- simulate -------------------------------------------------------------------


def cmd_simulate(config: dict, out: Path) -> list:
    """Write one dataset CSV plus meta JSON per grid point and replicate."""
    seed = int(config.get("seed", 0))
    example = config["example"]
    reps = int(config.get("replicates", 1))
    if example == "retail":
        J, T = config.get("J", 8), config.get("T", 100)
        written = []
        for r in range(reps):
            stores = generate_retail(J, T, RandomStream(seed, 0, (r,)))
            path = out / f"retail_r{r}.csv"
            write_retail_csv(stores, path)
            _dump({"example": "retail", "seed": seed, "replicate": r,
                   "truth": stores.truth}, out / f"retail_r{r}.meta.json")
            written.append(path)
        return written
    n_js = config.get("n_j", {"example1": 5, "example2": 10, "example3": 18}[example])
    n_js = n_js if isinstance(n_js, list) else [n_js]
    written = []
    for g, n_j in enumerate(n_js):
        for r in range(reps):
            rng = RandomStream(seed, 0, (g, r))
            if example == "example1":
                data = generate_example1(config.get("J", 10), n_j, config.get("mu", 2.0),
                                         config.get("sigma2", 3.0), rng)
            elif example == "example2":
                p = config.get("p", 1)
                data = generate_example2(config.get("J", 20), n_j, p,
                                         config.get("phi", 40.0) * np.eye(p),
                                         config.get("kappa", 3.0), rng)
            else:
                data = generate_example3(config.get("J", 15), n_j, config.get("beta0", 30.0),
                                         config.get("sigma_u2", 10.0),
                                         config.get("sigma_v2", 40.0), rng)
            tag = f"{example}_nj{n_j}_r{r}"
            write_dataset_csv(data, out / f"{tag}.csv")
            meta = dict(data.meta)
            meta.update({"seed": seed, "replicate": r, "grid_index": g})
            _dump(meta, out / f"{tag}.meta.json")
            written.append(out / f"{tag}.csv")
    return written


# -- run ------------------------------------------------------------------------


def _load_datasets(paths) -> list:
    out = []
    for p in paths:
        p = Path(p)
        if not p.is_file():
            raise ConfigError(f"dataset not found: {p}")
        meta_path = p.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text("utf-8")) if meta_path.is_file() else None
        out.append(read_dataset_csv(p, meta))
    return out


def cmd_run(config: dict, out: Path) -> dict:
    """Replicate experiment(s); writes report CSV/JSON and plot series."""
    seed = int(config.get("seed", 0))
    methods = tuple(config.get("methods", ["fhm", "mba"]))
    reps = int(config.get("replicates", 100))
    workers = int(config.get("workers", 0))
    executor = config.get("executor", "thread")
    pilots = int(config.get("pilots", 10))
    pilot_iters = int(config.get("pilot_iters", 2000))
    params = dict(config.get("params", {}))
    datasets = _load_datasets(config["datasets"]) if "datasets" in config else None
    grid = config.get("grid")
    points = [(None, None)] if not grid else [(k, v) for k, vals in grid.items() for v in vals]
    want_path = "mse_path" in config
    summary = []
    path_rows = []
    for key, val in points:
        p = dict(params)
        if key is not None:
            p[key] = val
        setup = make_setup(config["example"], p)
        res = run_replicates(setup, methods, reps, seed, workers, executor, n_pilots=pilots,
                             pilot_iters=pilot_iters, keep_traces=want_path, datasets=datasets)
        reports = [res.reports[m] for m in methods]
        name = "report.csv" if key is None else f"report_{key}_{val}.csv"
        write_reports_csv(reports, out / name)
        summary.append({"grid": None if key is None else {key: val},
                        "reports": {m: res.reports[m].to_dict() for m in methods}})
        if want_path:
            truths = setup.truths(None)
            cps = config["mse_path"]["checkpoints"]
            if "fhm" in res.traces:
                for row in mse_path(res.traces["fhm"], truths, cps):
                    path_rows.append({"grid": val, "method": "fhm", **row})
            if "mba" in res.traces:
                rep = res.reports["mba"]
                path_rows.append({"grid": val, "method": "mba",
                                  "n_samples": rep.extra["iters"] - rep.extra["burn_in"],
                                  "seconds": rep.avg_seconds, "mse": rep.mse_overall})
    _dump(summary, out / "report.json")
    if want_path:
        _write_rows(path_rows, out / "mse_path.csv")
    if "timing_sweep" in config:
        ts = config["timing_sweep"]
        rows = timing_sweep(lambda J: make_setup(config["example"], {**params, "J": J}),
                            ts.get("J", [10, 20, 40, 80]), ts.get("replicates", 5), seed,
                            workers or 8, executor, pilots, pilot_iters)
        _write_rows(rows, out / "timing.csv")
    return {"reports": summary}


def _write_rows(rows: list, path) -> None:
    import csv

    if not rows:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


# -- combine ----------------------------------------------------------------------


def _summary_from_json(entry: dict, where: str, matrix_dim) -> SourceDraws:
    try:
        sid = int(entry["source_id"])
        mean = np.atleast_1d(np.asarray(entry["mean"], dtype=float)).ravel()
        q = mean.size
        cov = entry.get("cov")
        cov = np.eye(q) if cov is None else np.asarray(cov, dtype=float).reshape(q, q)
        nu = entry.get("nu")
        n = int(entry.get("n_draws", 0))
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestionError(f"{where}: malformed summary ({exc})") from None
    return SourceDraws(sid, None, mean, MatrixSym(cov, check=False), n,
                       None if nu is None else float(nu), matrix_dim)


def ingest_draws_dir(path, nu=None, matrix_dim=None) -> list:
    """Read every ``*.csv`` (draws) and ``*.json`` (summaries) in ``path``.

    Raises :class:`IngestionError` for an empty directory, duplicate
    sources or mixed dimensionalities (listing the offending files).
    """
    path = Path(path)
    if not path.is_dir():
        raise IngestionError(f"not a directory: {path}")
    files = sorted(f for f in path.iterdir() if f.suffix in (".csv", ".json"))
    if not files:
        raise IngestionError(f"{path}: no draws (*.csv) or summaries (*.json) found")
    found = []
    for f in files:
        if f.suffix == ".csv":
            items = read_draws_csv(f, nu=nu, matrix_dim=matrix_dim)
        else:
            data = json.loads(f.read_text("utf-8"))
            entries = data.get("sources", data) if isinstance(data, dict) else data
            if not isinstance(entries, list):
                raise IngestionError(f"{f}: expected a list of summaries")
            items = [_summary_from_json(e, str(f), matrix_dim) for e in entries]
            if nu:
                for d in items:
                    d.nu = d.nu if d.nu is not None else nu.get(d.source_id)
        found.extend((f.name, d) for d in items)
    dims = {}
    for name, d in found:
        dims.setdefault(d.q, set()).add(name)
    if len(dims) > 1:
        detail = "; ".join(f"q={q}: {', '.join(sorted(n))}" for q, n in sorted(dims.items()))
        raise IngestionError(f"mixed draw dimensions across files ({detail})")
    ids = [d.source_id for _, d in found]
    dup = sorted({i for i in ids if ids.count(i) > 1})
    if dup:
        raise IngestionError(f"duplicate source ids across files: {dup}")
    return sorted((d for _, d in found), key=lambda d: d.source_id)


def write_summaries_json(draws, path) -> None:
    """Summaries-only form accepted by ``combine``."""
    _dump([{"source_id": d.source_id, "mean": d.mean.tolist(), "cov": d.cov.values.tolist(),
            "nu": d.nu, "n_draws": d.n_draws} for d in draws], path)


def _combine_prior(config: dict, q: int):
    pr = config["prior"]
    try:
        if config["family"] == MVNORMAL:
            eye = np.eye(q)
            mu0 = np.broadcast_to(np.asarray(pr.get("mu0", 0.0), dtype=float), (q,))
            s0 = np.asarray(pr.get("sigma0", 1.0), dtype=float)
            om = np.asarray(pr.get("Omega", 1.0), dtype=float)
            s0 = s0 * eye if s0.ndim == 0 else s0
            om = om * eye if om.ndim == 0 else om
            return NormalPrior(mu0, s0, om, float(pr.get("k", q + 2)))
        if pr.get("family", "wishart") == "invwishart":
            return InvWishartPrior(pr["V"], pr["m"])
        return WishartPrior(pr["V"], pr["m"])
    except KeyError as exc:
        raise ConfigError(f"prior: missing field {exc}") from None


def posterior_summary(trace) -> dict:
    out = {}
    for name in trace.names:
        col = trace.column(name)
        ci = credible_interval(col, 0.95)
        out[name] = {"mean": float(col.mean()), "sd": float(col.std(ddof=1)),
                     "lo95": ci.lo, "hi95": ci.hi}
    return out


def cmd_combine(draws_dir, config: dict, out: Path) -> dict:
    nu = {int(k): float(v) for k, v in config.get("nu", {}).items()} or None
    draws = ingest_draws_dir(draws_dir, nu=nu, matrix_dim=config.get("matrix_dim"))
    prior = _combine_prior(config, draws[0].q)
    spec = SubstituteSpec(config["family"], draws, prior, kappa=config.get("kappa"))
    iters = int(config.get("iters", 5000))
    burn = int(config.get("burn_in", 1000))
    trace = run_mba(spec, iters, burn, RandomStream(int(config.get("seed", 0))))
    trace.to_csv(out / "trace.csv")
    summ = posterior_summary(trace)
    _dump(summ, out / "summary.json")
    return summ


# -- retail -----------------------------------------------------------------------


def cmd_retail(config: dict, out: Path, stores_subset=None) -> dict:
    seed = int(config.get("seed", 0))
    if "data" in config:
        ing = read_retail_csv(config["data"])
        stores, convention = ing.stores, ing.display_scale
    else:
        syn = config.get("synthetic", {})
        stores = generate_retail(syn.get("J", 8), syn.get("T", 100),
                                 RandomStream(seed, 0, (0,)), mu=syn.get("mu", (1.0, -2.0, 0.5)),
                                 sigma=syn.get("sigma", 0.25), r=syn.get("r", 3.0))
        convention = "fraction"
    subset = stores_subset or config.get("stores")
    if subset:
        keep = set(subset)
        missing = sorted(keep - {s.store_id for s in stores})
        if missing:
            raise ConfigError(f"stores not in data: {missing}")
        stores = [s for s in stores if s.store_id in keep]
    if len(stores) < 2:
        raise ConfigError("need at least two stores")
    L, burn = int(config.get("L", 1000)), int(config.get("burn_in", 1000))
    plan = TaskPlan([(s.store_id, functools.partial(retail_stage_one, s, L, burn))
                     for s in stores], int(config.get("workers", 0)),
                    derive_seed(seed, 1), config.get("executor", "process"))
    draws = run_parallel(plan)
    mba = retail_mba(draws, iters=int(config.get("iters", 4000)),
                     burn_in=int(config.get("mba_burn_in", 1000)),
                     rng=RandomStream(seed, 0, (2,)))
    mba.to_csv(out / "mba_trace.csv")
    fhm = None
    if config.get("baseline", False):
        fhm = retail_fhm_baseline(stores, int(config.get("baseline_iters", 6000)),
                                  int(config.get("baseline_burn_in", 2000)),
                                  RandomStream(seed, 0, (3,)))
        fhm.to_csv(out / "fhm_trace.csv")
    per_store = []
    for d in draws:
        sid = d.source_id
        row = {"store": sid, "stage_one_mean": d.mean.tolist(),
               "acceptance_rate": d.acceptance_rate,
               "mba_mean": [mba.posterior_mean(f"psi_{sid}_{c}") for c in (1, 2, 3)]}
        if fhm is not None:
            row["fhm_mean"] = [fhm.posterior_mean(f"beta_{sid}_{c}") for c in (1, 2, 3)]
        per_store.append(row)
    result = {"display_scale": convention,
              "mu_mba": [mba.posterior_mean(f"mu_{i}") for i in (1, 2, 3)],
              "stage_one_wall_seconds": draws.wall_seconds,
              "stores": per_store}
    if fhm is not None:
        result["mu_fhm"] = [fhm.posterior_mean(f"mu_{i}") for i in (1, 2, 3)]
    _dump(result, out / "stores.json")
    return result


# -- entry point ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hiermba", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, workers=True):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if workers:
            p.add_argument("--workers", type=int, default=None,
                           help="worker count (0 = available cores)")
        return p

    common(sub.add_parser("simulate", help="generate synthetic data sets"), workers=False)
    common(sub.add_parser("run", help="run FHM and/or MBA over replicates"))
    pc = common(sub.add_parser("combine", help="combine external posterior draws"))
    pc.add_argument("--draws", required=True, help="directory of draws CSV / summaries JSON")
    pr = common(sub.add_parser("retail", help="sales case study"))
    pr.add_argument("--stores", default=None, help="comma-separated store ids to keep")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    try:
        config = read_config(args.config, args.command)
        config = _apply_overrides(config, args)
        validate_config(config, args.command)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        extra = {}
        if args.command == "simulate":
            files = cmd_simulate(config, out)
            extra["files"] = [f.name for f in files]
        elif args.command == "run":
            cmd_run(config, out)
        elif args.command == "combine":
            cmd_combine(args.draws, config, out)
            extra["draws"] = str(args.draws)
        else:
            subset = None
            if args.stores:
                try:
                    subset = [int(s) for s in args.stores.split(",") if s.strip()]
                except ValueError:
                    raise ConfigError(f"--stores: expected integers, got {args.stores!r}") from None
            cmd_retail(config, out, subset)
            extra["stores"] = subset
        write_manifest(out, args.command, config, int(config.get("seed", 0)), extra,
                       time.perf_counter() - t0)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (HierMBAError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
