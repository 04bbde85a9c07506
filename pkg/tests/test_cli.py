import csv
import json
import subprocess
import sys

import pytest

from hiermba.cli import ingest_draws_dir, main, write_summaries_json
from hiermba.errors import IngestionError
from hiermba.independent import indep_normal, write_draws_csv
from hiermba.model import SourceData
from hiermba.rngdist import RandomStream


def _cfg(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_simulate_writes_and_is_deterministic(tmp_path):
    cfg = _cfg(tmp_path, "s.json", {"example": "example1", "J": 10, "n_j": 5, "mu": 2,
                                     "sigma2": 3, "seed": 1})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "example1_nj5_r0.csv").read_bytes()
    b = (tmp_path / "b" / "example1_nj5_r0.csv").read_bytes()
    assert a == b
    meta = json.loads((tmp_path / "a" / "example1_nj5_r0.meta.json").read_text())
    assert meta["truth"] == {"mu": 2, "sigma2": 3}
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert {"config_sha256", "seed", "versions", "timing"} <= set(man)


def test_simulate_rejects_J_one(tmp_path, capsys):
    cfg = _cfg(tmp_path, "s.json", {"example": "example1", "J": 1})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "J" in capsys.readouterr().err


def test_simulate_grid(tmp_path):
    cfg = _cfg(tmp_path, "s.json", {"example": "example2", "n_j": [5, 10, 20, 30], "seed": 2})
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert len(list(tmp_path.glob("example2_nj*_r0.csv"))) == 4


def test_seed_flag_overrides(tmp_path):
    cfg = _cfg(tmp_path, "s.json", {"example": "example1", "seed": 1})
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "7"])
    assert (tmp_path / "a" / "example1_nj5_r0.csv").read_bytes() != \
        (tmp_path / "b" / "example1_nj5_r0.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "manifest.json").read_text())["seed"] == 7


RUN = {"example": "example1", "replicates": 3, "pilots": 2, "pilot_iters": 400, "seed": 5,
       "workers": 1}


def test_run_report_rows(tmp_path):
    cfg = _cfg(tmp_path, "r.json", RUN)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = _read_csv(tmp_path / "o" / "report.csv")
    assert [(r["method"], r["parameter"]) for r in rows] == [
        ("fhm", "mu"), ("fhm", "sigma2"), ("fhm", "overall"),
        ("mba", "mu"), ("mba", "sigma2"), ("mba", "overall")]


def test_run_mba_only(tmp_path):
    cfg = _cfg(tmp_path, "r.json", {**RUN, "methods": ["mba"]})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert {r["method"] for r in _read_csv(tmp_path / "report.csv")} == {"mba"}


def test_run_repeatable_except_timing(tmp_path):
    cfg = _cfg(tmp_path, "r.json", RUN)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--out", str(tmp_path / "b")])
    strip = lambda rows: [{k: v for k, v in r.items() if k != "avg_seconds"} for r in rows]
    assert strip(_read_csv(tmp_path / "a" / "report.csv")) == \
        strip(_read_csv(tmp_path / "b" / "report.csv"))


def test_run_bad_method(tmp_path):
    cfg = _cfg(tmp_path, "r.json", {**RUN, "methods": ["hmc"]})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_run_missing_dataset(tmp_path):
    cfg = _cfg(tmp_path, "r.json", {**RUN, "datasets": [str(tmp_path / "nope.csv")]})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 2


def test_run_plot_series(tmp_path):
    cfg = _cfg(tmp_path, "r.json", {**RUN, "replicates": 2,
                                     "mse_path": {"checkpoints": [100, 200]},
                                     "timing_sweep": {"J": [4, 8], "replicates": 1}})
    assert main(["run", "--config", cfg, "--out", str(tmp_path)]) == 0
    assert {r["method"] for r in _read_csv(tmp_path / "mse_path.csv")} == {"fhm", "mba"}
    assert [r["J"] for r in _read_csv(tmp_path / "timing.csv")] == ["4", "8"]


def _toy_draws():
    srcs = [indep_normal(SourceData(j, [m] * 4), {"mu": 0.0, "sigma2": 100.0}, 500,
                         RandomStream(3, j)) for j, m in ((1, -1.0), (2, 3.0))]
    return srcs


COMBINE = {"family": "mvnormal", "prior": {"mu0": 0, "sigma0": 100, "Omega": 1, "k": 3},
           "iters": 3000, "burn_in": 500, "seed": 4}


def test_combine_between_sources(tmp_path):
    d = tmp_path / "draws"
    d.mkdir()
    srcs = _toy_draws()
    write_draws_csv(srcs, d / "all.csv")
    cfg = _cfg(tmp_path, "c.json", COMBINE)
    assert main(["combine", "--config", cfg, "--draws", str(d), "--out", str(tmp_path / "o")]) == 0
    summ = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert srcs[0].mean[0] < summ["mu"]["mean"] < srcs[1].mean[0]


def test_combine_summaries_match_draws(tmp_path):
    srcs = _toy_draws()
    (tmp_path / "raw").mkdir()
    (tmp_path / "sum").mkdir()
    write_draws_csv(srcs, tmp_path / "raw" / "d.csv")
    write_summaries_json(ingest_draws_dir(tmp_path / "raw"), tmp_path / "sum" / "s.json")
    cfg = _cfg(tmp_path, "c.json", COMBINE)
    main(["combine", "--config", cfg, "--draws", str(tmp_path / "raw"), "--out", str(tmp_path / "a")])
    main(["combine", "--config", cfg, "--draws", str(tmp_path / "sum"), "--out", str(tmp_path / "b")])
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()


def test_combine_ingestion_errors(tmp_path):
    (tmp_path / "empty").mkdir()
    with pytest.raises(IngestionError):
        ingest_draws_dir(tmp_path / "empty")
    mixed = tmp_path / "mixed"
    mixed.mkdir()
    write_draws_csv(_toy_draws()[:1], mixed / "a.csv")
    (mixed / "b.csv").write_text("source_id,draw_index,v_1,v_2\n2,0,1,2\n2,1,2,1\n")
    with pytest.raises(IngestionError) as info:
        ingest_draws_dir(mixed)
    assert "a.csv" in str(info.value) and "b.csv" in str(info.value)
    cfg = _cfg(tmp_path, "c.json", COMBINE)
    assert main(["combine", "--config", cfg, "--draws", str(tmp_path / "empty"),
                 "--out", str(tmp_path / "o")]) == 3


def test_combine_invwishart(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "s.json").write_text(json.dumps([
        {"source_id": 1, "mean": [2.0], "nu": 5}, {"source_id": 2, "mean": [0.5], "nu": 8}]))
    cfg = _cfg(tmp_path, "c.json", {"family": "invwishart", "prior": {"V": 1.0, "m": 3},
                                     "kappa": 3, "iters": 500, "burn_in": 100})
    assert main(["combine", "--config", cfg, "--draws", str(d), "--out", str(tmp_path / "o")]) == 0
    summ = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summ["phi"]["mean"] > 0


def test_retail_subset(tmp_path):
    cfg = _cfg(tmp_path, "rt.json", {"synthetic": {"J": 4, "T": 40}, "L": 200, "burn_in": 200,
                                      "iters": 400, "mba_burn_in": 100, "workers": 1, "seed": 3})
    assert main(["retail", "--config", cfg, "--out", str(tmp_path), "--stores", "1,3"]) == 0
    res = json.loads((tmp_path / "stores.json").read_text())
    assert [s["store"] for s in res["stores"]] == [1, 3]
    assert main(["retail", "--config", cfg, "--out", str(tmp_path), "--stores", "9"]) == 2


def test_console_entry_point(tmp_path):
    cfg = _cfg(tmp_path, "s.json", {"example": "example3", "J": 3, "n_j": 2})
    proc = subprocess.run([sys.executable, "-m", "hiermba.cli", "simulate", "--config", cfg,
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "example3_nj2_r0.csv").is_file()
