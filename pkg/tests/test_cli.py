import glob
import json
import os
from dataclasses import replace

import numpy as np
import pytest

from output import read_report
from src import experiments
from src.archive import RunArchive, read_records
from src.cases import get_case
from src.config import ConfigError, build_run_config, load_config
from src.main import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, build_parser, main
from src.stab import UNIT_SQUARE_POINCARE

MISSING = "/nonexistent/config.json"


def _run_dir(out, command):
    dirs = glob.glob(os.path.join(str(out), f"{command}-*"))
    assert len(dirs) == 1, dirs
    return dirs[0]


def _run_config(**run):
    cfg = load_config(MISSING)
    cfg["run"].update(run)
    cfg["output"]["plots"] = False
    return build_run_config(cfg)


def test_parser():
    args = build_parser().parse_args(["convergence", "--p", "1", "2", "--q", "0", "--k-rule", "h2",
                                      "--no-timing", "--allow-large"])
    assert args.command == "convergence"
    assert args.p == [1, 2] and args.q == [0]
    assert args.k_rule == "h2"
    assert args.timing is False and args.allow_large is True
    defaults = build_parser().parse_args(["solve"])
    assert defaults.timing is None and defaults.allow_large is None
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train"])


def test_params_dump(tmp_path):
    code = main(["params-dump", "--config", MISSING, "--p", "1", "2", "--levels", "2",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    rows = read_report(os.path.join(_run_dir(tmp_path, "params-dump"), "params.csv"))
    assert len(rows) == 16
    assert {r["p"] for r in rows} == {"1", "2"}
    assert all(float(r["tau"]) > 0 for r in rows)


def test_unknown_case_is_a_config_error(tmp_path):
    assert main(["solve", "--config", MISSING, "--case", "nope", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_driver_config_errors_finish_the_archive(tmp_path):
    code = main(["convergence", "--config", MISSING, "--case", "decay", "--levels", "2",
                 "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    with open(os.path.join(_run_dir(tmp_path, "convergence"), "events.jsonl"), encoding="utf-8") as f:
        last = json.loads(f.read().splitlines()[-1])
    assert last["event"] == "finished" and last["status"] == "config_error"
    assert main(["solve", "--config", MISSING, "--levels", "2", "4", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_solve_exports_the_final_field(tmp_path):
    code = main(["solve", "--config", MISSING, "--case", "decay", "--p", "1", "--q", "0",
                 "--levels", "2", "--k-rule", "fixed", "--k", "0.5", "--t-final", "1",
                 "--out", str(tmp_path)])
    assert code == EXIT_OK
    run_dir = _run_dir(tmp_path, "solve")
    with open(os.path.join(run_dir, "solution.csv"), encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[0] == "dof,x,y,u"
    assert len(lines) == 1 + 9
    rows = read_report(os.path.join(run_dir, "solve.csv"))
    assert len(rows) == 1
    assert rows[0]["elements"] == "8" and rows[0]["dofs"] == str(2 * 9)


def test_solver_failure_exit_code(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"solver": {"method": "gmres", "preconditioner": "none", "tol": 1e-14,
                                           "restart": 1, "max_iter": 1}}))
    code = main(["solve", "--config", str(path), "--case", "stationary", "--p", "2", "--levels", "4",
                 "--out", str(tmp_path / "out")])
    assert code == EXIT_SOLVER


def test_convergence_table_is_reproducible(tmp_path):
    argv = ["convergence", "--config", MISSING, "--case", "stationary", "--p", "1", "--q", "0",
            "--levels", "2", "4", "--k-rule", "single", "--no-timing"]
    assert main(argv + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(argv + ["--out", str(tmp_path / "b")]) == EXIT_OK
    first = os.path.join(_run_dir(tmp_path / "a", "convergence"), "convergence.csv")
    second = os.path.join(_run_dir(tmp_path / "b", "convergence"), "convergence.csv")
    with open(first, "rb") as f, open(second, "rb") as g:
        assert f.read() == g.read()
    rows = read_report(first)
    assert len(rows) == 2
    assert rows[0]["eoc_st"] == "" and rows[1]["eoc_st"] != ""
    assert float(rows[1]["err_st"]) < float(rows[0]["err_st"])
    assert rows[0]["wall_s"] == ""
    assert os.path.exists(os.path.join(os.path.dirname(first), "convergence_h.svg"))


def test_threaded_sweep_matches_serial(tmp_path):
    run = _run_config(case="stationary", p=[1], q=[0], levels=[2, 4], timing=False)
    serial = experiments.run_convergence(run, RunArchive(str(tmp_path), "convergence", run))
    threaded_run = replace(run, threads=2)
    archive = RunArchive(str(tmp_path), "convergence", threaded_run)
    threaded = experiments.run_convergence(threaded_run, archive)
    assert [r["err_st"] for r in threaded] == pytest.approx([r["err_st"] for r in serial], rel=1e-12)
    # both levels are started before the first result is collected
    order = [(e["event"], e["n"]) for e in archive.events()]
    assert order == [("level_started", 2), ("level_started", 4), ("level_finished", 2), ("level_finished", 4)]


def test_decay_is_monotone_and_below_the_envelope(tmp_path):
    run = _run_config(case="decay", p=[1], q=[0], levels=[2, 4], k_rule="h", t_final=2.0)
    archive = RunArchive(str(tmp_path), "decay", run)
    results = experiments.run_decay(run, archive)
    assert len(results) == 2
    for res in results:
        assert res.monotone and res.within_envelope
        assert experiments.envelope_violations(res.norms, res.envelope) == []
        assert res.kappa > 0
        assert res.norms[-1] < res.norms[0]
        assert np.all(res.envelope <= res.norms[0] * (1 + 1e-14))
    poincare = [e for e in archive.events() if e["event"] == "poincare"]
    assert len(poincare) == 1 and poincare[0]["source"] == "discrete"
    with pytest.raises(ConfigError):
        stationary = _run_config(case="stationary")
        experiments.run_decay(stationary, RunArchive(str(tmp_path), "decay", stationary))


@pytest.mark.slow
@pytest.mark.parametrize("p, q", [(1, 0), (1, 1), (2, 0), (2, 1)])
def test_decay_stays_below_the_envelope_at_every_breakpoint(tmp_path, p, q):
    run = _run_config(case="decay", p=[p], q=[q], levels=[4, 8], k_rule="h", t_final=8.0)
    results = experiments.run_decay(run, RunArchive(str(tmp_path), "decay", run))
    assert [res.n for res in results] == [4, 8]
    for res in results:
        assert experiments.check_decay(res.norms) == []
        assert experiments.envelope_violations(res.norms, res.envelope) == []
        assert res.monotone and res.within_envelope


def test_envelope_is_checked_at_every_breakpoint():
    # back under the envelope at t_N after leaving it at t_1
    assert experiments.envelope_violations([1.0, 1.0, 0.5], [1.0, 0.9, 0.8]) == [1]
    assert experiments.envelope_violations([1.0, 0.9, 0.8], [1.0, 0.9, 0.8]) == []
    assert experiments.envelope_violations([1.0, 0.9 * (1 + 1e-14)], [1.0, 0.9]) == []
    with pytest.raises(ValueError):
        experiments.envelope_violations([1.0, 0.5], [1.0])


def test_poincare_constant_sources():
    value, source = experiments.poincare_constant(_run_config(levels=[2]))
    assert source == "discrete"
    assert value >= UNIT_SQUARE_POINCARE
    cfg = load_config(MISSING)
    cfg["stabilisation"]["poincare"] = "analytic"
    assert experiments.poincare_constant(build_run_config(cfg)) == (UNIT_SQUARE_POINCARE, "analytic")
    cfg["stabilisation"]["poincare"] = 0.5
    assert experiments.poincare_constant(build_run_config(cfg)) == (0.5, "configured")


def test_params_dump_records_the_poincare_constant(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"stabilisation": {"poincare": "analytic"}}))
    assert main(["params-dump", "--config", str(path), "--levels", "2", "--out", str(tmp_path / "out")]) == EXIT_OK
    run_dir = _run_dir(tmp_path / "out", "params-dump")
    rows = read_report(os.path.join(run_dir, "params.csv"))
    assert {r["C_PF_source"] for r in rows} == {"analytic"}
    assert float(rows[0]["C_PF"]) == pytest.approx(UNIT_SQUARE_POINCARE)
    events = read_records(os.path.join(run_dir, "events.jsonl"))
    assert [e["source"] for e in events if e["event"] == "poincare"] == ["analytic"]


def test_setup_wizard_accepts_defaults(tmp_path, monkeypatch):
    monkeypatch.setattr("builtins.input", lambda _: "")
    path = tmp_path / "config.json"
    assert main(["setup", "--config", str(path)]) == EXIT_OK
    assert load_config(path)["run"]["case"] == "stationary"


def test_level_guard_and_partition_rules():
    run = _run_config(k_rule="h2", p=[3], levels=[4])
    assert not experiments.level_skipped(run, 3, 32)
    assert experiments.level_skipped(run, 3, 64)
    assert not experiments.level_skipped(run, 2, 64)
    assert not experiments.level_skipped(replace(run, allow_large=True), 4, 64)
    case = get_case("instationary")
    assert experiments.make_partition(run, case, 0.5).n_slabs == 4
    assert experiments.make_partition(replace(run, k_rule="h"), case, 0.5).n_slabs == 2
    assert experiments.make_partition(replace(run, k_rule="single"), case, 0.5).n_slabs == 1
    assert experiments.make_partition(replace(run, k_rule="fixed", k=0.1), case, 0.5).n_slabs == 10


def test_check_decay():
    assert experiments.check_decay([1.0, 0.9, 0.9, 0.95, 0.5]) == [3]
    assert experiments.check_decay([1.0, 1.0 + 1e-14]) == []


@pytest.mark.slow
@pytest.mark.parametrize("p, levels", [(1, [32, 64]), (2, [32, 64]), (3, [32, 64]), (4, [16, 32])])
def test_stationary_rates_match_the_degree(tmp_path, p, levels):
    run = _run_config(case="stationary", p=[p], q=[0], levels=levels, timing=False)
    records = experiments.run_convergence(run, RunArchive(str(tmp_path), "convergence", run))
    assert abs(records[-1]["eoc_st"] - p) <= 0.25


@pytest.mark.slow
@pytest.mark.parametrize("p, q, levels", [(1, 0, [16, 32]), (2, 1, [16, 32]), (3, 2, [8, 16]), (4, 2, [8, 16])])
def test_instationary_rates_with_quadratic_time_steps(tmp_path, p, q, levels):
    run = _run_config(case="instationary", p=[p], q=[q], levels=levels, k_rule="h2", timing=False)
    records = experiments.run_convergence(run, RunArchive(str(tmp_path), "convergence", run))
    # k = h^2 turns the k^(q+1/2) time error into h^(2q+1)
    expected = min(p, 2 * q + 1)
    assert abs(records[-1]["eoc_st"] - expected) <= 0.3
