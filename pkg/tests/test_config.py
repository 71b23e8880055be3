import json

import pytest

from src.config import (DEFAULT_CONFIG, ConfigError, SolverOptions, apply_overrides, build_run_config,
                        load_config, save_config)


def _cfg(**run):
    cfg = load_config("/nonexistent/config.json")
    cfg["run"].update(run)
    return cfg


def test_missing_file_gives_defaults():
    cfg = load_config("/nonexistent/config.json")
    assert cfg == DEFAULT_CONFIG
    assert cfg is not DEFAULT_CONFIG


def test_partial_file_is_merged_over_defaults(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"run": {"case": "decay"}, "solver": {"tol": 1e-8}}))
    cfg = load_config(path)
    assert cfg["run"]["case"] == "decay"
    assert cfg["run"]["method"] == "hypo"
    assert cfg["solver"]["tol"] == 1e-8
    assert cfg["solver"]["restart"] == 60


@pytest.mark.parametrize("text", ["{not json", "[1, 2]"])
def test_unreadable_file_raises(tmp_path, text):
    path = tmp_path / "config.json"
    path.write_text(text)
    with pytest.raises(ConfigError):
        load_config(path)


def test_save_and_load_roundtrip(tmp_path):
    cfg = _cfg(case="instationary", p=[2, 3], q=[1, 2])
    path = save_config(cfg, tmp_path / "nested" / "config.json")
    assert load_config(path) == cfg


def test_overrides_only_touch_given_keys():
    cfg = apply_overrides(DEFAULT_CONFIG, {"case": "decay", "p": [2], "k": None, "out": "/tmp/x"})
    assert cfg["run"]["case"] == "decay"
    assert cfg["run"]["p"] == [2]
    assert cfg["run"]["k"] is None
    assert cfg["run"]["method"] == DEFAULT_CONFIG["run"]["method"]
    assert cfg["output"]["dir"] == "/tmp/x"
    assert DEFAULT_CONFIG["run"]["case"] == "stationary"


def test_run_config_pairs_degrees():
    run = build_run_config(_cfg(p=[1, 2, 3], q=[0], levels=[2, 4]))
    assert run.degrees == ((1, 0), (2, 0), (3, 0))
    assert run.levels == (2, 4)
    run = build_run_config(_cfg(p=4, q=2))
    assert run.degrees == ((4, 2),)
    assert isinstance(run.solver, SolverOptions)
    assert "raw" not in run.as_dict()


@pytest.mark.parametrize("run, message", [
    ({"case": "nope"}, "unknown case"),
    ({"method": "dg"}, "unknown method"),
    ({"p": [1, 2], "q": [0, 1, 2]}, "'q'"),
    ({"p": [0]}, "degree"),
    ({"q": [-1]}, "non-negative"),
    ({"levels": [8, 4]}, "increasing"),
    ({"levels": []}, "empty"),
    ({"k_rule": "h3"}, "k_rule"),
    ({"k_rule": "fixed", "k": None}, "positive"),
    ({"case": "instationary", "t_final": 2.0}, "admissible"),
    ({"t_final": -1.0}, "positive"),
    ({"threads": 0}, "threads"),
])
def test_invalid_run_sections(run, message):
    with pytest.raises(ConfigError, match=message):
        build_run_config(_cfg(**run))


def test_invalid_other_sections():
    cfg = _cfg()
    cfg["solver"]["method"] = "cg"
    with pytest.raises(ConfigError):
        build_run_config(cfg)
    cfg = _cfg()
    cfg["stabilisation"]["abc_scale"] = [1.0, 0.0, 1.0]
    with pytest.raises(ConfigError):
        build_run_config(cfg)
    cfg = _cfg()
    cfg["output"]["field_format"] = "hdf5"
    with pytest.raises(ConfigError):
        build_run_config(cfg)


@pytest.mark.parametrize("value, expected", [(None, None), ("analytic", "analytic"), (0.4, 0.4), (1, 1.0)])
def test_poincare_setting(value, expected):
    cfg = _cfg()
    cfg["stabilisation"]["poincare"] = value
    assert build_run_config(cfg).poincare == expected


@pytest.mark.parametrize("value", ["guess", 0.0, -1.0])
def test_invalid_poincare_setting(value):
    cfg = _cfg()
    cfg["stabilisation"]["poincare"] = value
    with pytest.raises(ConfigError, match="poincare"):
        build_run_config(cfg)
