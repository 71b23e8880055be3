#!/usr/bin/env python3
"""
setup_config.py
Interactive wizard for the run configuration.
If config/config.json already exists its values are offered as defaults,
press Enter to keep them.
"""

import copy
import json
import os

from src.config import CONFIG_PATH, DEFAULT_CONFIG, save_config


def prompt(text, default=None):
    """Helper prompt with default value"""
    if default is not None and default != "":
        text = f"{text} [{default}]: "
    else:
        text = f"{text}: "
    return input(text) or default


def _as_list(value):
    if isinstance(value, (list, tuple)):
        return " ".join(str(v) for v in value)
    return value


def _ints(text):
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).replace(",", " ").split()]


def _optional_float(text):
    if text in (None, "", "none", "None"):
        return None
    return float(text)


def load_existing(path=None):
    path = str(path or CONFIG_PATH)
    if os.path.exists(path):
        try:
            with open(path, "r", encoding="utf-8") as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError):
            return {}
    return {}


def run_setup(path=None):
    print("=== Kolmogorov FEM - Setup Config ===")

    existing = load_existing(path)
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for section, values in existing.items():
        if isinstance(values, dict) and section in cfg:
            cfg[section].update(values)

    # --- Run
    print("\n-- Run --")
    run = cfg["run"]
    run["case"] = prompt("Case (stationary / instationary / decay)", run["case"])
    run["method"] = prompt("Method (hypo / supg / galerkin)", run["method"])
    run["p"] = _ints(prompt("Spatial degrees p", _as_list(run["p"])))
    run["q"] = _ints(prompt("Time degrees q (one, or one per p)", _as_list(run["q"])))
    run["levels"] = _ints(prompt("Mesh levels (cells per side)", _as_list(run["levels"])))
    run["k_rule"] = prompt("Time step rule (single / fixed / h / h2)", run["k_rule"])
    if run["k_rule"] == "fixed":
        run["k"] = _optional_float(prompt("Time step k", run.get("k")))
    run["t_final"] = _optional_float(prompt("Final time (empty = case default)", run.get("t_final")))
    run["threads"] = int(prompt("Levels solved concurrently", run["threads"]))

    # --- Solver
    print("\n-- Solver --")
    solver = cfg["solver"]
    solver["method"] = prompt("Linear solver (gmres / direct / dense)", solver["method"])
    if solver["method"] == "gmres":
        solver["preconditioner"] = prompt("Preconditioner (none / jacobi / ilu0 / ilu)", solver["preconditioner"])
        solver["tol"] = float(prompt("Relative residual tolerance", solver["tol"]))

    # --- Stabilisation
    print("\n-- Stabilisation --")
    stab = cfg["stabilisation"]
    stab["inverse_constants"] = prompt("Inverse constants (element / global)", stab["inverse_constants"])
    poincare = prompt("Poincare constant C_PF (number / analytic, empty = estimate)", stab.get("poincare"))
    stab["poincare"] = poincare if poincare == "analytic" else _optional_float(poincare)

    # --- Output
    print("\n-- Output --")
    output = cfg["output"]
    output["dir"] = prompt("Results directory", output["dir"])
    output["field_format"] = prompt("Field export format (csv / vtk)", output["field_format"])

    # --- Logging
    print("\n-- Logging --")
    logging_cfg = cfg["logging"]
    logging_cfg["dir"] = prompt("Log directory", logging_cfg["dir"])
    logging_cfg["level"] = prompt("Console log level", logging_cfg["level"])

    saved = save_config(cfg, path)
    print(f"\nConfig saved to {saved}")
    print("Setup finished.")
    return cfg


if __name__ == "__main__":
    run_setup()
