# src/config.py
import copy
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Dict, Any, List, Optional, Tuple, Union

from src.logger import log_warning, log_success

BASE_DIR = Path(__file__).resolve().parents[1]
CONFIG_PATH = BASE_DIR / "config" / "config.json"

METHODS = ("galerkin", "supg", "hypo")
K_RULES = ("single", "fixed", "h", "h2")
SOLVERS = ("gmres", "direct", "dense")
PRECONDITIONERS = ("none", "jacobi", "ilu0", "ilu")
FIELD_FORMATS = ("csv", "vtk")
POINCARE_SOURCES = ("analytic",)

DEFAULT_CONFIG: Dict[str, Any] = {
    "run": {
        "case": "stationary",
        "method": "hypo",
        "p": [1],
        "q": [0],
        "levels": [4, 8],
        "k_rule": "single",
        "k": None,
        "t_final": None,
        "seed": 1234,
        "timing": True,
        "allow_large": False,
        "threads": 1,
    },
    "solver": {
        "method": "gmres",
        "preconditioner": "ilu0",
        "tol": 1e-10,
        "restart": 60,
        "max_iter": 2000,
        "ilu_drop_tol": 1e-8,
        "ilu_fill_factor": 20.0,
        "dense_cap": 3000,
    },
    "stabilisation": {
        "inverse_constants": "element",
        "abc_scale": [1.0, 1.0, 1.0],
        "poincare": None,
    },
    "output": {
        "dir": "results",
        "field_format": "csv",
        "plots": True,
    },
    "logging": {
        "dir": "logs",
        "level": "INFO",
        "console": True,
    },
}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (CLI exit code 3)."""


@dataclass(frozen=True)
class SolverOptions:
    method: str = "gmres"
    preconditioner: str = "ilu0"
    tol: float = 1e-10
    restart: int = 60
    max_iter: int = 2000
    ilu_drop_tol: float = 1e-8
    ilu_fill_factor: float = 20.0
    dense_cap: int = 3000


@dataclass(frozen=True)
class RunConfig:
    case: str
    method: str
    degrees: Tuple[Tuple[int, int], ...]
    levels: Tuple[int, ...]
    k_rule: str
    k: Optional[float]
    t_final: Optional[float]
    seed: int
    timing: bool
    allow_large: bool
    threads: int
    solver: SolverOptions
    inverse_constants: str
    abc_scale: Tuple[float, float, float]
    poincare: Union[float, str, None]
    out_dir: str
    field_format: str
    plots: bool
    raw: Dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def as_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("raw", None)
        return data


def _deep_merge(base: Dict[str, Any], extra: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in (extra or {}).items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def load_config(path=None) -> Dict[str, Any]:
    """
    Load a JSON run configuration merged over DEFAULT_CONFIG.
    A missing file yields the defaults; an unreadable one raises ConfigError.
    """
    path = Path(path) if path else CONFIG_PATH
    if not path.exists():
        log_warning(f"config not found at {path}, using built-in defaults. "
                    f"Create one with `python run.py setup`.")
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Failed to read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must hold a JSON object")
    return _deep_merge(DEFAULT_CONFIG, data)


def save_config(data: Dict[str, Any], path=None) -> Path:
    """
    Save a configuration document (pretty-printed, parents created).
    """
    path = Path(path) if path else CONFIG_PATH
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    log_success(f"Config saved to {path}")
    return path


def apply_overrides(cfg: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """
    Apply flat CLI overrides (None means "not given") onto the run/output
    sections. Keys: case, method, p, q, levels, k_rule, k, t_final, out,
    threads, seed.
    """
    cfg = copy.deepcopy(cfg)
    run = cfg.setdefault("run", {})
    for key in ("case", "method", "p", "q", "levels", "k_rule", "k", "t_final", "threads", "seed"):
        value = overrides.get(key)
        if value is not None:
            run[key] = value
    if overrides.get("out") is not None:
        cfg.setdefault("output", {})["dir"] = overrides["out"]
    return cfg


def _as_int_list(value, name) -> List[int]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    try:
        items = [int(v) for v in value]
    except (TypeError, ValueError) as e:
        raise ConfigError(f"'{name}' must be an integer or a list of integers") from e
    if not items:
        raise ConfigError(f"'{name}' must not be empty")
    return items


def build_run_config(cfg: Dict[str, Any]) -> RunConfig:
    """Validate a merged configuration document and freeze it."""
    from src.cases import get_case, available_cases

    run = cfg.get("run", {})
    solver = cfg.get("solver", {})
    stab = cfg.get("stabilisation", {})
    output = cfg.get("output", {})

    case_name = run.get("case")
    if case_name not in available_cases():
        raise ConfigError(f"unknown case '{case_name}' (available: {', '.join(available_cases())})")
    method = run.get("method")
    if method not in METHODS:
        raise ConfigError(f"unknown method '{method}' (expected one of {METHODS})")

    ps = _as_int_list(run.get("p"), "p")
    qs = _as_int_list(run.get("q"), "q")
    if len(qs) == 1 and len(ps) > 1:
        qs = qs * len(ps)
    if len(qs) != len(ps):
        raise ConfigError("'q' must be a single value or match the length of 'p'")
    if any(p < 1 or p > 8 for p in ps):
        raise ConfigError("polynomial degree p must lie in 1..8")
    if any(q < 0 for q in qs):
        raise ConfigError("time degree q must be non-negative")

    levels = _as_int_list(run.get("levels"), "levels")
    if any(n < 1 for n in levels):
        raise ConfigError("levels are cells per side and must be positive")
    if sorted(set(levels)) != levels:
        raise ConfigError("levels must be strictly increasing")

    k_rule = run.get("k_rule")
    if k_rule not in K_RULES:
        raise ConfigError(f"unknown k_rule '{k_rule}' (expected one of {K_RULES})")
    k = run.get("k")
    if k_rule == "fixed" and (k is None or float(k) <= 0):
        raise ConfigError("k_rule 'fixed' needs a positive 'k'")
    t_final = run.get("t_final")
    if t_final is not None and float(t_final) <= 0:
        raise ConfigError("t_final must be positive")

    case = get_case(case_name)
    if t_final is not None and float(t_final) >= case.t_max:
        raise ConfigError(f"t_final={t_final} exceeds the admissible range of case '{case_name}'")

    if solver.get("method") not in SOLVERS:
        raise ConfigError(f"unknown solver '{solver.get('method')}'")
    if solver.get("preconditioner") not in PRECONDITIONERS:
        raise ConfigError(f"unknown preconditioner '{solver.get('preconditioner')}'")
    if stab.get("inverse_constants") not in ("element", "global"):
        raise ConfigError("stabilisation.inverse_constants must be 'element' or 'global'")
    scale = stab.get("abc_scale") or [1.0, 1.0, 1.0]
    if len(scale) != 3 or any(float(s) <= 0 for s in scale):
        raise ConfigError("stabilisation.abc_scale must hold three positive numbers")
    if output.get("field_format", "csv") not in FIELD_FORMATS:
        raise ConfigError(f"unknown field format '{output.get('field_format')}'")
    poincare = stab.get("poincare")
    if isinstance(poincare, str):
        if poincare not in POINCARE_SOURCES:
            raise ConfigError(f"stabilisation.poincare must be a number, null or one of {POINCARE_SOURCES}")
    elif poincare is not None:
        poincare = float(poincare)
        if poincare <= 0:
            raise ConfigError("stabilisation.poincare must be positive")
    threads = run.get("threads")
    threads = 1 if threads is None else int(threads)
    if threads < 1:
        raise ConfigError("threads must be at least 1")

    return RunConfig(
        case=case_name,
        method=method,
        degrees=tuple(zip(ps, qs)),
        levels=tuple(levels),
        k_rule=k_rule,
        k=float(k) if k is not None else None,
        t_final=float(t_final) if t_final is not None else None,
        seed=int(run.get("seed", 0)),
        timing=bool(run.get("timing", True)),
        allow_large=bool(run.get("allow_large", False)),
        threads=threads,
        solver=SolverOptions(
            method=solver["method"],
            preconditioner=solver["preconditioner"],
            tol=float(solver.get("tol", 1e-10)),
            restart=int(solver.get("restart", 60)),
            max_iter=int(solver.get("max_iter", 2000)),
            ilu_drop_tol=float(solver.get("ilu_drop_tol", 1e-8)),
            ilu_fill_factor=float(solver.get("ilu_fill_factor", 20.0)),
            dense_cap=int(solver.get("dense_cap", 3000)),
        ),
        inverse_constants=stab["inverse_constants"],
        abc_scale=tuple(float(s) for s in scale),
        poincare=poincare,
        out_dir=str(output.get("dir", "results")),
        field_format=output.get("field_format", "csv"),
        plots=bool(output.get("plots", True)),
        raw=copy.deepcopy(cfg),
    )
