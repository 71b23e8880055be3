# src/main.py
import argparse
import os
from typing import List, Optional

from src.archive import RunArchive
from src.config import ConfigError, K_RULES, METHODS, apply_overrides, build_run_config, load_config
from src.linalg import SolverError
from src.logger import init_logging, log_error, log_info, reset_logging

EXIT_OK = 0
EXIT_SOLVER = 2
EXIT_CONFIG = 3

COMMANDS = ("convergence", "decay", "solve", "params-dump", "setup")

EPILOG = """
Examples:
  python run.py setup                                   # write config/config.json
  python run.py convergence --case stationary --p 1 2 3 4 --q 0 --levels 4 8 16 32
  python run.py convergence --case instationary --p 1 2 3 4 --q 0 1 2 2 --k-rule h2
  python run.py decay --case decay --p 1 --q 0 --levels 4 8 --k-rule h
  python run.py decay --case decay --method supg --k-rule h
  python run.py solve --case decay --p 1 --q 0 --levels 1 --k-rule fixed --k 0.1
  python run.py params-dump --p 2 --levels 4

Precedence: built-in defaults < --config JSON < command-line flags.
"""


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="run.py",
        description="Stabilised space-time finite elements for the Kolmogorov equation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=EPILOG,
    )
    parser.add_argument("command", choices=COMMANDS, help="what to run")
    parser.add_argument("--config", help="JSON run configuration (default config/config.json)")
    parser.add_argument("--case", help="case name (stationary, instationary, decay)")
    parser.add_argument("--method", choices=METHODS, help="discretisation")
    parser.add_argument("--p", type=int, nargs="+", help="spatial degree(s)")
    parser.add_argument("--q", type=int, nargs="+", help="time degree(s), one or one per p")
    parser.add_argument("--levels", type=int, nargs="+", help="cells per side of each mesh level")
    parser.add_argument("--k-rule", dest="k_rule", choices=K_RULES, help="time step rule")
    parser.add_argument("--k", type=float, help="time step for --k-rule fixed")
    parser.add_argument("--t-final", dest="t_final", type=float, help="final time override")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--threads", type=int, help="levels solved concurrently")
    parser.add_argument("--seed", type=int, help="seed stored with the run")
    parser.add_argument("--no-timing", dest="timing", action="store_false", default=None,
                        help="leave wall times out of the outputs")
    parser.add_argument("--allow-large", dest="allow_large", action="store_true", default=None,
                        help="include the finest levels for p=3,4 with k=h^2")
    return parser


def _overrides(args) -> dict:
    return {
        "case": args.case,
        "method": args.method,
        "p": args.p,
        "q": args.q,
        "levels": args.levels,
        "k_rule": args.k_rule,
        "k": args.k,
        "t_final": args.t_final,
        "out": args.out,
        "threads": args.threads,
        "seed": args.seed,
    }


def _run_command(command: str, run, archive: RunArchive) -> None:
    from src import experiments

    if command == "convergence":
        records = experiments.run_convergence(run, archive)
        for rec in records:
            eoc = "" if rec["eoc_st"] is None else f"{rec['eoc_st']:.3f}"
            print(f"p={rec['p']} q={rec['q']} elements={rec['elements']:>6} "
                  f"err_st={rec['err_st']:.4e} eoc={eoc}")
    elif command == "decay":
        for res in experiments.run_decay(run, archive):
            status = "monotone" if res.monotone else "NOT monotone"
            bound = "within envelope" if res.within_envelope else "ABOVE envelope"
            print(f"p={res.p} q={res.q} n={res.n}: ||U(t_N)||/||U(t_0)|| = "
                  f"{res.norms[-1] / res.norms[0]:.6f} ({status}, {bound})")
    elif command == "solve":
        result, path = experiments.run_solve(run, archive)
        print(f"Field written to {path}")
        print(experiments.format_report(result.report))
    elif command == "params-dump":
        count = experiments.params_dump(run, archive)
        print(f"{count} ledger rows written to {archive.file('params.csv')}")


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "setup":
        import setup_config

        setup_config.run_setup(args.config)
        return EXIT_OK

    archive = None
    try:
        cfg = apply_overrides(load_config(args.config), _overrides(args))
        if args.timing is not None:
            cfg["run"]["timing"] = args.timing
        if args.allow_large is not None:
            cfg["run"]["allow_large"] = args.allow_large
        log_cfg = cfg.get("logging", {})
        reset_logging()
        init_logging(os.environ.get("KOLMOGOROV_LOG_DIR", log_cfg.get("dir")),
                     log_cfg.get("level", "INFO"), log_cfg.get("console", True))
        run = build_run_config(cfg)
        archive = RunArchive(run.out_dir, args.command, run, timing=run.timing)
        log_info(f"{args.command}: case={run.case} method={run.method} "
                 f"degrees={list(run.degrees)} levels={list(run.levels)} k_rule={run.k_rule}")
        _run_command(args.command, run, archive)
    except ConfigError as e:
        log_error(f"Configuration error: {e}")
        if archive is not None:
            archive.finish("config_error", str(e))
        return EXIT_CONFIG
    except SolverError as e:
        log_error(f"Solver failure: {e}")
        if archive is not None:
            archive.finish("solver_error", str(e))
        return EXIT_SOLVER
    archive.finish()
    return EXIT_OK
