# src/experiments.py
"""
Experiment drivers behind the CLI subcommands: convergence sweeps, decay
runs, single solves and the stabilisation ledger dump. Every driver writes
into a RunArchive directory and flushes its CSV rows as levels finish.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from output import (ConvergencePlot, CsvReport, DECAY_HEADER, DecayPlot, LEDGER_HEADER,
                    RUN_HEADER)
from src.archive import RunArchive, rss_mib
from src.cases import CaseDefinition, boundary, get_case, initial_field
from src.config import ConfigError, RunConfig
from src.fespace import FESpace, Projector
from src.forms import RhsFunctional, assemble_spatial
from src.logger import log_info, log_success, log_warning
from src.mesh import build_structured_square
from src.norms import NormReport, NormTrajectory, SpaceTimeErrorAccumulator, eoc
from src.stab import (UNIT_SQUARE_POINCARE, StabParams, build_stab, decay_envelope,
                      ledger_rows, poincare_upper_bound, semi_discrete_envelope, spectral_gap)
from src.timeloop import SpaceTimeSolution, TimePartition, export_snapshot, march

LARGE_LEVEL_ELEMENTS = 8192
MONOTONE_TOL = 1e-12
POINCARE_DEGREE = 2


@dataclass
class LevelResult:
    p: int
    q: int
    n: int
    space: FESpace
    stab: StabParams
    partition: TimePartition
    solution: SpaceTimeSolution
    report: NormReport
    trajectory: NormTrajectory
    wall_s: float
    record: Dict[str, object] = field(default_factory=dict)


def level_skipped(run: RunConfig, p: int, n: int) -> bool:
    """p in {3, 4} with k = h^2 on the finest meshes is left out unless allowed."""
    if run.allow_large or run.k_rule != "h2" or p not in (3, 4):
        return False
    return 2 * n * n >= LARGE_LEVEL_ELEMENTS


def make_partition(run: RunConfig, case: CaseDefinition, h_max: float) -> TimePartition:
    t_final = run.t_final if run.t_final is not None else case.t_final
    if run.k_rule == "single":
        return TimePartition.single(t_final)
    if run.k_rule == "fixed":
        return TimePartition.uniform(t_final, run.k)
    if run.k_rule == "h":
        return TimePartition.uniform(t_final, h_max)
    if run.k_rule == "h2":
        return TimePartition.uniform(t_final, h_max ** 2)
    raise ConfigError(f"unknown k_rule '{run.k_rule}'")


def inflow_data(space: FESpace, case: CaseDefinition):
    nodes = space.node_coords[space.constrained_dofs]

    def inflow(t):
        return boundary(case, t, nodes[:, 0], nodes[:, 1])

    return inflow


def run_level(run: RunConfig, p: int, q: int, n: int,
              case: Optional[CaseDefinition] = None) -> LevelResult:
    """Assemble and march one (p, q, mesh) configuration and measure its error."""
    case = case or get_case(run.case)
    start = time.perf_counter()
    mesh = build_structured_square(n)
    space = FESpace(mesh, p)
    stab = build_stab(space, run.inverse_constants, run.abc_scale)
    stab.check_spd()
    ops = assemble_spatial(space, stab, run.method)
    partition = make_partition(run, case, mesh.h_max)
    log_info(f"[{run.method}] p={p} q={q} n={n}: {mesh.n_elements} elements, "
             f"{space.n_dofs} dofs, {partition.n_slabs} slab(s)")

    inflow = inflow_data(space, case)
    A0 = stab.A if run.method == "hypo" else None
    initial = Projector(space, A0, constrained=True)(initial_field(case), inflow(0.0))

    accumulator = SpaceTimeErrorAccumulator(space, stab, case if case.manufactured else None)
    trajectory = NormTrajectory(space.a_matrix(stab.A), 0.0, initial)
    solution = march(ops, partition, q, initial,
                     rhs=RhsFunctional(space, ops.stab, case),
                     inflow=inflow,
                     solver=run.solver,
                     observers=(accumulator, trajectory),
                     keep_blocks=False)
    wall = time.perf_counter() - start
    k_max = float(partition.steps.max())
    report = accumulator.report(solution.total_dofs, mesh.h_max, k_max)
    log_success(f"[{run.method}] p={p} q={q} n={n}: err_st={report.err_st:.4e} "
                f"err_A_final={report.err_A_final:.4e} iters={solution.iterations} "
                f"({wall:.2f}s, rss {rss_mib():.0f} MiB)")
    record = {
        "case": case.name,
        "method": run.method,
        "p": p,
        "q": q,
        "elements": mesh.n_elements,
        "dofs": solution.total_dofs,
        "h_max": float(mesh.h_max),
        "k": k_max,
        "err_st": report.err_st,
        "err_A_final": report.err_A_final,
        "eoc_st": None,
        "wall_s": wall if run.timing else None,
        "iters": solution.iterations,
    }
    return LevelResult(p, q, n, space, stab, partition, solution, report, trajectory, wall, record)


def _levels_for(run: RunConfig, p: int) -> List[int]:
    levels = []
    for n in run.levels:
        if level_skipped(run, p, n):
            log_warning(f"skipping p={p} n={n} ({2 * n * n} elements) with k=h^2; "
                        f"set run.allow_large to include it")
            continue
        levels.append(n)
    return levels


def _sweep(run: RunConfig, p: int, q: int, case: CaseDefinition, archive: RunArchive):
    """Yield finished levels in level order, optionally computed on a thread pool."""
    levels = _levels_for(run, p)
    if run.threads > 1 and len(levels) > 1:
        with ThreadPoolExecutor(max_workers=run.threads) as pool:
            futures = []
            for n in levels:
                archive.record("level_started", p=p, q=q, n=n)
                futures.append(pool.submit(run_level, run, p, q, n, case))
            for n, future in zip(levels, futures):
                result = future.result()
                archive.record("level_finished", p=p, q=q, n=n, err_st=result.report.err_st)
                yield result
        return
    for n in levels:
        archive.record("level_started", p=p, q=q, n=n)
        result = run_level(run, p, q, n, case)
        archive.record("level_finished", p=p, q=q, n=n, err_st=result.report.err_st)
        yield result


def run_convergence(run: RunConfig, archive: RunArchive) -> List[dict]:
    """
    Error table over all (p, q) pairs and mesh levels. The EOC of a row is
    measured against the previous level of the same pair.
    """
    case = get_case(run.case)
    if not case.manufactured:
        raise ConfigError(f"convergence needs a case with exact solution, '{case.name}' has none")
    report = CsvReport(archive.file("convergence.csv"), RUN_HEADER)
    records: List[dict] = []
    try:
        for p, q in run.degrees:
            previous = None
            for result in _sweep(run, p, q, case, archive):
                rec = result.record
                if previous is not None:
                    rec["eoc_st"] = eoc([previous["err_st"], rec["err_st"]],
                                        [previous["h_max"], rec["h_max"]])[0]
                    log_info(f"p={p} q={q}: eoc_st={rec['eoc_st']:.3f}")
                report.send(rec)
                records.append(rec)
                previous = rec
    finally:
        report.close()
    if run.plots and records:
        title = f"{case.name}, {run.method}"
        ConvergencePlot(title).send(records, archive.file("convergence_h.svg"), "h_max")
        ConvergencePlot(title).send(records, archive.file("convergence_dofs.svg"), "dofs")
    return records


def poincare_constant(run: RunConfig) -> Tuple[float, str]:
    """
    C_PF and where it came from: the configured value, the analytic
    constant of the unit square, or the safety-scaled discrete estimate on
    the coarsest level.
    """
    if run.poincare == "analytic":
        return UNIT_SQUARE_POINCARE, "analytic"
    if run.poincare is not None:
        return float(run.poincare), "configured"
    space = FESpace(build_structured_square(run.levels[0]), POINCARE_DEGREE)
    return poincare_upper_bound(space), "discrete"


@dataclass
class DecayResult:
    p: int
    q: int
    n: int
    times: np.ndarray
    norms: np.ndarray
    envelope: np.ndarray
    envelope_sharp: np.ndarray
    monotone: bool
    within_envelope: bool
    kappa: float


def check_decay(norms: np.ndarray, tol: float = MONOTONE_TOL) -> List[int]:
    """Breakpoints n at which ||U(t_n)||_A grew by more than `tol` relative."""
    norms = np.asarray(norms, dtype=float)
    grow = norms[1:] > norms[:-1] * (1.0 + tol)
    return [int(i) + 1 for i in np.nonzero(grow)[0]]


def envelope_violations(norms: np.ndarray, envelope: np.ndarray, tol: float = MONOTONE_TOL) -> List[int]:
    """Breakpoints n at which ||U(t_n)||_A lies above the envelope."""
    norms = np.asarray(norms, dtype=float)
    envelope = np.asarray(envelope, dtype=float)
    if norms.shape != envelope.shape:
        raise ValueError(f"{len(norms)} norms against an envelope of {len(envelope)} breakpoints")
    above = norms > envelope * np.sqrt(1.0 + tol)
    return [int(i) for i in np.nonzero(above)[0]]


def run_decay(run: RunConfig, archive: RunArchive) -> List[DecayResult]:
    """
    ||U(t_n^-)||_A at every breakpoint next to the envelope
    ||U(t_0^-)||_A prod_m (1 + mu_m)^(-1/2).
    """
    case = get_case(run.case)
    if case.manufactured:
        raise ConfigError(f"decay needs a case with f = 0 and no exact solution, got '{case.name}'")
    c_pf, c_pf_source = poincare_constant(run)
    archive.record("poincare", C_PF=c_pf, source=c_pf_source)
    table = CsvReport(archive.file("decay.csv"), DECAY_HEADER)
    results: List[DecayResult] = []
    curves = []
    try:
        for p, q in run.degrees:
            for level in _sweep(run, p, q, case, archive):
                mesh = level.space.mesh
                gap = spectral_gap(level.stab, mesh.h_min, p, c_pf)
                times = np.asarray(level.trajectory.times)
                norms = np.asarray(level.trajectory.values)
                envelope = norms[0] * decay_envelope(gap, level.partition.steps, q)
                sharp = norms[0] * decay_envelope(gap, level.partition.steps, q, sharp=True)
                semi = norms[0] * semi_discrete_envelope(gap, times)
                violations = check_decay(norms)
                if violations:
                    log_warning(f"p={p} q={q} n={level.n}: norm increased at breakpoints {violations[:10]}")
                above = envelope_violations(norms, envelope)
                if above:
                    log_warning(f"p={p} q={q} n={level.n}: norm above the decay envelope at breakpoints {above[:10]}")
                log_info(f"p={p} q={q} n={level.n}: kappa={gap.kappa:.3e} ({gap.branch}), "
                         f"||U(t_N)||_A/||U(t_0)||_A={norms[-1] / norms[0]:.6f}, "
                         f"envelope {envelope[-1] / norms[0]:.6f}")
                for i, t in enumerate(times):
                    table.send({
                        "case": case.name, "method": run.method, "p": p, "q": q,
                        "elements": mesh.n_elements, "n": i, "t": float(t),
                        "norm_A": float(norms[i]), "envelope": float(envelope[i]),
                        "envelope_sharp": float(sharp[i]), "semi_discrete": float(semi[i]),
                    })
                results.append(DecayResult(p, q, level.n, times, norms, envelope, sharp,
                                           not violations, not above, gap.kappa))
                curves.append({"label": f"p={p} q={q} {mesh.n_elements} el.", "t": times,
                               "norm": norms, "envelope": envelope, "envelope_sharp": sharp})
    finally:
        table.close()
    if run.plots and curves:
        DecayPlot(f"{case.name}, {run.method}").send(curves, archive.file("decay.svg"))
    return results


def run_solve(run: RunConfig, archive: RunArchive) -> Tuple[LevelResult, str]:
    """Single level: export U(t_N^-) and report its norms."""
    if len(run.levels) != 1 or len(run.degrees) != 1:
        raise ConfigError("solve takes exactly one level and one (p, q) pair")
    (p, q), n = run.degrees[0], run.levels[0]
    archive.record("level_started", p=p, q=q, n=n)
    result = run_level(run, p, q, n)
    archive.record("level_finished", p=p, q=q, n=n, err_st=result.report.err_st)
    path = export_snapshot(result.space, result.solution.final,
                           archive.file(f"solution.{run.field_format}"), run.field_format)
    table = CsvReport(archive.file("solve.csv"), RUN_HEADER)
    table.send(result.record)
    table.close()
    return result, str(path)


def params_dump(run: RunConfig, archive: RunArchive) -> int:
    """
    Write the per-element stabilisation ledger for every p and level, each
    row carrying the C_PF used for the spectral gap and its source.
    """
    c_pf, c_pf_source = poincare_constant(run)
    archive.record("poincare", C_PF=c_pf, source=c_pf_source)
    table = CsvReport(archive.file("params.csv"), LEDGER_HEADER)
    count = 0
    try:
        for p, _ in run.degrees:
            for n in run.levels:
                space = FESpace(build_structured_square(n), p)
                stab = build_stab(space, run.inverse_constants, run.abc_scale)
                for row in ledger_rows(stab):
                    table.send({"p": p, "elements": space.mesh.n_elements, **row,
                                "C_PF": c_pf, "C_PF_source": c_pf_source})
                    count += 1
    finally:
        table.close()
    return count


def format_report(report: NormReport) -> str:
    lines = [
        f"  space-time dofs  : {report.dofs}",
        f"  h_max            : {report.h_max:.6g}",
        f"  k                : {report.k:.6g}",
        f"  |||e|||_st       : {report.err_st:.6e}",
        f"  ||e(t_f)||_A     : {report.err_A_final:.6e}",
    ]
    for name, value in report.components.items():
        lines.append(f"    {name:<16}: {value:.6e}")
    return "\n".join(lines)
