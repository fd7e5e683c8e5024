"""
Command-line front end for the desk-scale study.

Sweeps mesh level h and element order p, runs the selected descent methods
on every cell and writes per-cell trace CSVs, certificate reports, a summary
table (rows = methods, columns = (p, h)) and VTK field snapshots.
"""

import argparse
import csv
import io
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .assembly import FunctionSpace, MagnetostaticProblem, SourceSpec, curl_at_centroids
from .certify import (CertReport, ConvergenceCertificate, build_certificate, certificate_text, check_decay,
                      parse_certificate_text)
from .config import METHOD_ORDER, StudyConfig, default_study_config, parse_config
from .descent import DescentState, read_trace_csv, run, write_trace_csv
from .errors import ConfigurationError, ExportError, MagnetostaticsError
from .material import NU0, MaterialLaw
from .mesh import generate_benchmark_mesh

logger = logging.getLogger('mcp_magnetostatics_server.bench')

SUMMARY_FILE = "summary.csv"
CELLS_FILE = "cells.csv"
FAILED = "failed"


@dataclass
class StudyCell:
    """Outcome of one (method, h, p) run; failures are recorded, not raised"""
    method: str
    h_level: int
    p: int
    dofs: int = 0
    iterations: int = 0
    wall_time: float = 0.0
    terminated: str = "not_run"
    final_energy: Optional[float] = None
    certificate: Optional[str] = None
    cert_satisfied: Optional[bool] = None
    error: Optional[str] = None
    trace_path: Optional[str] = None

    @property
    def cell_id(self) -> str:
        return f"{self.method}-h{self.h_level}-p{self.p}"

    @property
    def converged(self) -> bool:
        return self.error is None and self.terminated in ("converged", "zero_direction")


@dataclass
class StudyResult:
    name: str
    cells: list[StudyCell] = field(default_factory=list)
    summary_path: Optional[Path] = None

    @property
    def converged(self) -> bool:
        return all(c.converged for c in self.cells)

    def cell(self, method: str, h_level: int, p: int) -> StudyCell:
        for c in self.cells:
            if (c.method, c.h_level, c.p) == (method, h_level, p):
                return c
        raise KeyError(f"no cell {method}-h{h_level}-p{p}")


@dataclass
class CellRun:
    problem: MagnetostaticProblem
    state: DescentState
    certificate: ConvergenceCertificate
    report: CertReport


def build_problem(config: StudyConfig, h_level: int, order: int,
                  laws: Optional[Mapping[int, MaterialLaw]] = None) -> MagnetostaticProblem:
    mesh = generate_benchmark_mesh(h_level, config.geometry)
    space = FunctionSpace(mesh, order)
    if laws is None:
        laws = config.build_laws()
    return MagnetostaticProblem(space, laws, SourceSpec(config.current_densities()))


def run_cell(config: StudyConfig, method: str, h_level: int, order: int,
             laws: Optional[Mapping[int, MaterialLaw]] = None) -> CellRun:
    """Solve one cell and check its trace against the certificate; errors propagate"""
    if method not in config.solvers:
        raise ConfigurationError(f"no solver settings for method {method!r}")
    solver = config.solvers[method]
    problem = build_problem(config, h_level, order, laws)
    cert = build_certificate(problem.laws, solver, config.s_max)
    state = run(problem, solver)
    report = check_decay(state.trace, state.final_energy, cert, state.last_decrease)
    logger.debug(f"Metric assemblies for {method}-h{h_level}-p{order}: {dict(problem.metric_assemblies)}")
    return CellRun(problem=problem, state=state, certificate=cert, report=report)


def _certificate_summary(run_: CellRun) -> str:
    status = "ok" if run_.report.satisfied else f"{len(run_.report.violations)} violations"
    return f"q={run_.certificate.q:.12g} tau*={run_.certificate.tau_star:.6g} {status}"


def solve_cell(config: StudyConfig, method: str, h_level: int, order: int, out_dir: Optional[Path] = None,
               laws: Optional[Mapping[int, MaterialLaw]] = None) -> StudyCell:
    """Run one cell, write its trace and certificate report, capture any failure"""
    cell = StudyCell(method=method, h_level=h_level, p=order)
    logger.info(f"Starting cell {cell.cell_id}")
    start = time.perf_counter()
    try:
        result = run_cell(config, method, h_level, order, laws)
    except (MagnetostaticsError, ValueError, ArithmeticError) as e:
        cell.wall_time = time.perf_counter() - start
        cell.terminated = FAILED
        cell.error = f"{type(e).__name__}: {e}"
        logger.warning(f"Cell {cell.cell_id} failed: {cell.error}")
        return cell
    cell.wall_time = time.perf_counter() - start
    cell.dofs = result.problem.num_free
    cell.iterations = result.state.iterations
    cell.terminated = result.state.terminated
    cell.final_energy = result.state.final_energy
    cell.certificate = _certificate_summary(result)
    cell.cert_satisfied = result.report.satisfied

    if out_dir is not None:
        out_dir = Path(out_dir)
        header = {"method": method, "h_level": h_level, "order": order, "dofs": cell.dofs,
                  "certificate": certificate_text(result.certificate)}
        try:
            cell.trace_path = str(write_trace_csv(result.state, out_dir / f"{cell.cell_id}.trace.csv", header))
            (out_dir / f"{cell.cell_id}.cert.txt").write_text(result.report.to_text() + "\n")
        except (ExportError, OSError) as e:
            cell.error = f"ExportError: {e}"
            logger.warning(f"Cell {cell.cell_id}: could not write outputs: {e}")

    logger.info(f"Finished cell {cell.cell_id}: {cell.terminated} after {cell.iterations} iterations, "
                f"{cell.dofs} dofs, {cell.wall_time:.2f}s, certificate {cell.certificate}")
    return cell


def study_cells(config: StudyConfig, methods: Optional[Sequence[str]] = None,
                h_levels: Optional[Sequence[int]] = None,
                orders: Optional[Sequence[int]] = None) -> list[tuple[str, int, int]]:
    methods = [m for m in METHOD_ORDER if m in (methods or config.methods)]
    h_levels = sorted(h_levels or config.sweep_h_levels)
    orders = sorted(orders or config.orders)
    return [(m, h, p) for m in methods for p in orders for h in h_levels]


def run_study(config: StudyConfig, out_dir: Optional[Path] = None, threads: Optional[int] = None,
              db=None, methods: Optional[Sequence[str]] = None, h_levels: Optional[Sequence[int]] = None,
              orders: Optional[Sequence[int]] = None) -> StudyResult:
    """
    Run every (method, h, p) cell of the sweep.

    Cells are independent and run on a thread pool when threads > 1; the
    summary is written once all of them are done.
    """
    out_dir = Path(out_dir or config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = threads or config.threads
    plan = study_cells(config, methods, h_levels, orders)
    logger.info(f"Running study {config.name}: {len(plan)} cells on {threads} thread(s), output {out_dir}")

    try:
        laws = config.build_laws()
    except MagnetostaticsError as e:
        logger.error(f"Could not build material laws: {e}")
        cells = [StudyCell(method=m, h_level=h, p=p, terminated=FAILED, error=f"{type(e).__name__}: {e}")
                 for m, h, p in plan]
    else:
        def task(cell):
            return solve_cell(config, *cell, out_dir=out_dir, laws=laws)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                cells = list(pool.map(task, plan))
        else:
            cells = [task(c) for c in plan]

    result = StudyResult(name=config.name, cells=cells)
    result.summary_path = write_summary_csv(result, out_dir / SUMMARY_FILE)
    write_cells_csv(result, out_dir / CELLS_FILE)
    if db is not None:
        for cell in cells:
            db.record_cell(cell, config.name)

    failed = [c.cell_id for c in cells if not c.converged]
    if failed:
        logger.warning(f"Study {config.name}: {len(failed)} cells did not converge: {', '.join(failed)}")
    else:
        logger.info(f"Study {config.name}: all {len(cells)} cells converged")
    return result


def _count_entry(cell: Optional[StudyCell]) -> str:
    if cell is None:
        return ""
    if cell.error is not None or cell.terminated == FAILED:
        return "-"
    if cell.terminated == "max_iterations":
        return f">{cell.iterations}"
    return str(cell.iterations)


def summary_table(result: StudyResult) -> str:
    """Iteration counts with rows = methods and columns = (p, h); no timing"""
    columns = sorted({(c.p, c.h_level) for c in result.cells})
    methods = [m for m in METHOD_ORDER if any(c.method == m for c in result.cells)]
    index = {(c.method, c.p, c.h_level): c for c in result.cells}

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["method"] + [f"p={p} h={h}" for p, h in columns] + ["certificate"])
    dofs = []
    for p, h in columns:
        counts = [c.dofs for c in result.cells if (c.p, c.h_level) == (p, h) and c.dofs]
        dofs.append(str(counts[0]) if counts else "")
    writer.writerow(["dofs"] + dofs + [""])
    for method in methods:
        row_cells = [index.get((method, p, h)) for p, h in columns]
        certified = [c for c in row_cells if c is not None and c.cert_satisfied is not None]
        cert = ""
        if certified:
            q_part = certified[0].certificate.split(" ")[0]
            passed = sum(1 for c in certified if c.cert_satisfied)
            cert = f"{q_part} checks {passed}/{len(certified)}"
        writer.writerow([method] + [_count_entry(c) for c in row_cells] + [cert])
    return buffer.getvalue()


def write_summary_csv(result: StudyResult, path: Path) -> Path:
    path = Path(path)
    try:
        path.write_text(summary_table(result))
    except OSError as e:
        raise ExportError(f"Could not write summary {path}: {e}") from e
    logger.info(f"Wrote summary table {path}")
    return path


def write_cells_csv(result: StudyResult, path: Path) -> Path:
    """Per-cell details including wall time"""
    path = Path(path)
    fields = ["cell_id"] + list(StudyCell.__dataclass_fields__)
    try:
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            for cell in result.cells:
                writer.writerow({"cell_id": cell.cell_id, **asdict(cell)})
    except OSError as e:
        raise ExportError(f"Could not write cell table {path}: {e}") from e
    return path


def flux_magnitude(space: FunctionSpace, coeffs: np.ndarray) -> np.ndarray:
    """|curl a| at the triangle centroids"""
    return np.linalg.norm(curl_at_centroids(space, coeffs), axis=1)


def export_field(space: FunctionSpace, coeffs: np.ndarray, path: str | Path) -> Path:
    """
    Legacy-VTK unstructured grid: per-node a (vertex dofs), per-triangle |curl a|
    at the centroid and the region label.
    """
    path = Path(path)
    mesh = space.mesh
    values = space.lift(coeffs)[:mesh.num_nodes]
    flux = flux_magnitude(space, coeffs)
    T = mesh.num_triangles
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            f.write("# vtk DataFile Version 3.0\n")
            f.write(f"magnetostatic field h_level={mesh.h_level} p={space.order}\n")
            f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
            f.write(f"POINTS {mesh.num_nodes} double\n")
            for x, y in mesh.nodes:
                f.write(f"{x:.17g} {y:.17g} 0\n")
            f.write(f"CELLS {T} {4 * T}\n")
            for a, b, c in mesh.triangles:
                f.write(f"3 {a} {b} {c}\n")
            f.write(f"CELL_TYPES {T}\n")
            f.write("5\n" * T)
            f.write(f"POINT_DATA {mesh.num_nodes}\nSCALARS a double 1\nLOOKUP_TABLE default\n")
            for v in values:
                f.write(f"{v:.17g}\n")
            f.write(f"CELL_DATA {T}\nSCALARS flux_magnitude double 1\nLOOKUP_TABLE default\n")
            for v in flux:
                f.write(f"{v:.17g}\n")
            f.write("SCALARS region int 1\nLOOKUP_TABLE default\n")
            for r in mesh.region:
                f.write(f"{r}\n")
    except OSError as e:
        raise ExportError(f"Could not write field file {path}: {e}") from e
    logger.info(f"Wrote field snapshot {path} (max |b| = {flux.max() if T else 0.0:.6g} T)")
    return path


def tune_fixed_point(config: StudyConfig, nu_grid: Optional[Sequence[float]] = None,
                     h_level: Optional[int] = None, order: Optional[int] = None,
                     threads: Optional[int] = None) -> tuple[float, dict[float, int]]:
    """
    Scan nu_bar over a geometric grid on the coarsest cell.

    Returns the nu_bar with the fewest outer iterations and the count per grid
    value; runs that fail or hit the iteration cap are ranked last.  A run
    that stops on a zero direction has reached the minimizer and counts as
    converged.  Grid values run on a thread pool when threads > 1.
    """
    if nu_grid is None:
        nu_grid = np.geomspace(NU0 / 1000.0, NU0, 13)
    h_level = min(config.sweep_h_levels) if h_level is None else h_level
    order = min(config.orders) if order is None else order
    threads = threads or config.threads
    base = config.solvers.get("fixedpoint") or default_study_config().solvers["fixedpoint"]
    laws = config.build_laws()

    def attempt(nu_bar: float) -> Optional[DescentState]:
        solver = base.model_copy(update={"nu_bar": nu_bar})
        try:
            state = run(build_problem(config, h_level, order, laws), solver)
        except MagnetostaticsError as e:
            logger.warning(f"nu_bar={nu_bar:.6g} failed: {e}")
            return None
        logger.info(f"nu_bar={nu_bar:.6g}: {state.iterations} iterations ({state.terminated})")
        return state

    grid = [float(v) for v in nu_grid]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            states = list(pool.map(attempt, grid))
    else:
        states = [attempt(v) for v in grid]

    counts: dict[float, int] = {}
    ranked = []
    for nu_bar, state in zip(grid, states):
        if state is None:
            ranked.append((float("inf"), nu_bar))
            continue
        counts[nu_bar] = state.iterations
        ranked.append((state.iterations if state.converged else float("inf"), nu_bar))
    best_score, best = min(ranked)
    if best_score == float("inf"):
        raise MagnetostaticsError("no nu_bar on the grid converged")
    return best, counts


def certify_trace(path: str | Path, config: Optional[StudyConfig] = None,
                  method: Optional[str] = None) -> CertReport:
    """
    Re-check a written trace.

    The certificate comes from the trace header unless a config is given, in
    which case it is recomputed from the config's materials and solver settings.
    """
    records, meta = read_trace_csv(path)
    if config is not None:
        method = method or meta.get("method")
        if method not in config.solvers:
            raise ConfigurationError(f"cannot certify: no solver settings for method {method!r}")
        cert = build_certificate(config.build_laws(), config.solvers[method], config.s_max)
    elif "certificate" in meta:
        cert = parse_certificate_text(meta["certificate"])
    else:
        raise ConfigurationError(f"trace {path} carries no certificate; pass --config")
    final_energy = float(meta["final_energy"])
    last_decrease = float(meta["last_decrease"]) if "last_decrease" in meta else None
    return check_decay(records, final_energy, cert, last_decrease)


def configure_logging(level: str) -> None:
    numeric_level = getattr(logging, level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f"Invalid log level: {level}")
    logging.basicConfig(
        level=numeric_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stderr)],
    )


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magnetostatics-bench",
                                     description="Nonlinear magnetostatics descent study")
    parser.add_argument("--log-level", type=str, default="INFO",
                        help="Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, cell=False):
        p.add_argument("--config", type=str, default=None, help="Study config file (default: bundled desk study)")
        p.add_argument("--out", type=str, default=None, help="Output directory (default: config output_dir)")
        p.add_argument("--results-db", type=str, default=None, help="Also record cells in this SQLite file")
        p.add_argument("--threads", type=_positive_int, default=None,
                       help="Worker threads (default: config threads); a single cell solve runs on one")
        if cell:
            p.add_argument("--method", choices=list(METHOD_ORDER), default="newton")
            p.add_argument("--h-level", type=int, default=1)
            p.add_argument("--order", type=int, choices=[1, 2], default=1)

    common(sub.add_parser("solve", help="Run a single cell"), cell=True)
    study = sub.add_parser("study", help="Run the (method, h, p) sweep")
    common(study)
    study.add_argument("--method", action="append", choices=list(METHOD_ORDER), default=None)
    certify = sub.add_parser("certify", help="Recompute the certificate check of a trace CSV")
    certify.add_argument("trace", type=str)
    certify.add_argument("--config", type=str, default=None)
    certify.add_argument("--method", choices=list(METHOD_ORDER), default=None)
    common(sub.add_parser("export", help="Solve a cell and write its VTK field file"), cell=True)
    tune = sub.add_parser("tune", help="Scan nu_bar for the fixed-point iteration")
    tune.add_argument("--config", type=str, default=None)
    tune.add_argument("--h-level", type=int, default=None)
    tune.add_argument("--order", type=int, choices=[1, 2], default=None)
    tune.add_argument("--threads", type=_positive_int, default=None, help="Scan grid values in parallel")
    return parser


def _load_config(args) -> StudyConfig:
    config = parse_config(args.config) if args.config else default_study_config()
    if getattr(args, "out", None):
        config = config.model_copy(update={"output_dir": Path(args.out).resolve()})
    return config


def _open_db(args):
    if not getattr(args, "results_db", None):
        return None
    from .database import SqliteDatabase
    return SqliteDatabase(args.results_db)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """CLI entry point; returns 0 only if every requested cell converged"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        if args.command == "certify":
            config = parse_config(args.config) if args.config else None
            report = certify_trace(args.trace, config, args.method)
            print(report.to_text())
            return 0 if report.satisfied else 1

        config = _load_config(args)
        if args.command == "tune":
            best, counts = tune_fixed_point(config, h_level=args.h_level, order=args.order, threads=args.threads)
            for nu_bar, n in counts.items():
                print(f"nu_bar = {nu_bar!r}: {n} iterations")
            print(f"best nu_bar = {best!r}")
            return 0

        db = _open_db(args)
        if args.command == "study":
            result = run_study(config, threads=args.threads, db=db, methods=args.method)
            print(summary_table(result), end="")
            return 0 if result.converged else 1

        out_dir = Path(config.output_dir)
        if args.command == "solve":
            cell = solve_cell(config, args.method, args.h_level, args.order, out_dir=out_dir)
            if db is not None:
                db.record_cell(cell, config.name)
            print(f"{cell.cell_id}: {cell.terminated} after {cell.iterations} iterations, "
                  f"Phi = {cell.final_energy!r}, {cell.certificate or cell.error}")
            return 0 if cell.converged else 1

        if args.command == "export":
            result = run_cell(config, args.method, args.h_level, args.order)
            path = export_field(result.problem.space, result.state.coeffs,
                                out_dir / f"{args.method}-h{args.h_level}-p{args.order}.vtk")
            print(str(path))
            return 0 if result.state.converged else 1
    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except MagnetostaticsError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
