"""
Generalized gradient descent for the magnetostatic energy.

Each step solves the linear update problem

    <nu^n curl da^n, curl v> = -<dPhi(a^n), v>   for all v

for a search direction and then picks the step size by Armijo backtracking.
The choice of the generalized reluctivity nu^n gives the fixed-point
(constant nu_bar), Kacanov (chord reluctivity) or damped Newton
(differential reluctivity) iteration.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, NamedTuple, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator
from scipy.sparse import csr_matrix

from .assembly import MagnetostaticProblem, MetricChoice, Newton, metric_from_name
from .errors import ExportError, NumericalError, SolverError, UsageError
from .linsolve import DEFAULT_LINEAR_TOL, LinearSolveReport, cg_solve, energy_norm

logger = logging.getLogger('mcp_magnetostatics_server.descent')

MethodName = Literal["fixedpoint", "kacanov", "newton"]
TerminationReason = Literal["converged", "max_iterations", "zero_direction"]

ZERO_DIRECTION_FACTOR = 1e-14
# residuals within this multiple of the CG tolerance (relative to the residual
# at a = 0) leave no direction the update solve can resolve
RESIDUAL_FLOOR_FACTOR = 10.0
# energy differences below this fraction of |Phi| are recomputed as line integrals
ENERGY_RESOLUTION = 1e-8
TRACE_COLUMNS = ["n", "energy", "tau", "backtracks", "increment_norm", "linear_iterations", "decrease"]


class SolverConfig(BaseModel):
    """Method and Armijo / termination parameters of one descent run"""
    method: MethodName = "newton"
    nu_bar: Optional[float] = Field(default=None, gt=0)
    rho: float = Field(default=0.5, gt=0, lt=1)
    sigma: float = Field(default=0.1, gt=0, lt=0.5)
    epsilon: float = Field(default=1e-7, gt=0)
    max_outer_iterations: int = Field(default=5000, ge=1)
    max_backtracks: int = Field(default=60, ge=0)
    linear_tol: float = Field(default=DEFAULT_LINEAR_TOL, gt=0)
    linear_max_iterations: Optional[int] = Field(default=None, ge=1)
    keep_iterates: bool = False

    @model_validator(mode="after")
    def _check_nu_bar(self):
        if self.method == "fixedpoint" and self.nu_bar is None:
            raise ValueError("method fixedpoint requires nu_bar")
        return self

    @property
    def metric_choice(self) -> MetricChoice:
        return metric_from_name(self.method, self.nu_bar)


@dataclass(frozen=True)
class IterationRecord:
    """One accepted step a^{n+1} = a^n + tau^n da^n"""
    n: int
    energy: float
    directional_derivative: float
    tau: float
    backtracks: int
    increment_norm: float
    linear_iterations: int
    # Phi(a^n) - Phi(a^{n+1}), resolved below the round-off of the energies
    decrease: Optional[float] = None


class ArmijoStep(NamedTuple):
    tau: float
    backtracks: int
    energy: float
    change: float


@dataclass
class DescentState:
    coeffs: np.ndarray
    energy: float
    trace: list[IterationRecord] = field(default_factory=list)
    terminated: Optional[TerminationReason] = None
    reference_norm: float = 0.0
    # energy decrease of the step that triggered termination
    last_decrease: float = 0.0
    iterates: list[np.ndarray] = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    @property
    def final_energy(self) -> float:
        return self.energy

    @property
    def converged(self) -> bool:
        return self.terminated in ("converged", "zero_direction")


def _initial_coeffs(problem: MagnetostaticProblem, a0: Optional[np.ndarray]) -> np.ndarray:
    if a0 is None:
        return np.zeros(problem.num_free)
    a0 = np.asarray(a0, dtype=float)
    if a0.shape != (problem.num_free,):
        raise UsageError(f"initial iterate has shape {a0.shape}, expected ({problem.num_free},)")
    return a0.copy()


def compute_direction(state: DescentState, config: SolverConfig, problem: MagnetostaticProblem,
                      metric: Optional[csr_matrix] = None,
                      rhs: Optional[np.ndarray] = None) -> tuple[np.ndarray, LinearSolveReport]:
    """
    Solve the update problem at the current iterate.

    The metric is assembled per config.method unless a matrix is passed in
    (the fixed-point metric is assembled once and reused).  rhs is the
    negative residual if the caller already has it.
    """
    if metric is None:
        metric = problem.metric(state.coeffs, config.metric_choice)
    if rhs is None:
        rhs = -problem.residual(state.coeffs)
    delta, report = cg_solve(metric, rhs, tol=config.linear_tol, max_it=config.linear_max_iterations)
    if not report.converged:
        raise SolverError(f"update problem did not converge after {report.iterations} CG iterations "
                          f"(relative residual {report.relative_residual:.2e})", report)
    return delta, report


def energy_change(state: DescentState, direction: np.ndarray, tau: float,
                  problem: MagnetostaticProblem) -> tuple[float, float]:
    """
    Phi(a + tau da) and its difference to Phi(a).

    Differences too small to survive subtracting the two energies are taken
    from the line integral of the gradient instead.
    """
    trial = problem.energy(state.coeffs + tau * direction)
    change = trial - state.energy
    if abs(change) <= ENERGY_RESOLUTION * max(abs(trial), abs(state.energy)):
        change = problem.energy_change(state.coeffs, direction, tau)
    return trial, change


def armijo_stepsize(state: DescentState, direction: np.ndarray, config: SolverConfig,
                    problem: MagnetostaticProblem, slope: Optional[float] = None) -> ArmijoStep:
    """
    Largest tau = rho^k with Phi(a + tau da) <= Phi(a) + sigma tau <dPhi(a), da>.

    slope is the directional derivative <dPhi(a), da>; it is recomputed from
    the residual if not given.
    """
    if slope is None:
        slope = float(problem.residual(state.coeffs) @ direction)
    if not slope < 0:
        raise NumericalError(f"direction is not a descent direction (slope {slope:.3e})")
    tau = 1.0
    for k in range(config.max_backtracks + 1):
        trial, change = energy_change(state, direction, tau, problem)
        if change <= config.sigma * tau * slope:
            return ArmijoStep(tau, k, trial, change)
        tau *= config.rho
    raise NumericalError(f"Armijo backtracking failed after {config.max_backtracks} reductions; "
                         f"the material bounds or the gradient are inconsistent")


def reference_newton_norm(problem: MagnetostaticProblem, a0: np.ndarray,
                          config: SolverConfig) -> tuple[float, np.ndarray, csr_matrix, LinearSolveReport]:
    """
    Norm of the first Newton step in the Newton metric at a0.

    This is the termination scale shared by all methods.
    """
    newton_config = config.model_copy(update={"method": "newton"})
    state = DescentState(coeffs=a0, energy=problem.energy(a0))
    metric = problem.metric(a0, Newton())
    delta, report = compute_direction(state, newton_config, problem, metric)
    return energy_norm(metric, delta), delta, metric, report


def run(problem: MagnetostaticProblem, config: SolverConfig, a0: Optional[np.ndarray] = None) -> DescentState:
    """
    Iterate a^{n+1} = a^n + tau^n da^n until |Phi(a^{n+1}) - Phi(a^n)| < epsilon * scale.

    scale is the Newton-metric norm of the first Newton step at a0.  Every
    computed direction is stepped along; the run ends early with
    zero_direction only when the iterate is already optimal, i.e. the
    residual is below what the update solve resolves or the direction
    vanishes relative to scale.
    """
    a = _initial_coeffs(problem, a0)
    state = DescentState(coeffs=a, energy=problem.energy(a))
    if config.keep_iterates:
        state.iterates.append(a.copy())
    choice = config.metric_choice

    scale, newton_delta, newton_metric, newton_report = reference_newton_norm(problem, a, config)
    state.reference_norm = scale
    threshold = config.epsilon * scale
    residual_floor = (RESIDUAL_FLOOR_FACTOR * config.linear_tol
                      * float(np.linalg.norm(problem.residual(np.zeros(problem.num_free)))))
    logger.info(f"Starting {choice.name} descent: {problem.num_free} dofs, "
                f"Phi(a0)={state.energy:.10g}, termination scale={scale:.6g}")

    fixed_metric: Optional[csr_matrix] = None
    for n in range(config.max_outer_iterations):
        rhs = -problem.residual(state.coeffs)
        if np.linalg.norm(rhs) <= residual_floor:
            state.last_decrease = 0.0
            state.terminated = "zero_direction"
            break
        if n == 0 and choice.name == "newton":
            metric, delta, report = newton_metric, newton_delta, newton_report
        else:
            if choice.name == "fixedpoint":
                if fixed_metric is None:
                    fixed_metric = problem.metric(state.coeffs, choice)
                metric = fixed_metric
            else:
                metric = problem.metric(state.coeffs, choice)
            delta, report = compute_direction(state, config, problem, metric, rhs=rhs)

        increment = energy_norm(metric, delta)
        if increment <= ZERO_DIRECTION_FACTOR * scale:
            state.last_decrease = increment * increment
            state.terminated = "zero_direction"
            break
        # equal to <dPhi(a^n), da^n> by the update equation
        slope = -increment * increment

        step = armijo_stepsize(state, delta, config, problem, slope=slope)
        record = IterationRecord(n=n, energy=state.energy, directional_derivative=slope, tau=step.tau,
                                 backtracks=step.backtracks, increment_norm=increment,
                                 linear_iterations=report.iterations, decrease=-step.change)
        state.trace.append(record)
        state.coeffs = state.coeffs + step.tau * delta
        state.energy = step.energy
        if config.keep_iterates:
            state.iterates.append(state.coeffs.copy())
        logger.debug(f"iter {n}: Phi={state.energy:.12g} dPhi={step.change:.4e} tau={step.tau:.4g} "
                     f"k={step.backtracks} |da|={increment:.4e} cg={report.iterations}")
        state.last_decrease = abs(step.change)
        if state.last_decrease < threshold:
            state.terminated = "converged"
            break
    else:
        state.terminated = "max_iterations"

    logger.info(f"{choice.name} descent finished ({state.terminated}) after {state.iterations} "
                f"iterations, Phi={state.energy:.12g}")
    return state


def write_trace_csv(state: DescentState, path: str | Path, header: Optional[dict] = None) -> Path:
    """Trace as CSV; header entries become leading '# key = value' lines"""
    path = Path(path)
    meta = {"final_energy": repr(state.final_energy), "terminated": state.terminated,
            "reference_norm": repr(state.reference_norm), "last_decrease": repr(state.last_decrease)}
    meta.update(header or {})
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as f:
            for key, value in meta.items():
                for line in str(value).splitlines() or [""]:
                    f.write(f"# {key} = {line}\n")
            writer = csv.writer(f)
            writer.writerow(TRACE_COLUMNS)
            for r in state.trace:
                writer.writerow([r.n, repr(r.energy), repr(r.tau), r.backtracks,
                                 repr(r.increment_norm), r.linear_iterations,
                                 "" if r.decrease is None else repr(r.decrease)])
    except OSError as e:
        raise ExportError(f"Could not write trace {path}: {e}") from e
    return path


def read_trace_csv(path: str | Path) -> tuple[list[IterationRecord], dict[str, str]]:
    """Inverse of write_trace_csv; multi-line header values are joined with newlines"""
    meta: dict[str, str] = {}
    records = []
    try:
        with open(path, newline="") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise ExportError(f"Could not read trace {path}: {e}") from e
    body = []
    for line in lines:
        if line.startswith("# ") and " = " in line:
            key, value = line[2:].split(" = ", 1)
            meta[key] = f"{meta[key]}\n{value}" if key in meta else value
        elif line.strip():
            body.append(line)
    for row in csv.DictReader(body):
        increment = float(row["increment_norm"])
        records.append(IterationRecord(
            n=int(row["n"]), energy=float(row["energy"]), directional_derivative=-increment * increment,
            tau=float(row["tau"]), backtracks=int(row["backtracks"]), increment_norm=increment,
            linear_iterations=int(row["linear_iterations"]),
            decrease=float(row["decrease"]) if row.get("decrease") else None))
    return records, meta
