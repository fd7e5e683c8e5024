import numpy as np
import pytest
from pydantic import ValidationError

from mcp_server_magnetostatics.assembly import FixedPoint, Kacanov, Newton, SourceSpec, assemble_metric, curl_seminorm
from mcp_server_magnetostatics.descent import (DescentState, SolverConfig, armijo_stepsize, compute_direction,
                                               read_trace_csv, reference_newton_norm, run, write_trace_csv)
from mcp_server_magnetostatics.errors import NumericalError, UnsupportedMethodError, UsageError
from mcp_server_magnetostatics.linsolve import energy_norm
from mcp_server_magnetostatics.material import NU0, LinearLaw, PermanentMagnetLaw

ALL_METHODS = [
    SolverConfig(method="newton"),
    SolverConfig(method="kacanov"),
    SolverConfig(method="fixedpoint", nu_bar=NU0),
]


class QuarticProblem:
    """Phi(x) = x^4 in one unknown"""

    def energy(self, x):
        return float(x[0] ** 4)

    def residual(self, x):
        return np.array([4.0 * x[0] ** 3])

    def energy_change(self, x, d, tau):
        return self.energy(x + tau * d) - self.energy(x)


def _newton_oracle(problem, rtol=1e-12):
    space = problem.space
    a = space.zeros()
    r0 = np.linalg.norm(problem.residual(a))
    for _ in range(50):
        r = problem.residual(a)
        if np.linalg.norm(r) <= rtol * r0:
            break
        A = assemble_metric(space, a, Newton(), problem.laws).toarray()
        step = np.linalg.solve(A, -r)
        t = 1.0
        while t > 1e-4 and problem.energy_change(a, step, t) > 0:
            t /= 2
        a = a + t * step
    return a


def test_solver_config_validation():
    assert SolverConfig().method == "newton"
    with pytest.raises(ValidationError):
        SolverConfig(sigma=0.6)
    with pytest.raises(ValidationError):
        SolverConfig(rho=1.0)
    with pytest.raises(ValidationError):
        SolverConfig(method="fixedpoint")
    with pytest.raises(ValidationError):
        SolverConfig(method="gradient")
    assert SolverConfig(method="fixedpoint", nu_bar=2.0).metric_choice == FixedPoint(2.0)


@pytest.mark.parametrize("order", [1, 2])
@pytest.mark.parametrize("config", ALL_METHODS, ids=lambda c: c.method)
def test_linear_materials_converge_in_one_full_step(desk_problem, order, config):
    problem = desk_problem(0, order, laws={r: LinearLaw(NU0) for r in range(4)})
    state = run(problem, config)
    assert state.converged
    assert state.iterations == 1
    assert state.trace[0].tau == 1.0
    assert state.trace[0].backtracks == 0
    assert state.final_energy < 0


def test_newton_energy_decreases_strictly(desk_problem):
    problem = desk_problem(0, 1)
    state = run(problem, SolverConfig(method="newton", keep_iterates=True))
    assert state.converged
    assert all(r.decrease > 0 for r in state.trace)
    energies = np.array([r.energy for r in state.trace] + [state.final_energy])
    assert np.all(np.diff(energies) <= 64 * np.finfo(float).eps * np.abs(energies[1:]))
    assert state.last_decrease in (0.0, state.trace[-1].decrease)
    assert state.last_decrease < 1e-7 * state.reference_norm
    for r in state.trace:
        assert r.tau == 0.5 ** r.backtracks
        assert r.increment_norm > 0
    assert len(state.iterates) == state.iterations + 1
    np.testing.assert_array_equal(state.iterates[-1], state.coeffs)


def test_fixed_point_metric_is_assembled_once(tiny_problem):
    problem = tiny_problem()
    state = run(problem, SolverConfig(method="fixedpoint", nu_bar=NU0, max_outer_iterations=4))
    assert state.iterations >= 2
    assert problem.metric_assemblies["fixedpoint"] == 1
    # only the reference step of the termination scale
    assert problem.metric_assemblies["newton"] == 1


def test_iteration_cap_is_reported(tiny_problem):
    problem = tiny_problem()
    state = run(problem, SolverConfig(method="fixedpoint", nu_bar=NU0 / 100, max_outer_iterations=3))
    assert state.terminated == "max_iterations"
    assert state.iterations == 3
    assert not state.converged


def test_kacanov_rejects_permanent_magnets(tiny_problem):
    problem = tiny_problem(law=PermanentMagnetLaw(NU0, (0.0, 1.0)))
    with pytest.raises(UnsupportedMethodError):
        run(problem, SolverConfig(method="kacanov"))
    assert run(problem, SolverConfig(method="newton")).converged


def test_zero_source_stops_with_zero_direction(tiny_problem):
    problem = tiny_problem(current=0.0)
    for config in ALL_METHODS:
        state = run(problem, config)
        assert state.terminated == "zero_direction"
        assert state.converged
        assert state.iterations == 0
        assert state.final_energy == 0.0


def test_initial_iterate_shape_is_checked(tiny_problem):
    with pytest.raises(UsageError):
        run(tiny_problem(), SolverConfig(), a0=np.zeros(3))


@pytest.mark.parametrize("choice", [FixedPoint(NU0), Kacanov(), Newton()], ids=lambda c: c.name)
def test_directional_derivative_is_minus_squared_increment(tiny_problem, rng, choice):
    problem = tiny_problem()
    a = rng.normal(scale=0.05, size=problem.num_free)
    state = DescentState(coeffs=a, energy=problem.energy(a))
    metric = problem.metric(a, choice)
    delta, report = compute_direction(state, SolverConfig(method=choice.name, nu_bar=NU0, linear_tol=1e-12),
                                       problem, metric)
    assert report.converged
    slope = float(problem.residual(a) @ delta)
    assert slope == pytest.approx(-energy_norm(metric, delta) ** 2, rel=1e-7)


def test_armijo_on_a_quartic():
    problem = QuarticProblem()
    state = DescentState(coeffs=np.array([1.0]), energy=1.0)
    # gradient step in the unit metric: da = -4
    step = armijo_stepsize(state, np.array([-4.0]), SolverConfig(), problem)
    assert (step.tau, step.backtracks) == (0.25, 2)
    assert (step.energy, step.change) == (0.0, -1.0)

    with pytest.raises(NumericalError):
        armijo_stepsize(state, np.array([4.0]), SolverConfig(), problem)
    with pytest.raises(NumericalError):
        armijo_stepsize(state, np.array([-4.0]), SolverConfig(max_backtracks=1), problem)


def test_armijo_accepts_full_step_when_sufficient():
    problem = QuarticProblem()
    state = DescentState(coeffs=np.array([1.0]), energy=1.0)
    step = armijo_stepsize(state, np.array([-0.5]), SolverConfig(), problem, slope=-2.0)
    assert (step.tau, step.backtracks) == (1.0, 0)


@pytest.mark.parametrize("config", [
    SolverConfig(method="newton", epsilon=1e-18, linear_tol=1e-13),
    SolverConfig(method="kacanov", epsilon=1e-18, linear_tol=1e-13),
    SolverConfig(method="fixedpoint", nu_bar=NU0, epsilon=1e-18, linear_tol=1e-13),
], ids=lambda c: c.method)
def test_all_methods_reach_the_dense_newton_solution(tiny_problem, config):
    problem = tiny_problem()
    oracle = _newton_oracle(problem)
    r0 = np.linalg.norm(problem.residual(problem.space.zeros()))
    assert np.linalg.norm(problem.residual(oracle)) <= 1e-12 * r0
    state = run(problem, config)
    assert state.converged
    error = curl_seminorm(problem.space, state.coeffs - oracle)
    assert error <= 1e-8 * curl_seminorm(problem.space, oracle)
    assert state.final_energy >= problem.energy(oracle) - 1e-9 * abs(problem.energy(oracle))


def test_last_computed_direction_is_stepped_along(tiny_problem):
    problem = tiny_problem()
    state = run(problem, SolverConfig(method="newton", epsilon=1e-11, linear_tol=1e-13))
    assert state.terminated == "converged"
    last = state.trace[-1]
    # the terminating energy change is observed after the step, not predicted
    assert last.decrease == state.last_decrease < 1e-11 * state.reference_norm
    assert state.trace[-2].decrease >= 1e-11 * state.reference_norm


@pytest.mark.parametrize("config", ALL_METHODS, ids=lambda c: c.method)
def test_restart_from_the_solution_is_a_zero_direction(tiny_problem, config):
    problem = tiny_problem(law=LinearLaw(NU0))
    solved = run(problem, config)
    assert solved.terminated == "zero_direction"
    assert solved.iterations == 1
    again = run(problem, config, a0=solved.coeffs)
    assert again.terminated == "zero_direction"
    assert again.iterations == 0
    assert again.final_energy == solved.final_energy


def test_newton_needs_fewer_steps_than_kacanov(tiny_problem):
    problem = tiny_problem()
    newton = run(problem, SolverConfig(method="newton"))
    kacanov = run(problem, SolverConfig(method="kacanov"))
    assert newton.converged and kacanov.converged
    assert newton.iterations < kacanov.iterations
    assert kacanov.final_energy == pytest.approx(newton.final_energy, rel=1e-6)


def test_trace_csv_keeps_records_and_header(tiny_problem, tmp_path):
    problem = tiny_problem()
    state = run(problem, SolverConfig(method="newton"))
    path = write_trace_csv(state, tmp_path / "traces" / "newton.csv",
                           header={"method": "newton", "certificate": "q = 0.5\nC = 2"})
    records, meta = read_trace_csv(path)
    assert meta["method"] == "newton"
    assert meta["certificate"] == "q = 0.5\nC = 2"
    assert meta["terminated"] == state.terminated
    assert float(meta["final_energy"]) == state.final_energy
    assert [r.energy for r in records] == [r.energy for r in state.trace]
    assert [r.tau for r in records] == [r.tau for r in state.trace]
    assert [r.increment_norm for r in records] == [r.increment_norm for r in state.trace]
    assert [r.decrease for r in records] == [r.decrease for r in state.trace]


def test_source_sign_flips_the_solution(tiny_problem):
    plus = run(tiny_problem(), SolverConfig())
    minus = run(tiny_problem(current=-6e6), SolverConfig())
    np.testing.assert_allclose(minus.coeffs, -plus.coeffs, rtol=1e-6, atol=1e-9 * np.abs(plus.coeffs).max())
    assert minus.final_energy == pytest.approx(plus.final_energy, rel=1e-10)


def test_source_spec_per_triangle(tiny_problem):
    problem = tiny_problem()
    j = SourceSpec({1: 3.0}).per_triangle(problem.space.mesh)
    assert np.all(j == 3.0)


def test_reference_norm_is_the_first_newton_step(tiny_problem):
    problem = tiny_problem(law=LinearLaw(NU0))
    a0 = problem.space.zeros()
    scale, delta, metric, report = reference_newton_norm(problem, a0, SolverConfig(method="kacanov"))
    assert report.converged
    assert problem.metric_assemblies["newton"] == 1
    r0 = problem.residual(a0)
    assert np.linalg.norm(metric @ delta + r0) <= 1e-9 * np.linalg.norm(r0)
    assert scale == pytest.approx(energy_norm(metric, delta))
    assert run(problem, SolverConfig(method="newton"), a0).reference_norm == pytest.approx(scale)
