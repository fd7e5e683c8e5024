import numpy as np
import pytest

from mcp_server_magnetostatics.assembly import FixedPoint, Kacanov, Newton
from mcp_server_magnetostatics.certify import (build_certificate, certificate_for_method, certificate_text,
                                               check_decay, check_energy_sandwich, contraction_factor,
                                               derive_metric_bounds, make_certificate, parse_certificate_text)
from mcp_server_magnetostatics.config import DESK_NU_BAR
from mcp_server_magnetostatics.descent import IterationRecord, SolverConfig, run
from mcp_server_magnetostatics.errors import CertificationError, UnsupportedMethodError
from mcp_server_magnetostatics.material import NU0, LinearLaw, PermanentMagnetLaw


def _trace(gaps, phi_star=1.0, tau=1.0, increment_scale=2.0):
    """Records with energy phi_star + gap and increments well above the lower bound"""
    return [IterationRecord(n=n, energy=phi_star + g, directional_derivative=-(increment_scale ** 2) * g,
                            tau=tau, backtracks=0, increment_norm=increment_scale * np.sqrt(g),
                            linear_iterations=1)
            for n, g in enumerate(gaps)]


@pytest.fixture
def unit_cert():
    # gamma = L = alpha = beta, rho = 0.5, sigma = 0.25
    return make_certificate("newton", 1.0, 1.0, 1.0, 1.0, 0.5, 0.25)


@pytest.mark.parametrize("args,expected", [
    ((1.0, 1.0, 1.0, 1.0, 0.5, 0.25), (0.5, 0.75, 1.0)),
    ((1.0, 1.0, 1.0, 1.0, 0.5, 0.1), (0.5, 0.9, 1.0)),
    ((1.0, 2.0, 1.0, 2.0, 0.5, 0.25), (0.375, 0.953125, 2.0)),
])
def test_contraction_factor_examples(args, expected):
    assert contraction_factor(*args) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("args", [
    (2.0, 1.0, 1.0, 1.0, 0.5, 0.1),
    (1.0, 1.0, 2.0, 1.0, 0.5, 0.1),
    (1.0, 1.0, 1.0, 1.0, 1.0, 0.1),
    (1.0, 1.0, 1.0, 1.0, 0.5, 0.5),
    (0.0, 1.0, 1.0, 1.0, 0.5, 0.1),
])
def test_invariant_violations_are_rejected(args):
    with pytest.raises(CertificationError):
        contraction_factor(*args)
    with pytest.raises(CertificationError):
        make_certificate("newton", *args)


def test_q_is_monotone_in_the_constants(rng):
    for _ in range(200):
        gamma, alpha = rng.uniform(0.1, 1.0, size=2)
        L = gamma + rng.uniform(0.0, 5.0)
        beta = alpha + rng.uniform(0.0, 5.0)
        rho = rng.uniform(0.1, 0.9)
        sigma = rng.uniform(0.01, 0.49)
        _, q, _ = contraction_factor(gamma, L, alpha, beta, rho, sigma)
        d = rng.uniform(0.0, 0.1)
        assert contraction_factor(gamma, L, min(alpha + d, beta), beta, rho, sigma)[1] <= q
        assert contraction_factor(min(gamma + d, L), L, alpha, beta, rho, sigma)[1] <= q
        assert contraction_factor(gamma, L + d, alpha, beta, rho, sigma)[1] >= q
        assert contraction_factor(gamma, L, alpha, beta + d, rho, sigma)[1] >= q
        assert 0 < q < 1


def test_derive_metric_bounds():
    assert derive_metric_bounds(FixedPoint(7.98e4), None, 1.0, 2.0) == (7.98e4, 7.98e4)
    assert derive_metric_bounds(Newton(), None, 1.0, 2.0) == (1.0, 2.0)
    assert derive_metric_bounds(Kacanov(), {0: LinearLaw(NU0)}, 1.0, 2.0) == (1.0, 2.0)
    with pytest.raises(UnsupportedMethodError):
        derive_metric_bounds(Kacanov(), {0: PermanentMagnetLaw(NU0, (0.0, 1.0))}, 1.0, 2.0)


def test_certificate_for_bundled_material(bundled_law):
    laws = {0: LinearLaw(NU0), 1: bundled_law}
    fp = certificate_for_method("fixedpoint", laws, 0.5, 0.1, nu_bar=7.98e4)
    assert (fp.alpha, fp.beta) == (7.98e4, 7.98e4)
    assert fp.gamma == bundled_law.gamma
    assert fp.C == pytest.approx(fp.L / fp.gamma)
    newton = build_certificate(laws, SolverConfig(method="newton"))
    assert newton.method == "newton"
    assert (newton.alpha, newton.beta) == (newton.gamma, newton.L)
    assert 0 < newton.q < 1
    assert newton.tau_star == pytest.approx(0.5 * 2 * 0.9 * newton.gamma / newton.L)


def test_certificate_text_round_trip(unit_cert):
    assert parse_certificate_text(certificate_text(unit_cert)) == unit_cert
    with_domain = make_certificate("kacanov", 1.0, 2.0, 1.0, 2.0, 0.5, 0.1, C_Omega=3.5)
    assert parse_certificate_text(certificate_text(with_domain)) == with_domain
    with pytest.raises(CertificationError):
        parse_certificate_text("q = 0.5")


def test_geometric_decay_below_q_passes(unit_cert):
    gaps = 0.5 ** np.arange(7)
    trace = _trace(gaps[:-1])
    report = check_decay(trace, 1.0 + gaps[-1], unit_cert, last_decrease=gaps[-1])
    assert report.phi_star == pytest.approx(1.0)
    assert report.satisfied, report.violations
    assert report.checked_steps == 6
    assert report.max_ratio == pytest.approx(0.5)
    assert "satisfied = True" in report.to_text()


def test_decay_slower_than_q_is_flagged(unit_cert):
    gaps = 0.9 ** np.arange(7)
    report = check_decay(_trace(gaps[:-1]), 1.0 + gaps[-1], unit_cert, last_decrease=gaps[-1])
    assert not report.satisfied
    assert any("ratio" in v for v in report.violations)
    assert any("envelope" in v for v in report.violations)


def test_step_below_tau_star_is_flagged(unit_cert):
    gaps = 0.5 ** np.arange(4)
    report = check_decay(_trace(gaps[:-1], tau=0.25), 1.0 + gaps[-1], unit_cert, last_decrease=gaps[-1])
    assert any("tau" in v for v in report.violations)
    assert report.min_tau == 0.25


def test_short_increment_is_flagged(unit_cert):
    gaps = 0.5 ** np.arange(4)
    report = check_decay(_trace(gaps[:-1], increment_scale=1.0), 1.0 + gaps[-1], unit_cert,
                         last_decrease=gaps[-1])
    assert any("increment" in v for v in report.violations)


def test_recorded_decreases_resolve_gaps_below_energy_roundoff(unit_cert):
    decreases = 1e-12 * 0.5 ** np.arange(6)
    # energies of this size cannot represent the decreases
    trace = [IterationRecord(n=n, energy=1e6, directional_derivative=-4.0 * d, tau=1.0, backtracks=0,
                             increment_norm=2.0 * np.sqrt(2.0 * d), linear_iterations=1, decrease=d)
             for n, d in enumerate(decreases)]
    report = check_decay(trace, 1e6, unit_cert)
    assert report.phi_star == 1e6 - decreases[-1]
    assert report.satisfied, report.violations
    assert report.max_ratio == pytest.approx(0.5)


def test_degenerate_traces_are_satisfied(unit_cert):
    empty = check_decay([], 3.0, unit_cert)
    assert empty.satisfied
    assert empty.phi_star == 3.0
    flat = check_decay(_trace([0.0, 0.0]), 1.0, unit_cert, last_decrease=0.0)
    assert flat.satisfied
    assert flat.checked_steps == 0


def test_single_step_linear_run_is_certified(desk_problem):
    laws = {r: LinearLaw(NU0) for r in range(4)}
    config = SolverConfig(method="newton")
    state = run(desk_problem(0, 1, laws=laws), config)
    report = check_decay(state.trace, state.final_energy, build_certificate(laws, config), state.last_decrease)
    assert report.satisfied, report.violations
    assert report.checked_steps == 1
    assert report.max_ratio < 1e-6


@pytest.mark.parametrize("config", [
    SolverConfig(method="newton"),
    SolverConfig(method="kacanov"),
    SolverConfig(method="fixedpoint", nu_bar=DESK_NU_BAR),
], ids=lambda c: c.method)
def test_desk_runs_satisfy_their_certificate(desk_problem, config):
    problem = desk_problem(0, 1)
    state = run(problem, config)
    assert state.converged
    cert = build_certificate(problem.laws, config)
    report = check_decay(state.trace, state.final_energy, cert, state.last_decrease)
    assert report.satisfied, report.violations
    assert report.max_ratio < 1


def test_energy_sandwich_on_stored_iterates(tiny_problem):
    problem = tiny_problem()
    config = SolverConfig(method="newton", epsilon=1e-10, keep_iterates=True)
    state = run(problem, config)
    cert = build_certificate(problem.laws, config)
    assert check_energy_sandwich(problem, state.iterates[:-1], state.coeffs, cert) == []
