import numpy as np
import pytest

from mcp_server_magnetostatics.errors import CertificationError, DataError, UnsupportedMethodError
from mcp_server_magnetostatics.material import (NU0, IsotropicSplineLaw, LinearLaw, PermanentMagnetLaw,
                                                build_monotone_spline, bundled_bh_curve, chord_reluctivity,
                                                differential_reluctivity, energy_density, estimate_bounds,
                                                field_intensity, load_bh_csv, problem_bounds,
                                                saturation_curve_data, spline_law_from_csv)


def test_linear_law():
    law = LinearLaw(NU0)
    assert energy_density(law, np.array([1.0, 0.0])) == pytest.approx(NU0 / 2)
    np.testing.assert_allclose(field_intensity(law, np.array([0.5, -1.0])), NU0 * np.array([0.5, -1.0]))
    np.testing.assert_allclose(differential_reluctivity(law, np.zeros(2)), NU0 * np.eye(2))
    assert estimate_bounds(law) == (NU0, NU0)


def test_nonpositive_reluctivity_is_rejected():
    with pytest.raises(DataError):
        LinearLaw(0.0)


def test_permanent_magnet_law():
    law = PermanentMagnetLaw(NU0 / 1.05, (0.0, 1.2))
    np.testing.assert_allclose(field_intensity(law, np.array([0.0, 1.2])), [0.0, 0.0], atol=1e-9)
    assert energy_density(law, np.array([0.0, 1.2])) == 0.0
    assert not law.isotropic
    with pytest.raises(UnsupportedMethodError):
        chord_reluctivity(law, 1.0)


def test_bundled_curve_matches_analytic_samples():
    data = load_bh_csv(bundled_bh_curve())
    assert data.shape == (50, 2)
    np.testing.assert_allclose(data, saturation_curve_data(), rtol=1e-6, atol=1e-3)


def test_spline_interpolates_and_is_strictly_increasing(bundled_law):
    spline = bundled_law.spline
    np.testing.assert_allclose(spline.value(spline.knots), spline.values, rtol=1e-12, atol=1e-9)
    s = np.linspace(0.0, 4.0, 20001)
    assert np.all(spline.derivative(s) > 0)
    assert np.all(np.diff(spline.value(s)) > 0)


def test_spline_integral_is_antiderivative(bundled_law):
    spline = bundled_law.spline
    s = np.array([0.05, 0.7, 1.8, 2.9, 3.5])
    eps = 1e-6
    fd = (spline.integral(s + eps) - spline.integral(s - eps)) / (2 * eps)
    np.testing.assert_allclose(fd, spline.value(s), rtol=1e-6)
    assert spline.integral(0.0) == 0.0


def test_spline_tail_is_linear(bundled_law):
    spline = bundled_law.spline
    assert spline.nu_sat >= NU0
    s = np.array([3.5, 4.0, 10.0])
    np.testing.assert_allclose(spline.value(s), spline.h_last + spline.nu_sat * (s - spline.s_last))
    np.testing.assert_allclose(spline.derivative(s), spline.nu_sat)


def test_chord_at_zero_is_initial_slope(bundled_law):
    assert chord_reluctivity(bundled_law, 0.0) == pytest.approx(bundled_law.spline.derivative(0.0))
    # the limiter zeroes the end slope of this convex start; the first secant replaces it
    data = load_bh_csv(bundled_bh_curve())
    first_secant = data[1, 1] / data[1, 0]
    assert chord_reluctivity(bundled_law, 0.0) == pytest.approx(first_secant)
    assert chord_reluctivity(bundled_law, 1e-6) == pytest.approx(first_secant, rel=1e-3)


def test_differential_reluctivity_matches_field_derivative(bundled_law, rng):
    b = rng.uniform(-2.0, 2.0, size=(20, 2))
    eps = 1e-7
    H = differential_reluctivity(bundled_law, b)
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        fd = (field_intensity(bundled_law, b + e) - field_intensity(bundled_law, b - e)) / (2 * eps)
        np.testing.assert_allclose(H[:, :, k], fd, rtol=1e-5, atol=1e-4 * NU0)
    np.testing.assert_allclose(H, np.swapaxes(H, -1, -2))


def test_field_is_gradient_of_energy(bundled_law, rng):
    b = rng.uniform(-2.5, 2.5, size=(20, 2))
    eps = 1e-7
    h = field_intensity(bundled_law, b)
    for k in range(2):
        e = np.zeros(2)
        e[k] = eps
        fd = (energy_density(bundled_law, b + e) - energy_density(bundled_law, b - e)) / (2 * eps)
        np.testing.assert_allclose(h[:, k], fd, rtol=1e-5, atol=1e-3)


def test_energy_is_convex_and_minimal_at_zero(bundled_law, rng):
    b = rng.uniform(-3.0, 3.0, size=(200, 2))
    assert np.all(energy_density(bundled_law, b) >= 0.0)
    assert float(energy_density(bundled_law, np.zeros(2))) == 0.0


def test_monotonicity_bounds_hold_on_random_pairs(bundled_law, rng):
    gamma, L = estimate_bounds(bundled_law)
    assert 0 < gamma < L
    n = 10_000
    radius = 3.0 * np.sqrt(rng.uniform(size=(2, n)))
    angle = rng.uniform(0, 2 * np.pi, size=(2, n))
    u = np.stack([radius[0] * np.cos(angle[0]), radius[0] * np.sin(angle[0])], axis=-1)
    z = np.stack([radius[1] * np.cos(angle[1]), radius[1] * np.sin(angle[1])], axis=-1)
    d = u - z
    inner = np.sum((field_intensity(bundled_law, u) - field_intensity(bundled_law, z)) * d, axis=-1)
    dist2 = np.sum(d * d, axis=-1)
    assert np.all(inner >= gamma * dist2)
    assert np.all(inner <= L * dist2)


def test_bundled_bounds_bracket_the_curve(bundled_law):
    gamma, L = bundled_law.gamma, bundled_law.L
    # minimum slope of the first spline segment, about 0.77 times the first secant
    assert 900.0 < gamma < 1100.0
    # steepest slope of the analytic curve is about 1.45 nu0
    assert 1.4 * NU0 < L < 1.5 * NU0


def test_problem_bounds_take_extremes(bundled_law):
    gamma, L = problem_bounds({0: LinearLaw(NU0), 1: bundled_law})
    assert gamma == bundled_law.gamma
    assert L == max(bundled_law.L, NU0)


def test_nonmonotone_data_is_rejected():
    with pytest.raises(DataError):
        build_monotone_spline([(0.0, 0.0), (1.0, 100.0), (2.0, 90.0)])
    with pytest.raises(DataError):
        build_monotone_spline([(0.1, 0.0), (1.0, 100.0)])
    with pytest.raises(DataError):
        build_monotone_spline([(0.0, 0.0), (1.0, 100.0), (1.0, 200.0)])
    with pytest.raises(DataError):
        build_monotone_spline([(0.0, 0.0)])


def test_flat_plateau_still_gives_positive_slopes():
    spline = build_monotone_spline([(0.0, 0.0), (1.0, 100.0), (2.0, 100.001), (3.0, 1e6)])
    assert np.all(spline.slopes > 0)
    assert np.all(spline.derivative(np.linspace(0, 3, 3001)) >= 0)


def test_nonpositive_s_max_is_rejected():
    with pytest.raises(CertificationError):
        IsotropicSplineLaw(build_monotone_spline([(0.0, 0.0), (1.0, 1.0)]), s_max=0.0)


def test_load_bh_csv_with_header(tmp_path):
    path = tmp_path / "curve.csv"
    path.write_text("b,h\n0,0\n1,100\n2,1000\n")
    np.testing.assert_allclose(load_bh_csv(path), [[0, 0], [1, 100], [2, 1000]])
    law = spline_law_from_csv(path)
    assert law.gamma > 0


def test_load_bh_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("0,0\n1,abc\n")
    with pytest.raises(DataError):
        load_bh_csv(bad)
    with pytest.raises(DataError):
        load_bh_csv(tmp_path / "missing.csv")
    empty = tmp_path / "empty.csv"
    empty.write_text("b,h\n")
    with pytest.raises(DataError):
        load_bh_csv(empty)


def test_worked_spline_examples():
    concave = IsotropicSplineLaw(build_monotone_spline([(0.0, 0.0), (1.0, 100.0), (2.0, 150.0)]))
    assert chord_reluctivity(concave, 2.0) == pytest.approx(75.0)

    straight = IsotropicSplineLaw(build_monotone_spline([(0.0, 0.0), (1.0, 100.0), (2.0, 200.0)]))
    assert energy_density(straight, np.array([1.5, 0.0])) == pytest.approx(112.5)
    np.testing.assert_allclose(straight.spline.value(np.linspace(0.0, 3.0, 31)), 100.0 * np.linspace(0.0, 3.0, 31))
    gamma, L = estimate_bounds(straight)
    assert gamma == pytest.approx(99.0)
    assert L == pytest.approx(101.0)
