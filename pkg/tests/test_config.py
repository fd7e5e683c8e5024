from pathlib import Path

import pytest

from mcp_server_magnetostatics.config import (DESK_CURRENT_DENSITY, DESK_NU_BAR, config_from_text,
                                              default_study_config, dump_config, parse_config)
from mcp_server_magnetostatics.errors import ConfigurationError
from mcp_server_magnetostatics.material import NU0, IsotropicSplineLaw, LinearLaw
from mcp_server_magnetostatics.mesh import COIL_NEGATIVE, COIL_POSITIVE, IRON

MINIMAL = """
[study]
h_levels = 1
orders = 1
output_dir = out
"""


def _violations(text, base_dir="."):
    with pytest.raises(ConfigurationError) as err:
        config_from_text(text, base_dir)
    return err.value.violations


def test_empty_config_lists_every_missing_key():
    assert _violations("") == ["missing required key study.h_levels", "missing required key study.orders",
                               "missing required key study.output_dir"]


def test_minimal_config_falls_back_to_the_desk_study(tmp_path):
    config = config_from_text(MINIMAL, tmp_path)
    assert config.output_dir == (tmp_path / "out").resolve()
    assert config.methods == ["newton", "kacanov", "fixedpoint"]
    assert config.solvers["fixedpoint"].nu_bar == DESK_NU_BAR
    assert config.solvers["newton"].rho == 0.5
    assert config.solvers["newton"].sigma == 0.1
    assert config.solvers["newton"].epsilon == 1e-7
    assert config.current_densities() == {COIL_POSITIVE: DESK_CURRENT_DENSITY,
                                           COIL_NEGATIVE: -DESK_CURRENT_DENSITY}
    laws = config.build_laws()
    assert isinstance(laws[IRON], IsotropicSplineLaw)
    assert laws[COIL_POSITIVE] is laws[COIL_NEGATIVE]
    assert config.geometry.region_ids() == [0, 1, 2, 3]


def test_dump_round_trips(tmp_path):
    config = config_from_text(MINIMAL + "methods = newton, fixedpoint\n\n[method.fixedpoint]\nnu_bar = 1234.5\n",
                              tmp_path)
    assert config_from_text(dump_config(config), tmp_path) == config
    default = default_study_config(tmp_path / "results", threads=2)
    assert config_from_text(dump_config(default), tmp_path) == default


def test_linear_study_file_parses(linear_study_file):
    config = parse_config(linear_study_file)
    assert config.name == "linear"
    assert config.h_levels == [0, 1]
    assert config.orders == [1, 2]
    assert config.solvers["fixedpoint"].nu_bar == NU0
    assert all(isinstance(law, LinearLaw) for law in config.build_laws().values())


def test_sigma_out_of_range_is_rejected():
    violations = _violations(MINIMAL + "\n[method.newton]\nsigma = 0.6\n")
    assert len(violations) == 1
    assert violations[0].startswith("method.newton.sigma")


def test_unknown_material_is_rejected():
    text = MINIMAL + "\n[region.air]\nid = 0\nmaterial = vacuum\n"
    assert _violations(text) == ["region air: unknown material 'vacuum'"]


def test_bad_orders_are_rejected():
    violations = _violations(MINIMAL.replace("orders = 1", "orders = 3"))
    assert len(violations) == 1
    assert "orders must be 1 or 2" in violations[0]


def test_all_violations_are_reported_together():
    text = MINIMAL.replace("orders = 1", "orders = 3") + "\n[method.newton]\nsigma = 0.6\n\n[plotting]\ndpi = 300\n"
    violations = _violations(text)
    assert len(violations) == 3
    assert "unknown section [plotting]" in violations


def test_region_rectangles_are_parsed(tmp_path):
    text = MINIMAL + """
[geometry]
base_divisions = 8
background_region = 0

[region.air]
id = 0
material = air

[region.core]
id = 1
material = air
rectangles = 0.25 0.25 0.75 0.5; 0.25, 0.5, 0.5, 0.75
"""
    config = config_from_text(text, tmp_path)
    rects = config.geometry.regions
    assert [r.name for r in rects] == ["core_0", "core_1"]
    assert (rects[1].x0, rects[1].y0, rects[1].x1, rects[1].y1) == (0.25, 0.5, 0.5, 0.75)
    assert config.current_densities() == {}


def test_cross_checks(tmp_path):
    text = MINIMAL + """
[material.magnet]
kind = magnet
br_y = 1.2

[material.iron]
kind = spline
bh_csv = missing.csv

[region.air]
id = 1
material = magnet

[region.core]
id = 1
material = iron
rectangles = 0.25 0.25 0.75 0.75
"""
    violations = _violations(text, tmp_path)
    assert "region ids must be unique" in violations
    assert "background region 0 has no [region.*] section" in violations
    assert "region air: Kacanov iteration is undefined for permanent magnets" in violations
    assert any("missing.csv" in v and "not found" in v for v in violations)


def test_unreadable_and_malformed_configs(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "absent.ini")
    assert _violations("h_levels = 1\n")[0].startswith("malformed config")


def test_large_cells_extend_the_sweep(tmp_path):
    config = config_from_text(MINIMAL + "large_cells = yes\n", tmp_path)
    assert config.sweep_h_levels == [1, 4, 5]
    assert Path(config.output_dir).is_absolute()
