import os
import sys
from pathlib import Path

_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(_ROOT, "src"))

import numpy as np
import pytest

from mcp_server_magnetostatics.assembly import FunctionSpace, MagnetostaticProblem, SourceSpec
from mcp_server_magnetostatics.material import NU0, LinearLaw, spline_law_from_csv
from mcp_server_magnetostatics.mesh import IRON, GeometrySpec, generate_benchmark_mesh

# saturates most of the tiny all-iron square (|b| around 2 T)
TINY_CURRENT_DENSITY = 6e6

LINEAR_STUDY = """
[study]
name = linear
h_levels = 0, 1
orders = 1, 2
methods = newton, kacanov, fixedpoint
output_dir = {out}

[material.air]
kind = linear
nu = {nu}

[material.copper]
kind = linear
nu = {nu}

[material.iron]
kind = linear
nu = {nu}

[method.fixedpoint]
nu_bar = {nu}
"""


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale sweeps that take minutes")


@pytest.fixture(scope="session")
def bundled_law():
    return spline_law_from_csv(nu_sat_min=NU0)


@pytest.fixture
def tiny_problem(bundled_law):
    """All-iron unit square on a 6x6 grid (25 free P1 dofs) with uniform current"""
    def make(order=1, law=None, current=TINY_CURRENT_DENSITY):
        geometry = GeometrySpec(base_divisions=6, background_region=IRON)
        space = FunctionSpace(generate_benchmark_mesh(0, geometry), order)
        return MagnetostaticProblem(space, {IRON: law or bundled_law}, SourceSpec({IRON: current}))
    return make


@pytest.fixture
def desk_problem(bundled_law):
    """Bundled C-core stand-in with the bundled iron curve"""
    def make(h_level=0, order=1, laws=None):
        space = FunctionSpace(generate_benchmark_mesh(h_level), order)
        if laws is None:
            air = LinearLaw(NU0)
            laws = {0: air, 1: bundled_law, 2: air, 3: air}
        return MagnetostaticProblem(space, laws, SourceSpec({2: 6.25e5, 3: -6.25e5}))
    return make


@pytest.fixture
def linear_study_file(tmp_path) -> Path:
    path = tmp_path / "linear.ini"
    path.write_text(LINEAR_STUDY.format(out=tmp_path / "out", nu=repr(NU0)))
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
