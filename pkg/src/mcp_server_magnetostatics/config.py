"""
Study configuration: INI-style text validated into pydantic models.

Sections
--------
[study]            h_levels, orders, output_dir (required); name, methods, s_max,
                   threads, large_cells
[geometry]         width, height, base_divisions, background_region
[region.<name>]    id, material, current_density, rectangles = x0 y0 x1 y1; ...
[material.<name>]  kind = linear | magnet | spline; nu, br_x, br_y, bh_csv, nu_sat
[method.<name>]    rho, sigma, epsilon, max_outer_iterations, max_backtracks,
                   linear_tol, linear_max_iterations, nu_bar

Sections that are left out fall back to the bundled stand-in benchmark.
"""

import configparser
import logging
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .descent import SolverConfig
from .errors import ConfigurationError
from .material import (DEFAULT_S_MAX, NU0, IsotropicSplineLaw, LinearLaw, MaterialLaw,
                       PermanentMagnetLaw, spline_law_from_csv)
from .mesh import COIL_NEGATIVE, COIL_POSITIVE, IRON, AIR, GeometrySpec, RectRegion, benchmark_geometry, validate_geometry

logger = logging.getLogger('mcp_magnetostatics_server.config')

DESK_CURRENT_DENSITY = 6.25e5
# fewest fixed-point iterations on the bundled curve: `magnetostatics-bench tune`
# on the coarsest desk cell (h_level 1, p = 1) over the default grid, about 1415
DESK_NU_BAR = NU0 * 10.0 ** -2.75
METHOD_ORDER = ("newton", "kacanov", "fixedpoint")
REQUIRED_STUDY_KEYS = ("h_levels", "orders", "output_dir")
LARGE_H_LEVELS = (4, 5)


class MaterialSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["linear", "magnet", "spline"]
    nu: Optional[float] = Field(default=None, gt=0)
    br_x: float = 0.0
    br_y: float = 0.0
    bh_csv: Optional[str] = None
    nu_sat: float = Field(default=NU0, ge=0)

    def build_law(self, s_max: float = DEFAULT_S_MAX) -> MaterialLaw:
        if self.kind == "linear":
            return LinearLaw(self.nu if self.nu is not None else NU0)
        if self.kind == "magnet":
            return PermanentMagnetLaw(self.nu if self.nu is not None else NU0, (self.br_x, self.br_y))
        return spline_law_from_csv(self.bh_csv, nu_sat_min=self.nu_sat, s_max=s_max)


class RegionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    id: int = Field(ge=0)
    material: str
    current_density: float = 0.0
    rectangles: list[tuple[float, float, float, float]] = Field(default_factory=list)


class StudyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str = "desk"
    h_levels: list[int] = Field(min_length=1)
    orders: list[int] = Field(min_length=1)
    output_dir: Path
    methods: list[str] = Field(default_factory=lambda: list(METHOD_ORDER), min_length=1)
    s_max: float = Field(default=DEFAULT_S_MAX, gt=0)
    threads: int = Field(default=1, ge=1)
    large_cells: bool = False
    width: float = Field(default=1.0, gt=0)
    height: float = Field(default=1.0, gt=0)
    base_divisions: int = Field(default=8, ge=1)
    background_region: int = Field(default=AIR, ge=0)
    regions: list[RegionSpec]
    materials: dict[str, MaterialSpec]
    solvers: dict[str, SolverConfig]

    @field_validator("h_levels")
    @classmethod
    def _check_h_levels(cls, v):
        if any(k < 0 for k in v):
            raise ValueError("h_levels must be non-negative")
        return v

    @field_validator("orders")
    @classmethod
    def _check_orders(cls, v):
        if any(p not in (1, 2) for p in v):
            raise ValueError("orders must be 1 or 2")
        return v

    @field_validator("methods")
    @classmethod
    def _check_methods(cls, v):
        bad = [m for m in v if m not in METHOD_ORDER]
        if bad:
            raise ValueError(f"unknown methods {bad}; choose from {list(METHOD_ORDER)}")
        return v

    @property
    def sweep_h_levels(self) -> list[int]:
        levels = list(self.h_levels)
        if self.large_cells:
            levels += [k for k in LARGE_H_LEVELS if k not in levels]
        return levels

    @property
    def geometry(self) -> GeometrySpec:
        rects = [RectRegion(name=f"{r.name}_{i}", region_id=r.id, x0=x0, y0=y0, x1=x1, y1=y1)
                 for r in self.regions for i, (x0, y0, x1, y1) in enumerate(r.rectangles)]
        return GeometrySpec(width=self.width, height=self.height, base_divisions=self.base_divisions,
                            background_region=self.background_region, regions=rects)

    def build_laws(self) -> dict[int, MaterialLaw]:
        """One law per region id; spline laws sharing a material are built once"""
        cache: dict[str, MaterialLaw] = {}
        laws = {}
        for region in self.regions:
            if region.material not in cache:
                cache[region.material] = self.materials[region.material].build_law(self.s_max)
            laws[region.id] = cache[region.material]
        return laws

    def current_densities(self) -> dict[int, float]:
        return {r.id: r.current_density for r in self.regions if r.current_density != 0.0}


def default_materials() -> dict[str, MaterialSpec]:
    return {
        "air": MaterialSpec(kind="linear", nu=NU0),
        "copper": MaterialSpec(kind="linear", nu=NU0),
        "iron": MaterialSpec(kind="spline"),
    }


def default_regions() -> list[RegionSpec]:
    geometry = benchmark_geometry()

    def rects(region_id):
        return [(r.x0, r.y0, r.x1, r.y1) for r in geometry.regions if r.region_id == region_id]

    return [
        RegionSpec(name="air", id=AIR, material="air"),
        RegionSpec(name="iron", id=IRON, material="iron", rectangles=rects(IRON)),
        RegionSpec(name="coil_plus", id=COIL_POSITIVE, material="copper",
                   current_density=DESK_CURRENT_DENSITY, rectangles=rects(COIL_POSITIVE)),
        RegionSpec(name="coil_minus", id=COIL_NEGATIVE, material="copper",
                   current_density=-DESK_CURRENT_DENSITY, rectangles=rects(COIL_NEGATIVE)),
    ]


def default_solvers() -> dict[str, SolverConfig]:
    return {
        "newton": SolverConfig(method="newton"),
        "kacanov": SolverConfig(method="kacanov"),
        "fixedpoint": SolverConfig(method="fixedpoint", nu_bar=DESK_NU_BAR),
    }


def default_study_config(output_dir: str | Path = "results", **overrides) -> StudyConfig:
    """The bundled desk study: h_levels 1-3, orders 1 and 2, all three methods"""
    values = dict(h_levels=[1, 2, 3], orders=[1, 2], output_dir=Path(output_dir).resolve(),
                  regions=default_regions(), materials=default_materials(), solvers=default_solvers())
    values.update(overrides)
    return StudyConfig(**values)


def _split_list(text: str) -> list[str]:
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def _parse_rectangles(text: str) -> list[tuple[float, ...]]:
    rects = []
    for chunk in text.split(";"):
        if chunk.strip():
            rects.append(tuple(float(v) for v in chunk.replace(",", " ").split()))
    return rects


def _resolve(path_text: str, base: Path) -> str:
    p = Path(path_text).expanduser()
    return str(p if p.is_absolute() else (base / p).resolve())


def _format_error(err: dict) -> str:
    loc = ".".join(str(part) for part in err.get("loc", ()))
    return f"{loc}: {err.get('msg')}" if loc else str(err.get("msg"))


def config_from_text(text: str, base_dir: Path | str = ".") -> StudyConfig:
    """Parse and validate INI text; every problem found is reported at once"""
    base = Path(base_dir).resolve()
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigurationError(f"malformed config: {e}") from e

    violations: list[str] = []
    study = parser["study"] if parser.has_section("study") else {}
    for key in REQUIRED_STUDY_KEYS:
        if key not in study:
            violations.append(f"missing required key study.{key}")

    data: dict = {}
    try:
        for key, value in study.items():
            if key in ("h_levels", "orders"):
                data[key] = [int(v) for v in _split_list(value)]
            elif key == "methods":
                data[key] = [v.lower() for v in _split_list(value)]
            elif key == "output_dir":
                data[key] = _resolve(value, base)
            else:
                data[key] = value
    except ValueError as e:
        violations.append(f"study: {e}")

    if parser.has_section("geometry"):
        data.update(dict(parser["geometry"]))

    materials = {}
    regions = []
    solvers = default_solvers()
    for section in parser.sections():
        kind, _, name = section.partition(".")
        values = dict(parser[section])
        try:
            if kind == "material":
                if values.get("bh_csv"):
                    values["bh_csv"] = _resolve(values["bh_csv"], base)
                materials[name] = MaterialSpec(**values)
            elif kind == "region":
                if "rectangles" in values:
                    values["rectangles"] = _parse_rectangles(values["rectangles"])
                regions.append(RegionSpec(name=name, **values))
            elif kind == "method":
                solvers[name] = SolverConfig(method=name, **values)
            elif section not in ("study", "geometry"):
                violations.append(f"unknown section [{section}]")
        except ValidationError as e:
            violations += [f"{section}.{_format_error(err)}" for err in e.errors()]
        except ValueError as e:
            violations.append(f"{section}: {e}")

    data["materials"] = materials or default_materials()
    data["regions"] = regions or default_regions()
    data["solvers"] = solvers

    config = None
    try:
        config = StudyConfig(**data)
    except ValidationError as e:
        violations += [_format_error(err) for err in e.errors()
                       if not (err.get("type") == "missing" and err.get("loc", ("",))[0] in REQUIRED_STUDY_KEYS)]

    if config is not None:
        violations += _cross_check(config)
    if violations:
        raise ConfigurationError(violations)
    return config


def _cross_check(config: StudyConfig) -> list[str]:
    violations = []
    ids = [r.id for r in config.regions]
    if len(set(ids)) != len(ids):
        violations.append("region ids must be unique")
    if config.background_region not in ids:
        violations.append(f"background region {config.background_region} has no [region.*] section")
    for r in config.regions:
        if r.material not in config.materials:
            violations.append(f"region {r.name}: unknown material {r.material!r}")
        elif config.materials[r.material].kind == "magnet" and "kacanov" in config.methods:
            violations.append(f"region {r.name}: Kacanov iteration is undefined for permanent magnets")
    for name, m in config.materials.items():
        if m.kind == "spline" and m.bh_csv and not Path(m.bh_csv).is_file():
            violations.append(f"material {name}: B-H file {m.bh_csv} not found")
    for method in config.methods:
        if method not in config.solvers:
            violations.append(f"method {method} has no solver settings")
    try:
        validate_geometry(config.geometry)
    except ConfigurationError as e:
        violations += e.violations
    except ValueError as e:
        violations.append(str(e))
    return violations


def parse_config(path: str | Path) -> StudyConfig:
    """Read and validate a study config file"""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}") from e
    config = config_from_text(text, base_dir=path.parent)
    logger.info(f"Loaded study config {path}: h_levels={config.sweep_h_levels}, orders={config.orders}, "
                f"methods={config.methods}")
    return config


def dump_config(config: StudyConfig) -> str:
    """Serialize back to INI text; config_from_text(dump_config(c)) == c"""
    parser = configparser.ConfigParser(interpolation=None)
    parser["study"] = {
        "name": config.name,
        "h_levels": ", ".join(str(k) for k in config.h_levels),
        "orders": ", ".join(str(p) for p in config.orders),
        "output_dir": str(config.output_dir),
        "methods": ", ".join(config.methods),
        "s_max": repr(config.s_max),
        "threads": str(config.threads),
        "large_cells": str(config.large_cells),
    }
    parser["geometry"] = {
        "width": repr(config.width),
        "height": repr(config.height),
        "base_divisions": str(config.base_divisions),
        "background_region": str(config.background_region),
    }
    for name, m in config.materials.items():
        section = {"kind": m.kind, "br_x": repr(m.br_x), "br_y": repr(m.br_y), "nu_sat": repr(m.nu_sat)}
        if m.nu is not None:
            section["nu"] = repr(m.nu)
        if m.bh_csv is not None:
            section["bh_csv"] = m.bh_csv
        parser[f"material.{name}"] = section
    for r in config.regions:
        section = {"id": str(r.id), "material": r.material, "current_density": repr(r.current_density)}
        if r.rectangles:
            section["rectangles"] = "; ".join(" ".join(repr(v) for v in rect) for rect in r.rectangles)
        parser[f"region.{r.name}"] = section
    for name, s in config.solvers.items():
        section = {key: repr(value) if isinstance(value, float) else str(value)
                   for key, value in s.model_dump(exclude={"method"}).items() if value is not None}
        parser[f"method.{name}"] = section

    lines = []
    for section in parser.sections():
        lines.append(f"[{section}]")
        lines += [f"{key} = {value}" for key, value in parser[section].items()]
        lines.append("")
    return "\n".join(lines)
