"""
Material laws of nonlinear magnetostatics.

Each region carries an energy density w(b) whose gradient is the constitutive
law h = dw/db.  Three families are provided: linear (air, copper), linear with
remanence (permanent magnets) and isotropic nonlinear laws given by a
monotone spline through measured B-H data.

All evaluation functions are vectorized: flux densities are arrays of shape
(..., 2) in T, field intensities (..., 2) in A/m, reluctivity tensors (..., 2, 2).
"""

import csv
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.interpolate import CubicHermiteSpline, PchipInterpolator

from .errors import CertificationError, DataError, UnsupportedMethodError

logger = logging.getLogger('mcp_magnetostatics_server.material')

MU0 = 4e-7 * np.pi
NU0 = 1.0 / MU0

# Flux densities b (T) and field intensities h (A/m), last axis of length 2
Flux2 = np.ndarray
Field2 = np.ndarray

DEFAULT_S_MAX = 3.0
BOUND_SAMPLES = 100_000
BOUND_MARGIN = 0.01

# bundled saturation curve h(s) = (nu0 - dnu * exp(-s^2 / b0^2)) * s
BUNDLED_MU_R = 2000.0
BUNDLED_B0 = 1.8
BUNDLED_KNOTS = 50
BUNDLED_CURVE_FILE = "bh_default.csv"


@dataclass(frozen=True, eq=False)
class MonotoneSpline:
    """
    Strictly increasing piecewise-cubic Hermite interpolant h(s) of B-H data.

    Beyond the last knot the curve continues linearly with slope nu_sat.
    """
    knots: np.ndarray
    values: np.ndarray
    slopes: np.ndarray
    nu_sat: float
    _poly: CubicHermiteSpline = field(init=False, repr=False)
    _dpoly: object = field(init=False, repr=False)
    _ipoly: object = field(init=False, repr=False)

    def __post_init__(self):
        poly = CubicHermiteSpline(self.knots, self.values, self.slopes, extrapolate=False)
        object.__setattr__(self, "_poly", poly)
        object.__setattr__(self, "_dpoly", poly.derivative())
        # exact per-segment integration, zero at s = 0
        object.__setattr__(self, "_ipoly", poly.antiderivative())

    @property
    def s_last(self) -> float:
        return float(self.knots[-1])

    @property
    def h_last(self) -> float:
        return float(self.values[-1])

    def value(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        inner = self._poly(np.clip(s, 0.0, self.s_last))
        tail = self.h_last + self.nu_sat * (s - self.s_last)
        return np.where(s <= self.s_last, inner, tail)

    def derivative(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        inner = self._dpoly(np.clip(s, 0.0, self.s_last))
        return np.where(s <= self.s_last, inner, self.nu_sat)

    def integral(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        inner = self._ipoly(np.clip(s, 0.0, self.s_last))
        w_last = float(self._ipoly(self.s_last))
        ds = s - self.s_last
        tail = w_last + self.h_last * ds + 0.5 * self.nu_sat * ds * ds
        return np.where(s <= self.s_last, inner, tail)


def build_monotone_spline(data: Iterable[Sequence[float]], nu_sat_min: float = 0.0) -> MonotoneSpline:
    """
    Interpolate (s_i, h_i) data by a strictly increasing cubic Hermite spline.

    Knot slopes come from the Fritsch-Butland limiter (PCHIP).  An end slope the
    limiter sets to zero is replaced by the adjacent secant, so the initial
    reluctivity stays positive; all slopes are floored at a small positive value.
    The linear tail uses max(last slope, nu_sat_min).
    """
    arr = np.asarray(list(data), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 2:
        raise DataError("B-H data must be at least two (s, h) pairs")
    s, h = arr[:, 0], arr[:, 1]
    if not np.all(np.isfinite(arr)):
        raise DataError("B-H data contains non-finite values")
    if s[0] != 0.0 or h[0] != 0.0:
        raise DataError(f"B-H data must start at (0, 0), got ({s[0]}, {h[0]})")
    if np.any(s < 0) or np.any(h < 0):
        raise DataError("B-H data must be non-negative")
    if np.any(np.diff(s) <= 0):
        raise DataError("B-H data: |b| values must be strictly increasing")
    if np.any(np.diff(h) <= 0):
        raise DataError("B-H data: |h| values must be strictly increasing")

    secants = np.diff(h) / np.diff(s)
    slopes = PchipInterpolator(s, h).derivative()(s)
    if slopes[0] <= 0:
        slopes[0] = secants[0]
    if slopes[-1] <= 0:
        slopes[-1] = secants[-1]
    slopes = np.maximum(slopes, 1e-8 * secants.min())
    nu_sat = max(float(slopes[-1]), float(nu_sat_min))
    logger.debug(f"Built monotone spline with {s.size} knots, nu_sat={nu_sat:.6g}")
    return MonotoneSpline(knots=s, values=h, slopes=slopes, nu_sat=nu_sat)


class MaterialLaw(ABC):
    """Energy density w(b) of one region together with its certified bounds"""

    isotropic: bool = True

    @abstractmethod
    def energy_density(self, b: Flux2) -> np.ndarray:
        ...

    @abstractmethod
    def field_intensity(self, b: Flux2) -> Field2:
        ...

    @abstractmethod
    def differential_reluctivity(self, b: Flux2) -> np.ndarray:
        ...

    def chord_reluctivity(self, s) -> np.ndarray:
        raise UnsupportedMethodError(
            f"{type(self).__name__} is not isotropic; the chord reluctivity is undefined")

    @property
    @abstractmethod
    def gamma(self) -> float:
        ...

    @property
    @abstractmethod
    def L(self) -> float:
        ...


@dataclass(frozen=True)
class LinearLaw(MaterialLaw):
    """w(b) = nu |b|^2 / 2"""
    nu: float

    def __post_init__(self):
        if not self.nu > 0:
            raise DataError(f"reluctivity must be positive, got {self.nu}")

    def energy_density(self, b):
        b = np.asarray(b, dtype=float)
        return 0.5 * self.nu * np.sum(b * b, axis=-1)

    def field_intensity(self, b):
        return self.nu * np.asarray(b, dtype=float)

    def differential_reluctivity(self, b):
        b = np.asarray(b, dtype=float)
        return self.nu * np.broadcast_to(np.eye(2), b.shape[:-1] + (2, 2)).copy()

    def chord_reluctivity(self, s):
        return np.full(np.shape(s), self.nu, dtype=float)

    @property
    def gamma(self):
        return self.nu

    @property
    def L(self):
        return self.nu


@dataclass(frozen=True)
class PermanentMagnetLaw(MaterialLaw):
    """w(b) = nu |b - b_r|^2 / 2 with remanence b_r"""
    nu: float
    remanence: tuple[float, float] = (0.0, 0.0)
    isotropic = False

    def __post_init__(self):
        if not self.nu > 0:
            raise DataError(f"reluctivity must be positive, got {self.nu}")

    def energy_density(self, b):
        d = np.asarray(b, dtype=float) - np.asarray(self.remanence)
        return 0.5 * self.nu * np.sum(d * d, axis=-1)

    def field_intensity(self, b):
        return self.nu * (np.asarray(b, dtype=float) - np.asarray(self.remanence))

    def differential_reluctivity(self, b):
        b = np.asarray(b, dtype=float)
        return self.nu * np.broadcast_to(np.eye(2), b.shape[:-1] + (2, 2)).copy()

    @property
    def gamma(self):
        return self.nu

    @property
    def L(self):
        return self.nu


@dataclass(frozen=True, eq=False)
class IsotropicSplineLaw(MaterialLaw):
    """w(b) = W(|b|) with W' = h the monotone B-H spline"""
    spline: MonotoneSpline
    s_max: float = DEFAULT_S_MAX
    _bounds: tuple[float, float] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "_bounds", _sampled_bounds(self.spline, self.s_max))

    def energy_density(self, b):
        b = np.asarray(b, dtype=float)
        return self.spline.integral(np.linalg.norm(b, axis=-1))

    def field_intensity(self, b):
        b = np.asarray(b, dtype=float)
        return self.chord_reluctivity(np.linalg.norm(b, axis=-1))[..., None] * b

    def differential_reluctivity(self, b):
        b = np.asarray(b, dtype=float)
        s = np.linalg.norm(b, axis=-1)
        chord = self.chord_reluctivity(s)
        dh = self.spline.derivative(s)
        safe = np.where(s > 0, s, 1.0)
        e = b / safe[..., None]
        outer = e[..., :, None] * e[..., None, :]
        eye = np.broadcast_to(np.eye(2), b.shape[:-1] + (2, 2))
        # at b = 0 the unit vector is undefined but dh == chord there, so the rank-one term drops
        coupling = np.where(s > 0, dh - chord, 0.0)
        return chord[..., None, None] * eye + coupling[..., None, None] * outer

    def chord_reluctivity(self, s):
        s = np.asarray(s, dtype=float)
        safe = np.where(s > 0, s, 1.0)
        return np.where(s > 0, self.spline.value(s) / safe, self.spline.derivative(0.0))

    @property
    def gamma(self):
        return self._bounds[0]

    @property
    def L(self):
        return self._bounds[1]


def _sampled_bounds(spline: MonotoneSpline, s_max: float,
                    samples: int = BOUND_SAMPLES, margin: float = BOUND_MARGIN) -> tuple[float, float]:
    if not s_max > 0:
        raise CertificationError(f"s_max must be positive, got {s_max}")
    s = np.linspace(s_max / samples, s_max, samples)
    slopes = spline.derivative(s)
    chords = spline.value(s) / s
    candidates = np.concatenate([slopes, chords, [spline.nu_sat, float(spline.derivative(0.0))]])
    gamma = (1.0 - margin) * float(candidates.min())
    L = (1.0 + margin) * float(candidates.max())
    if not gamma > 0:
        raise CertificationError(f"material law is not strongly monotone (gamma={gamma:.3g})")
    return gamma, L


def energy_density(law: MaterialLaw, b: Flux2) -> np.ndarray:
    """Stored energy density w(b) in J/m^3"""
    return law.energy_density(b)


def field_intensity(law: MaterialLaw, b: Flux2) -> Field2:
    """Magnetic field h = dw/db"""
    return law.field_intensity(b)


def differential_reluctivity(law: MaterialLaw, b: Flux2) -> np.ndarray:
    """Hessian d^2w/db^2 as a symmetric 2x2 tensor"""
    return law.differential_reluctivity(b)


def chord_reluctivity(law: MaterialLaw, s) -> np.ndarray:
    """Secant reluctivity h(s)/s of an isotropic law, h'(0) at s = 0"""
    return law.chord_reluctivity(s)


def estimate_bounds(law: MaterialLaw, s_max: float = DEFAULT_S_MAX) -> tuple[float, float]:
    """
    Curvature bounds (gamma, L) of a law over |b| <= s_max.

    Spline laws are sampled densely and widened by a 1% margin; the linear tail
    beyond the data keeps the bounds valid for all b.
    """
    if isinstance(law, IsotropicSplineLaw):
        if s_max == law.s_max:
            return law.gamma, law.L
        return _sampled_bounds(law.spline, s_max)
    gamma, L = law.gamma, law.L
    if not gamma > 0 or L < gamma:
        raise CertificationError(f"degenerate bounds gamma={gamma}, L={L}")
    return gamma, L


def problem_bounds(laws: Mapping[int, MaterialLaw], s_max: float = DEFAULT_S_MAX) -> tuple[float, float]:
    """Global (gamma, L) over all region laws"""
    bounds = [estimate_bounds(law, s_max) for law in laws.values()]
    return min(b[0] for b in bounds), max(b[1] for b in bounds)


def saturation_curve_data(num_knots: int = BUNDLED_KNOTS, s_max: float = DEFAULT_S_MAX,
                          mu_r: float = BUNDLED_MU_R, b0: float = BUNDLED_B0) -> np.ndarray:
    """Samples of h(s) = (nu0 - dnu * exp(-s^2/b0^2)) * s, the bundled iron curve"""
    s = np.linspace(0.0, s_max, num_knots)
    dnu = NU0 - NU0 / mu_r
    h = (NU0 - dnu * np.exp(-(s / b0) ** 2)) * s
    return np.column_stack([s, h])


def load_bh_csv(path: str | Path) -> np.ndarray:
    """Read a two-column |b| (T), |h| (A/m) CSV; a non-numeric first row is a header"""
    rows = []
    try:
        with open(path, newline="") as f:
            for lineno, row in enumerate(csv.reader(f), start=1):
                if not row or all(not c.strip() for c in row) or row[0].lstrip().startswith("#"):
                    continue
                try:
                    s, h = float(row[0]), float(row[1])
                except (ValueError, IndexError):
                    if not rows and lineno == 1:
                        continue
                    raise DataError(f"{path}:{lineno}: expected two numbers, got {row}")
                rows.append((s, h))
    except OSError as e:
        raise DataError(f"Cannot read B-H curve {path}: {e}") from e
    if not rows:
        raise DataError(f"{path}: no B-H samples found")
    return np.asarray(rows)


def bundled_bh_curve() -> Path:
    """Location of the packaged default B-H curve"""
    return Path(str(resources.files(__package__).joinpath("data", BUNDLED_CURVE_FILE)))


def spline_law_from_csv(path: str | Path | None = None, nu_sat_min: float = 0.0,
                        s_max: float = DEFAULT_S_MAX) -> IsotropicSplineLaw:
    """Isotropic nonlinear law from a B-H CSV (the bundled curve if path is None)"""
    data = load_bh_csv(path if path is not None else bundled_bh_curve())
    law = IsotropicSplineLaw(build_monotone_spline(data, nu_sat_min=nu_sat_min), s_max=s_max)
    logger.info(f"Loaded B-H curve ({len(data)} knots): gamma={law.gamma:.6g}, L={law.L:.6g}")
    return law
