"""
Convergence certificates for the generalized gradient descent.

From the material bounds (gamma, L), the metric bounds (alpha, beta) and the
Armijo parameters (rho, sigma) the guaranteed step-size floor

    tau* = rho * min(2 (1 - sigma) alpha / L, 1)

and the energy contraction factor

    q = 1 - tau* sigma 2 gamma^2 / (L beta)

follow.  check_decay compares an observed trace against these guarantees.
The constants are conservative; they certify, they do not predict.
"""

import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .assembly import FixedPoint, Kacanov, MagnetostaticProblem, MetricChoice, metric_from_name
from .descent import IterationRecord, SolverConfig
from .errors import CertificationError, UnsupportedMethodError
from .material import DEFAULT_S_MAX, MaterialLaw, problem_bounds

logger = logging.getLogger('mcp_magnetostatics_server.certify')

DECAY_SLACK = 1e-9
# gaps at this multiple of machine precision times |Phi| are round-off
ROUNDOFF_FACTOR = 64 * np.finfo(float).eps


@dataclass(frozen=True)
class ConvergenceCertificate:
    method: str
    gamma: float
    L: float
    alpha: float
    beta: float
    rho: float
    sigma: float
    tau_star: float
    q: float
    C: float
    C_Omega: Optional[float] = None

    def __post_init__(self):
        violations = _invariant_violations(self.gamma, self.L, self.alpha, self.beta, self.rho, self.sigma)
        if not 0 < self.tau_star <= 1:
            violations.append(f"tau_star={self.tau_star} outside (0, 1]")
        if not 0 < self.q < 1:
            violations.append(f"q={self.q} outside (0, 1)")
        if not self.C >= 1:
            violations.append(f"C={self.C} < 1")
        if violations:
            raise CertificationError("; ".join(violations))

    @property
    def increment_factor(self) -> float:
        """2 gamma^2 / (L beta), the lower bound factor of the increment norm"""
        return 2.0 * self.gamma ** 2 / (self.L * self.beta)


@dataclass
class CertReport:
    certificate: ConvergenceCertificate
    phi_star: float
    checked_steps: int = 0
    max_ratio: float = 0.0
    min_tau: float = 1.0
    violations: list[str] = field(default_factory=list)

    @property
    def satisfied(self) -> bool:
        return not self.violations

    def to_text(self) -> str:
        lines = [certificate_text(self.certificate),
                 f"phi_star = {self.phi_star!r}",
                 f"checked_steps = {self.checked_steps}",
                 f"max_ratio = {self.max_ratio!r}",
                 f"min_tau = {self.min_tau!r}",
                 f"satisfied = {self.satisfied}"]
        lines += [f"violation = {v}" for v in self.violations]
        return "\n".join(lines)


def _invariant_violations(gamma, L, alpha, beta, rho, sigma) -> list[str]:
    violations = []
    if not 0 < gamma <= L:
        violations.append(f"need 0 < gamma <= L, got gamma={gamma}, L={L}")
    if not 0 < alpha <= beta:
        violations.append(f"need 0 < alpha <= beta, got alpha={alpha}, beta={beta}")
    if not 0 < rho < 1:
        violations.append(f"need 0 < rho < 1, got {rho}")
    if not 0 < sigma < 0.5:
        violations.append(f"need 0 < sigma < 1/2, got {sigma}")
    return violations


def derive_metric_bounds(metric_choice: MetricChoice, laws: Optional[Mapping[int, MaterialLaw]],
                         gamma: float, L: float, nu_bar: Optional[float] = None) -> tuple[float, float]:
    """
    Uniform eigenvalue bounds (alpha, beta) of the generalized reluctivity.

    Newton uses the Hessian and Kacanov the chord reluctivity; both lie in
    [gamma, L].  The fixed-point metric is the constant nu_bar.
    """
    if isinstance(metric_choice, FixedPoint):
        nu = nu_bar if nu_bar is not None else metric_choice.nu_bar
        return float(nu), float(nu)
    if isinstance(metric_choice, Kacanov) and laws is not None:
        anisotropic = [r for r, law in laws.items() if not law.isotropic]
        if anisotropic:
            raise UnsupportedMethodError(f"Kacanov iteration needs isotropic materials; regions {anisotropic} are not")
    return float(gamma), float(L)


def contraction_factor(gamma: float, L: float, alpha: float, beta: float,
                       rho: float, sigma: float) -> tuple[float, float, float]:
    """(tau*, q, C) of the r-linear convergence estimate"""
    violations = _invariant_violations(gamma, L, alpha, beta, rho, sigma)
    if violations:
        raise CertificationError("; ".join(violations))
    tau_star = rho * min(2.0 * (1.0 - sigma) * alpha / L, 1.0)
    q = 1.0 - tau_star * sigma * 2.0 * gamma ** 2 / (L * beta)
    return tau_star, q, L / gamma


def make_certificate(method: str, gamma: float, L: float, alpha: float, beta: float,
                     rho: float, sigma: float, C_Omega: Optional[float] = None) -> ConvergenceCertificate:
    tau_star, q, C = contraction_factor(gamma, L, alpha, beta, rho, sigma)
    return ConvergenceCertificate(method=method, gamma=gamma, L=L, alpha=alpha, beta=beta, rho=rho,
                                  sigma=sigma, tau_star=tau_star, q=q, C=C, C_Omega=C_Omega)


def build_certificate(laws: Mapping[int, MaterialLaw], config: SolverConfig,
                      s_max: float = DEFAULT_S_MAX, C_Omega: Optional[float] = None) -> ConvergenceCertificate:
    """Certificate for running config.method on a problem with these laws"""
    gamma, L = problem_bounds(laws, s_max)
    choice = config.metric_choice
    alpha, beta = derive_metric_bounds(choice, laws, gamma, L, config.nu_bar)
    cert = make_certificate(choice.name, gamma, L, alpha, beta, config.rho, config.sigma, C_Omega)
    logger.info(f"Certificate for {choice.name}: gamma={gamma:.6g} L={L:.6g} alpha={alpha:.6g} "
                f"beta={beta:.6g} tau*={cert.tau_star:.6g} q={cert.q:.12g}")
    return cert


def check_decay(trace: Sequence[IterationRecord], final_energy: float, cert: ConvergenceCertificate,
                last_decrease: Optional[float] = None, slack: float = DECAY_SLACK) -> CertReport:
    """
    Compare a trace with the guaranteed decay.

    Phi(a*) is estimated as the final energy minus the last energy decrease
    (the one that triggered termination, or the last observed step).  Checks
    for every n: the envelope gap_n <= q^n gap_0, the per-step ratio
    gap_{n+1}/gap_n <= q, the step-size floor tau_n >= tau*, and the increment
    bound |da_n|^2 >= 2 gamma^2/(L beta) gap_n.  Gaps are summed from the
    recorded step decreases when every record carries one, else they are
    energy differences.
    """
    if not trace:
        return CertReport(certificate=cert, phi_star=final_energy)
    decreases = [r.decrease for r in trace]
    resolved = all(d is not None for d in decreases)
    if last_decrease is None:
        last_decrease = decreases[-1] if resolved else abs(final_energy - trace[-1].energy)
    phi_star = final_energy - abs(last_decrease)
    report = CertReport(certificate=cert, phi_star=phi_star)

    if resolved:
        # summed step decreases stay accurate where energy differences cancel
        gaps = np.append(np.cumsum(np.array(decreases)[::-1])[::-1], 0.0) + abs(last_decrease)
        floor = ROUNDOFF_FACTOR * float(gaps[0])
    else:
        energies = np.array([r.energy for r in trace] + [final_energy])
        gaps = energies - phi_star
        floor = ROUNDOFF_FACTOR * float(np.max(np.abs(energies)))
    g0 = gaps[0]

    for n, gap in enumerate(gaps):
        envelope = cert.q ** n * g0 * (1.0 + slack)
        if gap > envelope + floor:
            report.violations.append(f"n={n}: gap {gap:.6e} exceeds envelope {envelope:.6e}")
        if n + 1 < gaps.size and gap > floor:
            ratio = gaps[n + 1] / gap
            report.max_ratio = max(report.max_ratio, ratio)
            report.checked_steps += 1
            if ratio > cert.q * (1.0 + slack):
                report.violations.append(f"n={n}: step ratio {ratio:.12g} exceeds q={cert.q:.12g}")

    for record, gap in zip(trace, gaps):
        report.min_tau = min(report.min_tau, record.tau)
        if record.tau < cert.tau_star * (1.0 - 1e-12):
            report.violations.append(f"n={record.n}: tau {record.tau:.6g} below tau*={cert.tau_star:.6g}")
        if gap > floor and record.increment_norm ** 2 * (1.0 + slack) < cert.increment_factor * gap:
            report.violations.append(f"n={record.n}: increment {record.increment_norm:.6e} below the "
                                     f"lower bound for gap {gap:.6e}")

    if report.violations:
        logger.warning(f"Certificate check for {cert.method} found {len(report.violations)} violations")
    else:
        logger.info(f"Certificate check for {cert.method} passed: {report.checked_steps} steps, "
                    f"max ratio {report.max_ratio:.6g} <= q={cert.q:.12g}")
    return report


def check_energy_sandwich(problem: MagnetostaticProblem, iterates: Sequence[np.ndarray], a_star: np.ndarray,
                          cert: ConvergenceCertificate, slack: float = 1e-8) -> list[str]:
    """
    Norm-energy equivalence on stored iterates:
    gamma/2 |curl(a - a*)|^2 <= Phi(a) - Phi(a*) <= L/2 |curl(a - a*)|^2.

    Returns the violations (empty if all iterates satisfy it).
    """
    K = problem.stiffness()
    phi_star = problem.energy(a_star)
    floor = ROUNDOFF_FACTOR * max(abs(phi_star), 1.0)
    violations = []
    for n, a in enumerate(iterates):
        e = np.asarray(a) - a_star
        dist2 = float(e @ (K @ e))
        gap = problem.energy(a) - phi_star
        if gap <= floor:
            continue
        lower = 0.5 * cert.gamma * dist2
        upper = 0.5 * cert.L * dist2
        if gap < lower * (1.0 - slack) - floor or gap > upper * (1.0 + slack) + floor:
            violations.append(f"iterate {n}: gap {gap:.6e} outside [{lower:.6e}, {upper:.6e}]")
    return violations


_FLOAT_FIELDS = ("gamma", "L", "alpha", "beta", "rho", "sigma", "tau_star", "q", "C")


def certificate_text(cert: ConvergenceCertificate) -> str:
    """Human-readable key = value block"""
    lines = []
    for key, value in asdict(cert).items():
        lines.append(f"{key} = {value!r}" if isinstance(value, float) else f"{key} = {value}")
    return "\n".join(lines)


def parse_certificate_text(text: str) -> ConvergenceCertificate:
    values: dict[str, str] = {}
    for line in text.splitlines():
        if " = " in line:
            key, value = line.split(" = ", 1)
            values[key.strip()] = value.strip()
    try:
        kwargs = {k: float(values[k]) for k in _FLOAT_FIELDS}
    except (KeyError, ValueError) as e:
        raise CertificationError(f"incomplete certificate block: {e}") from e
    c_omega = values.get("C_Omega")
    return ConvergenceCertificate(method=values.get("method", "unknown"),
                                  C_Omega=None if c_omega in (None, "None") else float(c_omega), **kwargs)


def certificate_for_method(method: str, laws: Mapping[int, MaterialLaw], rho: float, sigma: float,
                           nu_bar: Optional[float] = None, s_max: float = DEFAULT_S_MAX) -> ConvergenceCertificate:
    choice = metric_from_name(method, nu_bar)
    gamma, L = problem_bounds(laws, s_max)
    alpha, beta = derive_metric_bounds(choice, laws, gamma, L, nu_bar)
    return make_certificate(choice.name, gamma, L, alpha, beta, rho, sigma)
