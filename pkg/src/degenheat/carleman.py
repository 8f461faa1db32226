"""Carleman weight machinery: gauge transform, symmetric form, frequency function,
commutator-bound checks, and the closed-form constants pipeline.

The weighted-operator quadratic forms are evaluated directly (the weighted
operators themselves are never assembled): gradient terms use midpoint
quadrature and zeroth-order terms use the mass weights, matching the operator
module so the two independent routes to <-Sw, w> agree to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ArgumentError,
    ConstantsError,
    InsufficientDataError,
    ZeroStateError,
)
from .grid_operator import (
    DegenOperator,
    Field,
    Grid,
    ProblemSpec,
    m_norm,
    quadratic_form,
)
from .semigroup import Trajectory, propagate_field


@dataclass(frozen=True)
class CarlemanParams:
    """Weight parameters: exponent scale s in (0,1), time shift h_w in (0,1]."""

    s: float
    h_w: float
    T: float
    alpha: float

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ArgumentError(f"s must lie in (0, 1), got {self.s}")
        if not 0.0 < self.h_w <= 1.0:
            raise ArgumentError(f"h_w must lie in (0, 1], got {self.h_w}")
        if self.T <= 0.0:
            raise ArgumentError(f"T must be positive, got {self.T}")
        if not 0.0 < self.alpha < 1.0:
            raise ArgumentError(f"alpha must lie in (0, 1), got {self.alpha}")

    @property
    def c0(self) -> float:
        return 1.0 - 0.5 * self.s

    def theta(self, t: float) -> float:
        return self.T - t + self.h_w


def phi_spatial(x, alpha: float):
    """Spatial profile -x^(2-alpha) / (2 (2-alpha)^2); decreasing, phi(0) = 0."""
    return -(x ** (2.0 - alpha)) / (2.0 * (2.0 - alpha) ** 2)


def weight_phi(x: float, t: float, p: CarlemanParams) -> float:
    """Full weight s * phi(x) / theta(t)."""
    return p.s * phi_spatial(x, p.alpha) / p.theta(t)


def _weight_at_nodes(grid: Grid, t: float, p: CarlemanParams) -> np.ndarray:
    return p.s * phi_spatial(grid.nodes, p.alpha) / p.theta(t)


def gauge_transform(
    u: Field, t: float, p: CarlemanParams, direction: str = "forward"
) -> Field:
    """Pointwise multiply by exp(+Phi/2) ('forward') or exp(-Phi/2) ('inverse')."""
    if direction not in ("forward", "inverse"):
        raise ArgumentError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    phi = _weight_at_nodes(u.grid, t, p)
    factor = np.exp(0.5 * phi if direction == "forward" else -0.5 * phi)
    return Field(u.grid, u.values * factor)


def _zeroth_coeff(t: float, p: CarlemanParams) -> float:
    """Coefficient s(4-s) / (16 (2-alpha)^2 theta^2) of the x^(2-alpha) mass term."""
    th = p.theta(t)
    return p.s * (4.0 - p.s) / (16.0 * (2.0 - p.alpha) ** 2 * th * th)


def eta_values(grid: Grid, t: float, p: CarlemanParams) -> np.ndarray:
    """Analytic eta = Phi_t/2 + x^alpha Phi_x^2 / 4 at the nodes (always <= 0)."""
    return -_zeroth_coeff(t, p) * grid.nodes ** (2.0 - p.alpha)


def _gradient_energy(op: DegenOperator, w: np.ndarray) -> float:
    """sum x_{i+1/2}^alpha (w_{i+1}-w_i)^2 / dx with the ghost value w_n = 0."""
    d = np.empty_like(w)
    d[:-1] = w[1:] - w[:-1]
    d[-1] = -w[-1]
    return float(np.dot(op.flux_coeff, d * d))


def symmetric_form(op: DegenOperator, w: Field, t: float, p: CarlemanParams) -> float:
    """<-Sw, w>: boundary term + weighted gradient energy + zeroth-order mass term.

    All three contributions are nonnegative when beta0*beta1 >= 0.
    """
    vals = w.values
    grid = op.grid
    boundary = op.robin_coeff * vals[0] ** 2
    grad = _gradient_energy(op, vals)
    mass_term = _zeroth_coeff(t, p) * float(
        np.dot(grid.mass, grid.nodes ** (2.0 - p.alpha) * vals * vals)
    )
    return boundary + grad + mass_term


def symmetric_form_via_generator(
    op: DegenOperator, w: Field, t: float, p: CarlemanParams
) -> float:
    """Independent route: -<Aw, w>_M - sum m_i eta(x_i, t) w_i^2.

    Agrees with symmetric_form to rounding; kept as a cross-check of the
    quadrature pairing.
    """
    eta = eta_values(op.grid, t, p)
    mass_eta = float(np.dot(op.grid.mass, eta * w.values * w.values))
    return -quadratic_form(op, w) - mass_eta


def frequency(op: DegenOperator, w: Field, t: float, p: CarlemanParams) -> float:
    """Rayleigh-type quotient N(t) = <-Sw, w> / ||w||_M^2."""
    nrm = m_norm(op.grid, w.values)
    if nrm == 0.0:
        raise ZeroStateError("frequency undefined for the zero state")
    return symmetric_form(op, w, t, p) / (nrm * nrm)


def carleman_bound_check(
    op: DegenOperator, w: Field, t: float, p: CarlemanParams
) -> tuple[float, float, bool]:
    """Check Qw <= ((1 + C0)/theta) <-Sw, w>; returns (lhs, rhs, ok).

    Qw carries the boundary, gradient and zeroth-order terms with their
    commutator coefficients; the inequality holds per quadrature term for
    s in (0,1), alpha in (0,1).
    """
    vals = w.values
    grid = op.grid
    th = p.theta(t)
    two_minus_a = 2.0 - p.alpha
    boundary = op.robin_coeff * p.s / (2.0 * two_minus_a * th) * vals[0] ** 2
    grad = p.s / (2.0 * th) * _gradient_energy(op, vals)
    mass_term = (
        p.s
        * (4.0 - p.s) ** 2
        / (32.0 * two_minus_a**2 * th**3)
        * float(np.dot(grid.mass, grid.nodes**two_minus_a * vals * vals))
    )
    lhs = boundary + grad + mass_term
    rhs = (1.0 + p.c0) / th * symmetric_form(op, w, t, p)
    return lhs, rhs, lhs <= rhs + 1e-12


@dataclass(frozen=True)
class EnergyOdeReport:
    """Normalized residuals of the gauged energy balance and frequency growth."""

    samples: int
    dt: float
    energy_residual: float
    frequency_slack: float
    frequency_margin: float  # signed max of N' - (1+C0)/theta * N


def check_energy_ode(
    op: DegenOperator, traj: Trajectory, p: CarlemanParams
) -> EnergyOdeReport:
    """Residuals of (1/2) d/dt ||w||^2 + N ||w||^2 = 0 along a gauged trajectory.

    ``traj`` must hold already-gauged states w(t) at uniformly spaced times.
    The energy residual is max |r| / max(||w||^2 / theta); the frequency slack
    is the positive part of N' - ((1+C0)/theta) N, normalized by max(N/theta).
    """
    times = traj.times
    if len(times) < 3:
        raise InsufficientDataError("need at least 3 time samples")
    steps = np.diff(times)
    dt = float(steps[0])
    if np.any(np.abs(steps - dt) > 1e-9 * dt):
        raise ArgumentError("time samples must be uniformly spaced")

    energy = traj.states**2 @ op.grid.mass
    nfun = np.array(
        [
            symmetric_form(op, traj.field(k), float(times[k]), p)
            for k in range(len(times))
        ]
    ) / np.maximum(energy, 1e-300)
    theta = p.theta(times)

    de = (energy[2:] - energy[:-2]) / (4.0 * dt)
    resid = de + nfun[1:-1] * energy[1:-1]
    energy_scale = float(np.max(energy / theta))
    energy_residual = float(np.max(np.abs(resid)) / max(energy_scale, 1e-300))

    dn = (nfun[2:] - nfun[:-2]) / (2.0 * dt)
    margin = dn - (1.0 + p.c0) / theta[1:-1] * nfun[1:-1]
    freq_scale = float(np.max(nfun / theta))
    freq_margin = float(np.max(margin))
    frequency_slack = max(0.0, freq_margin) / max(freq_scale, 1e-300)
    return EnergyOdeReport(
        samples=len(times),
        dt=dt,
        energy_residual=energy_residual,
        frequency_slack=float(frequency_slack),
        frequency_margin=freq_margin,
    )


def interpolation_exponent(t1: float, t2: float, t3: float, p: CarlemanParams) -> float:
    """Ratio of theta^-(1+C0) masses over (t2,t3) and (t1,t2), in closed form.

    The antiderivative of theta(t)^-(1+C0) is theta^-C0 / C0, so both
    integrals reduce to endpoint evaluations.
    """
    if not 0.0 < t1 < t2 < t3 <= p.T:
        raise ArgumentError(f"need 0 < t1 < t2 < t3 <= T, got {(t1, t2, t3)}")
    c0 = p.c0

    def anti(t: float) -> float:
        return p.theta(t) ** (-c0) / c0

    return (anti(t3) - anti(t2)) / (anti(t2) - anti(t1))


@dataclass(frozen=True)
class ThreePointResult:
    lhs: float
    rhs: float
    exponent: float
    log_lhs: float
    log_rhs: float
    ok: bool

    @property
    def ratio(self) -> float:
        return float(np.exp(self.log_lhs - self.log_rhs))


def check_three_point(
    op: DegenOperator,
    u0: Field,
    t1: float,
    t2: float,
    t3: float,
    p: CarlemanParams,
    dt: float,
    scheme: str = "crank_nicolson",
) -> ThreePointResult:
    """Check ||w(t2)||^(1+M) <= ||w(t1)||^M ||w(t3)|| for the gauged solution.

    Evolves segment-wise so each sample time is hit exactly; the comparison
    is carried out in log space.
    """
    if m_norm(u0.grid, u0.values) == 0.0:
        raise ZeroStateError("three-point check needs a nonzero initial state")
    expo = interpolation_exponent(t1, t2, t3, p)

    u_t1 = propagate_field(op, u0, t1, dt, scheme)
    u_t2 = propagate_field(op, u_t1, t2 - t1, dt, scheme)
    u_t3 = propagate_field(op, u_t2, t3 - t2, dt, scheme)
    norms = []
    for u_t, t in ((u_t1, t1), (u_t2, t2), (u_t3, t3)):
        w = gauge_transform(u_t, t, p, "forward")
        nrm = m_norm(op.grid, w.values)
        if nrm == 0.0:
            raise ZeroStateError("gauged state vanished along the trajectory")
        norms.append(nrm)
    log1, log2, log3 = (float(np.log(v)) for v in norms)
    log_lhs = (1.0 + expo) * log2
    log_rhs = expo * log1 + log3
    ok = log_lhs <= log_rhs + np.log1p(1e-6)
    return ThreePointResult(
        lhs=float(np.exp(log_lhs)),
        rhs=float(np.exp(log_rhs)),
        exponent=expo,
        log_lhs=log_lhs,
        log_rhs=log_rhs,
        ok=bool(ok),
    )


@dataclass(frozen=True)
class TheoryConstants:
    """Closed-form constants of the observation estimate.

    logK is the natural logarithm of the penalization weight
    K = exp(C (1 + 1/gap)) / eps^beta; log10K is provided because K itself
    overflows double precision for realistic eps.
    """

    l: int
    M_l: float
    c0: float
    C1: float
    C2: float
    rho: float
    C: float
    beta: float
    logK: float

    @property
    def log10K(self) -> float:
        return self.logK / np.log(10.0)


def growth_ratio(l: int, c0: float) -> float:
    """M_l = ((l+1)^C0 - 1) / (1 - ((l+1)/(2l+1))^C0), evaluated in log space."""
    lp = float(l) + 1.0
    num = np.expm1(c0 * np.log(lp))
    den = -np.expm1(c0 * (np.log(lp) - np.log(2.0 * l + 1.0)))
    return float(num / den)


def _complement_gap(l: int, c0: float, kappa_pow: float) -> float:
    """kappa^(2-alpha) - (1+M_l)/(1+l); positive once l is large enough."""
    return kappa_pow - (1.0 + growth_ratio(l, c0)) / (float(l) + 1.0)


_L_CAP = 10**9


def _minimal_l(c0: float, kappa_pow: float) -> int:
    """Smallest integer l >= 2 with (1+M_l)/(1+l) < kappa^(2-alpha).

    Gallops to bracket the sign change, bisects, then walks back so the
    returned l is minimal even if the gap is locally non-monotone.
    """
    if _complement_gap(2, c0, kappa_pow) > 0.0:
        return 2
    lo = 2
    hi = 4
    while _complement_gap(hi, c0, kappa_pow) <= 0.0:
        lo = hi
        hi *= 2
        if hi > _L_CAP:
            raise ConstantsError(
                f"no l <= {_L_CAP} satisfies the complement sign condition"
            )
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _complement_gap(mid, c0, kappa_pow) > 0.0:
            hi = mid
        else:
            lo = mid
    while hi > 2 and _complement_gap(hi - 1, c0, kappa_pow) > 0.0:
        hi -= 1
    return hi


def theoretical_constants(spec: ProblemSpec, p: CarlemanParams) -> TheoryConstants:
    """Constants pipeline: minimal l, M_l, C1, C2, rho, C, beta and log K.

    With c = 1 / (2 (2-alpha)^2) and the decreasing spatial profile,
    C1 scales the observation-window exponent and C2 the complement decay;
    both sign conditions hold at the returned l and the complement one fails
    at l - 1.
    """
    spec.validate(strict=False)
    if abs(spec.alpha - p.alpha) > 1e-12:
        raise ArgumentError("spec.alpha and CarlemanParams.alpha disagree")
    c0 = p.c0
    c = 1.0 / (2.0 * (2.0 - spec.alpha) ** 2)
    kappa_pow = spec.kappa ** (2.0 - spec.alpha)
    l = _minimal_l(c0, kappa_pow)
    ml = growth_ratio(l, c0)
    ratio = (1.0 + ml) / (float(l) + 1.0)
    c1 = 0.5 * p.s * ratio * c
    c2 = 0.5 * p.s * c * (kappa_pow - ratio)
    rho = 1.0 / (1.0 + ml + (1.0 + ml) * c1 / c2)
    beta = (1.0 - rho) / rho
    big_c = 2.0 * float(l) * (1.0 + c1 / c2) * max(c1, 1.0)
    gap = spec.T - spec.tau
    if gap <= 0.0:
        raise ArgumentError("constants need a positive time gap T - tau")
    log_k = beta * abs(np.log(spec.eps)) + big_c * (1.0 + 1.0 / gap)
    return TheoryConstants(
        l=l,
        M_l=ml,
        c0=c0,
        C1=c1,
        C2=c2,
        rho=rho,
        C=big_c,
        beta=beta,
        logK=float(log_k),
    )
