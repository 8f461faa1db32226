"""Spatial mesh and the degenerate diffusion operator with Robin boundary flux.

The diffusion coefficient x**alpha vanishes at the left endpoint.  Fluxes are
evaluated at cell midpoints only, so the singular point is never touched, and
the assembled operator is exactly self-adjoint and dissipative in the
mass-weighted discrete inner product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ArgumentError,
    DomainError,
    GridError,
    RobinParameterError,
    ShapeError,
)


@dataclass(frozen=True)
class ProblemSpec:
    """Physical and control parameters of one impulse-control problem.

    alpha  : degeneracy exponent, 0 < alpha < 1
    beta0, beta1 : Robin coefficients at x = 0 (beta1 != 0, beta0*beta1 >= 0)
    kappa  : right endpoint of the control region omega = (0, kappa)
    tau    : impulse time, 0 < tau < T
    T      : time horizon
    eps    : target accuracy for the terminal state
    """

    alpha: float
    beta0: float
    beta1: float
    kappa: float
    tau: float
    T: float
    eps: float

    def validate(self, strict: bool = True) -> None:
        """Raise if invariants fail.

        With ``strict=False`` the limiting cases kappa = 1 and tau = T are
        admitted; they are used internally by tests and by the closed-form
        synthesis checks, never by the CLI.
        """
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.beta1 == 0.0:
            raise RobinParameterError("beta1 must be nonzero")
        if self.beta0 * self.beta1 < 0.0:
            raise RobinParameterError("beta0*beta1 must be >= 0")
        if self.T <= 0.0:
            raise ArgumentError(f"T must be positive, got {self.T}")
        hi_kappa = 1.0 if strict else 1.0 + 1e-15
        if not (0.0 < self.kappa < hi_kappa or (not strict and self.kappa == 1.0)):
            raise ArgumentError(f"kappa must lie in (0, 1), got {self.kappa}")
        if strict:
            if not 0.0 < self.tau < self.T:
                raise ArgumentError(f"tau must lie in (0, T), got {self.tau}")
        elif not 0.0 < self.tau <= self.T:
            raise ArgumentError(f"tau must lie in (0, T], got {self.tau}")
        if self.eps <= 0.0:
            raise ArgumentError(f"eps must be positive, got {self.eps}")

    @property
    def robin_coeff(self) -> float:
        return self.beta0 / self.beta1


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform mesh of n cells on (0, 1); the Dirichlet node x = 1 is eliminated.

    Unknowns live at nodes x_i = i*dx, i = 0..n-1.  The boundary cell has
    half width, so the mass weights are m_0 = dx/2 and m_i = dx otherwise.
    """

    n: int
    dx: float
    nodes: np.ndarray
    mass: np.ndarray
    midpoints: np.ndarray

    def same_as(self, other: "Grid") -> bool:
        return self.n == other.n and self.dx == other.dx


def build_grid(n: int, min_cells: int = 4) -> Grid:
    """Build the uniform grid with n cells.

    ``min_cells`` exists for internal tests that exercise tiny hand-checkable
    meshes; production use keeps the default floor of 4.
    """
    if n < min_cells:
        raise GridError(f"need at least {min_cells} cells, got {n}")
    dx = 1.0 / n
    nodes = dx * np.arange(n)
    mass = np.full(n, dx)
    mass[0] = 0.5 * dx
    midpoints = nodes + 0.5 * dx
    for arr in (nodes, mass, midpoints):
        arr.setflags(write=False)
    return Grid(n=n, dx=dx, nodes=nodes, mass=mass, midpoints=midpoints)


@dataclass(frozen=True, eq=False)
class Field:
    """Grid function: point values at the unknown nodes."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n,):
            raise ShapeError(
                f"expected {self.grid.n} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)


def m_inner(grid: Grid, u: np.ndarray, v: np.ndarray) -> float:
    """Mass-weighted inner product <u, v>_M = sum_i m_i u_i v_i."""
    return float(np.dot(grid.mass * u, v))


def m_norm(grid: Grid, u: np.ndarray) -> float:
    return float(np.sqrt(np.dot(grid.mass, u * u)))


def omega_indicator(grid: Grid, kappa: float) -> np.ndarray:
    """Boolean mask of the unknown nodes inside omega = (0, kappa)."""
    if not 0.0 < kappa <= 1.0:
        raise ArgumentError(f"kappa must lie in (0, 1], got {kappa}")
    return grid.nodes < kappa


@dataclass(frozen=True, eq=False)
class DegenOperator:
    """Tridiagonal realization of u -> (x^alpha u_x)_x with Robin flux at x=0.

    sub/diag/sup hold the stiffness rows; flux_coeff[i] = x_{i+1/2}^alpha / dx
    is the face conductance shared by the quadratic-form routines so the
    discrete integration-by-parts identity is exact.
    """

    grid: Grid
    spec: ProblemSpec
    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    robin_coeff: float
    flux_coeff: np.ndarray

    def matvec(self, u: np.ndarray) -> np.ndarray:
        out = self.diag * u
        out[:-1] += self.sup[:-1] * u[1:]
        out[1:] += self.sub[1:] * u[:-1]
        return out

    def apply(self, u: Field) -> Field:
        if not u.grid.same_as(self.grid):
            raise ShapeError("field lives on a different grid")
        return Field(self.grid, self.matvec(u.values))


def assemble_operator(grid: Grid, spec: ProblemSpec) -> DegenOperator:
    """Finite-volume flux scheme for the degenerate operator.

    Interior rows balance midpoint fluxes F_{i+1/2} = x_{i+1/2}^alpha
    (u_{i+1} - u_i)/dx with the eliminated Dirichlet value u_n = 0; the
    half-width boundary cell absorbs the Robin flux (beta0/beta1) u_0 so that
    the quadratic form reproduces the continuous boundary term exactly.
    """
    if not 0.0 < spec.alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {spec.alpha}")
    if spec.beta1 == 0.0:
        raise RobinParameterError("beta1 must be nonzero")

    n, dx = grid.n, grid.dx
    robin = spec.beta0 / spec.beta1
    c = grid.midpoints**spec.alpha / dx  # face conductances, i = 0..n-1

    sub = np.zeros(n)
    diag = np.zeros(n)
    sup = np.zeros(n)

    diag[0] = -(c[0] + robin) / grid.mass[0]
    sup[0] = c[0] / grid.mass[0]
    if n > 1:
        sub[1:] = c[:-1] / grid.mass[1:]
        diag[1:] = -(c[1:] + c[:-1]) / grid.mass[1:]
        sup[1:-1] = c[1:-1] / grid.mass[1:-1]

    for arr in (sub, diag, sup, c):
        arr.setflags(write=False)
    return DegenOperator(
        grid=grid,
        spec=spec,
        sub=sub,
        diag=diag,
        sup=sup,
        robin_coeff=robin,
        flux_coeff=c,
    )


def _increments(u: np.ndarray) -> np.ndarray:
    """Forward differences u_{i+1} - u_i with the ghost value u_n = 0."""
    d = np.empty_like(u)
    d[:-1] = u[1:] - u[:-1]
    d[-1] = -u[-1]
    return d


def quadratic_form(op: DegenOperator, u: Field) -> float:
    """Discrete form -(beta0/beta1) u_0^2 - sum x_{i+1/2}^alpha (du)^2 / dx.

    Equals <Au, u>_M to machine precision (summation by parts is exact for
    this flux scheme).
    """
    if not u.grid.same_as(op.grid):
        raise ShapeError("field lives on a different grid")
    vals = u.values
    d = _increments(vals)
    return float(-op.robin_coeff * vals[0] ** 2 - np.dot(op.flux_coeff, d * d))


def weighted_norms(grid: Grid, u: Field, alpha: float) -> tuple[float, float]:
    """Return (l2, h1_alpha) norms in the weighted discrete spaces."""
    if not u.grid.same_as(grid):
        raise ShapeError("field lives on a different grid")
    vals = u.values
    l2sq = float(np.dot(grid.mass, vals * vals))
    c = grid.midpoints**alpha / grid.dx
    d = _increments(vals)
    h1sq = l2sq + float(np.dot(c, d * d))
    return float(np.sqrt(l2sq)), float(np.sqrt(h1sq))
