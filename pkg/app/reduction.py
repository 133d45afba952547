"""Reduction of the general system to the canonical one.

The chain, applied to ∂ₓ(a∂ₓz) + b∂ₓz + cz − ρ∂ₜz = fχ_ω:

1. c-sign normalization: z = e^{κt}ẑ with κ = max(0, max c/ρ) turns c into
   c − κρ ≤ 0 and f into e^{−κt}f.  Kept as metadata (``shift_rate``).
2. B(x) = ∫₀ˣ b/a, so a∂ₓ² + b∂ₓ = e^{−B}∂ₓ(a e^B ∂ₓ).
3. w solves e^{−B}(a e^B w′)′ + c w = 0, w(0) = w(1) = 1; z = w·ẑ.
4. y = (1/L)∫₀ˣ 1/(a w² e^B), L the total integral.

The result is ∂_y²z̃ − ρ̃∂ₜz̃ = f̃χ_ω̃ with

    ρ̃(y) = L² ρ a w⁴ e^{2B}      evaluated at x(y)
    f̃(y, t) = e^{−κt} L² a w³ e^{2B} f      evaluated at x(y)

ρ̃ is tabulated on the image of the x-grid; the x-grid contains every
coefficient breakpoint so the jumps of ρ̃ land on nodes.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import solve_banded

from .coefficients import (
    ControlRegion,
    PiecewiseProfile,
    ProblemSpec,
    TabulatedDensity,
    density_bounds_constant,
    gauss_rule,
    union_breakpoints,
)
from .config import settings
from .errors import DomainError, NumericalRefusal, PreconditionError, SupportError

logger = logging.getLogger(__name__)

# Upper slack on w from the discrete maximum principle
W_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class TabulatedFunction:
    """Nodal values with linear interpolation."""

    nodes: np.ndarray
    values: np.ndarray

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values)


def _exprel(z: np.ndarray) -> np.ndarray:
    """(e^z − 1)/z, equal to 1 at z = 0."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-8
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0 + 0.5 * z, np.expm1(safe) / safe)


def reduction_grid(*profiles: PiecewiseProfile, n: int | None = None) -> np.ndarray:
    """Uniform grid of n cells merged with every breakpoint of *profiles*."""
    n = n or settings.REDUCTION_GRID_N
    uniform = np.linspace(0.0, 1.0, n + 1)
    bp = union_breakpoints(*profiles)
    # drop uniform nodes that would leave sliver cells next to a breakpoint
    gap = np.min(np.abs(uniform[:, None] - bp[None, :]), axis=1)
    keep = gap > 1e-6 / n
    return np.unique(np.concatenate((uniform[keep], bp)))


def compute_B(a: PiecewiseProfile, b: PiecewiseProfile, grid: np.ndarray | None = None) -> TabulatedFunction:
    """B(x) = ∫₀ˣ b/a, exact at the nodes of *grid* (default: the breakpoints)."""
    grid = union_breakpoints(a, b) if grid is None else np.asarray(grid, dtype=float)
    slope = b.on_cells(grid) / a.on_cells(grid)
    values = np.concatenate(([0.0], np.cumsum(slope * np.diff(grid))))
    return TabulatedFunction(grid, values)


def solve_w(
    a: PiecewiseProfile,
    b: PiecewiseProfile,
    c: PiecewiseProfile,
    grid: np.ndarray | None = None,
) -> TabulatedFunction:
    """Solve e^{−B}(a e^B w′)′ + c w = 0, w(0) = w(1) = 1 with P1 elements.

    The reaction term is mass-lumped so the discrete operator is an M-matrix
    and the discrete maximum principle gives 0 < w ≤ 1.

    Raises:
        PreconditionError: c > 0 on some cell.
    """
    positive = np.flatnonzero(c.values > 0)
    if positive.size:
        raise PreconditionError(
            f"c > 0 on cell(s) {positive.tolist()}: shift c to c − κρ with "
            f"κ ≥ max(c/ρ) first (tracked as the state factor e^(κt))")
    grid = reduction_grid(a, b, c) if grid is None else np.asarray(grid, dtype=float)
    if np.all(c.values == 0.0):
        return TabulatedFunction(grid, np.ones_like(grid))

    B = compute_B(a, b, grid).values
    h = np.diff(grid)
    a_c = a.on_cells(grid)
    slope = b.on_cells(grid) / a_c
    c_c = c.on_cells(grid)

    # ∫ a e^B over each cell, exact for linear B
    k_e = a_c * np.exp(B[:-1]) * _exprel(slope * h) / h

    gx, gw = gauss_rule()
    e_b = np.exp(B[:-1, None] + slope[:, None] * h[:, None] * gx[None, :])
    r_left = -c_c * h * np.sum(gw * (1.0 - gx) * e_b, axis=1)
    r_right = -c_c * h * np.sum(gw * gx * e_b, axis=1)

    diag = np.zeros(grid.size)
    diag[:-1] += k_e + r_left
    diag[1:] += k_e + r_right
    off = -k_e

    m = grid.size - 2
    ab = np.zeros((3, m))
    ab[0, 1:] = off[1:-1]
    ab[1] = diag[1:-1]
    ab[2, :-1] = off[1:-1]
    rhs = np.zeros(m)
    rhs[0] += k_e[0]
    rhs[-1] += k_e[-1]
    w_inner = solve_banded((1, 1), ab, rhs)
    w = np.concatenate(([1.0], w_inner, [1.0]))

    if w.min() <= 0.0 or w.max() > 1.0 + W_TOL:
        raise NumericalRefusal(
            f"w violates the maximum principle: min {w.min():.3e}, max {w.max():.12f}")
    return TabulatedFunction(grid, w)


def a_priori_k_tilde(K: float) -> float:
    """Ellipticity constant of the canonical system from K alone.

    Uses |B| ≤ K², κ ≤ K², |c − κρ| ≤ K + K³ and a cosh comparison
    function for w in the flux variable. Returns +inf when the bound
    leaves double range (it grows like exp(exp(K²)))."""
    K2 = K * K
    log_p_max = math.log(K) + K2
    log_P = log_p_max
    log_Q = math.log(K) + K2 + math.log(K + K ** 3) + K2
    z = math.exp(0.5 * log_Q + log_P) / 2.0
    if z > 700.0:
        return math.inf
    log_w_min = -math.log(math.cosh(z))
    log_L_min = -log_p_max
    log_L_max = log_p_max - 2.0 * log_w_min
    logs = [
        2.0 * log_L_max + 2.0 * math.log(K) + 2.0 * K2,                                # ρ̃ max
        -(2.0 * log_L_min - 2.0 * math.log(K) + 4.0 * log_w_min - 2.0 * K2),           # 1/ρ̃ min
        -(log_L_min - math.log(K) + 2.0 * log_w_min - K2),                             # y′ max
        log_L_max + math.log(K) + K2,                                                  # 1/y′ min
    ]
    top = max(logs)
    return math.inf if top > 700.0 else math.exp(top)


# ── Canonical system ───────────────────────────────────────


@dataclass(frozen=True, eq=False)
class CanonicalSystem:
    """Reduced system ∂_y²z̃ − ρ̃∂ₜz̃ = f̃χ_ω̃ and the maps back to x.

    Attributes:
        x_grid, y_grid: Paired nodes; y_grid = y(x_grid).
        B_values, w_values: B and w at x_grid.
        L:          Total Liouville length.
        shift_rate: κ of the c-sign normalization (0 when c ≤ 0 already).
        a:          Original a (needed by the control factor).
        rho_tilde:  Canonical density on y_grid.
        omega, omega_tilde: Control region before and after the map.
        K_tilde:    Measured constant bounding ρ̃ and the bi-Lipschitz constants of y.
        K_tilde_bound: A-priori constant from K (may be inf).
    """

    x_grid: np.ndarray
    y_grid: np.ndarray
    B_values: np.ndarray
    w_values: np.ndarray
    L: float
    shift_rate: float
    a: PiecewiseProfile
    rho_tilde: TabulatedDensity
    omega: ControlRegion
    omega_tilde: ControlRegion
    K_tilde: float
    K_tilde_bound: float

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if np.any((v < -1e-14) | (v > 1.0 + 1e-14)):
            raise DomainError("coordinate outside [0, 1]")
        return np.clip(v, 0.0, 1.0)

    def y_of_x(self, x):
        return np.interp(self._check(x), self.x_grid, self.y_grid)

    def x_of_y(self, y):
        return np.interp(self._check(y), self.y_grid, self.x_grid)

    def w(self, x):
        return np.interp(self._check(x), self.x_grid, self.w_values)

    def B(self, x):
        return np.interp(self._check(x), self.x_grid, self.B_values)

    def control_factor(self, x):
        """L² a w³ e^{2B}: multiplies f to give f̃ (up to e^{−κt})."""
        x = self._check(x)
        return self.L ** 2 * self.a(x) * self.w(x) ** 3 * np.exp(2.0 * self.B(x))

    def state_factor(self, t: float) -> float:
        return math.exp(self.shift_rate * t)

    def to_dict(self) -> dict:
        return {
            "x_grid": self.x_grid.tolist(), "y_grid": self.y_grid.tolist(),
            "B_values": self.B_values.tolist(), "w_values": self.w_values.tolist(),
            "L": self.L, "shift_rate": self.shift_rate, "a": self.a.to_dict(),
            "rho_tilde": self.rho_tilde.to_dict(),
            "omega": self.omega.to_list(), "omega_tilde": self.omega_tilde.to_list(),
            "K_tilde": self.K_tilde,
            "K_tilde_bound": None if math.isinf(self.K_tilde_bound) else self.K_tilde_bound,
        }

    @classmethod
    def from_dict(cls, data: dict) -> CanonicalSystem:
        bound = data.get("K_tilde_bound")
        return cls(
            x_grid=np.asarray(data["x_grid"], dtype=float),
            y_grid=np.asarray(data["y_grid"], dtype=float),
            B_values=np.asarray(data["B_values"], dtype=float),
            w_values=np.asarray(data["w_values"], dtype=float),
            L=float(data["L"]), shift_rate=float(data["shift_rate"]),
            a=PiecewiseProfile.from_dict(data["a"]),
            rho_tilde=TabulatedDensity.from_dict(data["rho_tilde"]),
            omega=ControlRegion(tuple(map(tuple, data["omega"]))),
            omega_tilde=ControlRegion(tuple(map(tuple, data["omega_tilde"]))),
            K_tilde=float(data["K_tilde"]),
            K_tilde_bound=math.inf if bound is None else float(bound),
        )


def shift_rate_for(c: PiecewiseProfile, rho: PiecewiseProfile) -> float:
    """Smallest κ ≥ 0 with c − κρ ≤ 0 on every cell."""
    cells = union_breakpoints(c, rho)
    return max(0.0, float(np.max(c.on_cells(cells) / rho.on_cells(cells))))


def build_canonical(spec: ProblemSpec, grid_n: int | None = None) -> CanonicalSystem:
    """Run the reduction chain on *spec*."""
    start = time.time()
    kappa = shift_rate_for(spec.c, spec.rho)
    cells = union_breakpoints(spec.c, spec.rho)
    c_eff = PiecewiseProfile(
        cells, np.minimum(spec.c.on_cells(cells) - kappa * spec.rho.on_cells(cells), 0.0))

    grid = reduction_grid(spec.a, spec.b, c_eff, spec.rho, n=grid_n)
    B = compute_B(spec.a, spec.b, grid).values
    w = solve_w(spec.a, spec.b, c_eff, grid).values

    h = np.diff(grid)
    a_c = spec.a.on_cells(grid)
    rho_c = spec.rho.on_cells(grid)

    # ∫ 1/(a w² e^B) per cell with w linear and B linear inside the cell
    gx, gw = gauss_rule()
    w_q = w[:-1, None] + (w[1:] - w[:-1])[:, None] * gx[None, :]
    b_q = B[:-1, None] + (B[1:] - B[:-1])[:, None] * gx[None, :]
    per_cell = h * np.sum(gw / (w_q ** 2 * np.exp(b_q)), axis=1) / a_c
    cumulative = np.concatenate(([0.0], np.cumsum(per_cell)))
    L = float(cumulative[-1])
    y = cumulative / L
    y[-1] = 1.0

    rho_start = L ** 2 * rho_c * a_c * w[:-1] ** 4 * np.exp(2.0 * B[:-1])
    rho_end = L ** 2 * rho_c * a_c * w[1:] ** 4 * np.exp(2.0 * B[1:])
    rho_tilde = TabulatedDensity(y, rho_start, rho_end)

    slope_start = 1.0 / (L * a_c * w[:-1] ** 2 * np.exp(B[:-1]))
    slope_end = 1.0 / (L * a_c * w[1:] ** 2 * np.exp(B[1:]))
    slopes = np.concatenate((slope_start, slope_end))
    K_tilde = max(density_bounds_constant(rho_tilde), float(slopes.max()), float(1.0 / slopes.min()))
    K_bound = a_priori_k_tilde(spec.K)
    if K_tilde > K_bound:
        logger.warning("[reduce] measured K̃ = %.4g exceeds the a-priori bound %.4g "
                       "(spec outside its ellipticity bounds?)", K_tilde, K_bound)

    omega_tilde = spec.omega.mapped(lambda x: np.interp(x, grid, y))
    system = CanonicalSystem(
        x_grid=grid, y_grid=y, B_values=B, w_values=w, L=L, shift_rate=kappa,
        a=spec.a, rho_tilde=rho_tilde, omega=spec.omega, omega_tilde=omega_tilde,
        K_tilde=K_tilde, K_tilde_bound=K_bound,
    )
    logger.info("[reduce] L=%.6g κ=%.4g K̃=%.4g δ̃=%.4g on %d cells (%.2fs)",
                L, kappa, K_tilde, omega_tilde.inradius, grid.size - 1, time.time() - start)
    return system


# ── Maps between coordinates ───────────────────────────────


class PulledBackControl:
    """Control of the original system obtained from a canonical control.

    f(x, t) = e^{κt} f̃(y(x), t) / (L² a w³ e^{2B})(x)
    """

    def __init__(self, control: Callable, system: CanonicalSystem, support: ControlRegion):
        self.control = control
        self.system = system
        self.support = support.mapped(system.x_of_y)

    def __call__(self, x, t: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.system.y_of_x(x)
        return (self.system.state_factor(t) * np.asarray(self.control(y, t))
                / self.system.control_factor(x))

    def raster(self, x: np.ndarray, times: np.ndarray) -> np.ndarray:
        """f sampled at every (t, x): shape (len(times), len(x))."""
        return np.stack([self(x, t) for t in times])


class PushedForwardControl:
    """Canonical control obtained from an original-coordinates control."""

    def __init__(self, control: Callable, system: CanonicalSystem, support: ControlRegion):
        self.control = control
        self.system = system
        self.support = support.mapped(system.y_of_x)

    def __call__(self, y, t: float) -> np.ndarray:
        x = self.system.x_of_y(np.asarray(y, dtype=float))
        return (self.system.control_factor(x) * np.asarray(self.control(x, t))
                / self.system.state_factor(t))


def _support_of(control, support: ControlRegion | None) -> ControlRegion:
    support = support if support is not None else getattr(control, "support", None)
    if support is None:
        raise SupportError("control carries no support; pass support= explicitly")
    return support


def map_control_back(control: Callable, system: CanonicalSystem,
                     support: ControlRegion | None = None) -> PulledBackControl:
    """Turn a canonical control f̃(y, t) into the original control f(x, t).

    Raises:
        SupportError: the control's support leaves ω̃.
    """
    support = _support_of(control, support)
    if not system.omega_tilde.includes(support, tol=1e-12):
        raise SupportError(f"control support {support.to_list()} is not inside "
                           f"ω̃ = {system.omega_tilde.to_list()}")
    return PulledBackControl(control, system, support)


def map_control_forward(control: Callable, system: CanonicalSystem,
                        support: ControlRegion | None = None) -> PushedForwardControl:
    """Inverse of :func:`map_control_back`."""
    support = _support_of(control, support)
    if not system.omega.includes(support, tol=1e-12):
        raise SupportError(f"control support {support.to_list()} is not inside "
                           f"ω = {system.omega.to_list()}")
    return PushedForwardControl(control, system, support)


def map_state_back(z_tilde: Callable, system: CanonicalSystem, t: float = 0.0) -> Callable:
    """z(x) = e^{κt} w(x) z̃(y(x))."""
    factor = system.state_factor(t)
    return lambda x: factor * system.w(x) * z_tilde(system.y_of_x(x))


def map_state_forward(z: Callable, system: CanonicalSystem, t: float = 0.0) -> Callable:
    """z̃(y) = e^{−κt} z(x(y)) / w(x(y))."""
    factor = system.state_factor(t)

    def z_tilde(y):
        x = system.x_of_y(y)
        return z(x) / (factor * system.w(x))

    return z_tilde
