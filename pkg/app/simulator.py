"""Forward simulation of the canonical and the original systems.

``spectral_simulate`` advances mode coefficients of the canonical system
exactly (exponential integrator); ``crank_nicolson_simulate`` solves the
original equation ∂ₓ(a∂ₓz) + b∂ₓz + cz − ρ∂ₜz = fχ_ω with P1 elements and
the implicit midpoint rule; ``cross_validate`` maps the first onto the
second through the reduction.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import quad_vec
from scipy.sparse import diags
from scipy.sparse.linalg import factorized

from .coefficients import ControlRegion, ProblemSpec, gauss_rule
from .config import settings
from .errors import NumericalRefusal, PreconditionError

logger = logging.getLogger(__name__)

# Relative slack of the per-step energy assertion
ENERGY_TOL = 1e-12


@dataclass
class Trajectory:
    """States at ascending times; ``kind`` is "modal" or "nodal".

    Norms are ρ-weighted L² norms: the ℓ² norm of ρ-orthonormal mode
    coefficients, or √(zᵀMz) with the ρ-mass matrix M for nodal states.
    """

    times: np.ndarray
    states: np.ndarray
    norms: np.ndarray
    kind: str = "modal"
    nodes: np.ndarray | None = None
    mass: object = field(default=None, repr=False)

    @classmethod
    def from_modes(cls, times, states) -> Trajectory:
        states = np.asarray(states, dtype=float)
        return cls(np.asarray(times, dtype=float), states, np.linalg.norm(states, axis=1))

    @property
    def final_norm(self) -> float:
        return float(self.norms[-1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "times": self.times.tolist(), "norms": self.norms.tolist()}

    def write_csv(self, path) -> None:
        """Columns t, norm."""
        np.savetxt(path, np.column_stack((self.times, self.norms)), delimiter=",",
                   fmt="%.17g", header="t,norm", comments="")

    def write_snapshots(self, path) -> None:
        """Nodal states: column x, then one column per recorded time."""
        if self.kind != "nodal":
            raise PreconditionError("snapshots need a nodal trajectory")
        header = "x," + ",".join(f"t={float(t)!r}" for t in self.times)
        np.savetxt(path, np.column_stack((self.nodes, self.states.T)), delimiter=",",
                   fmt="%.17g", header=header, comments="")


# ── Spectral (canonical) ───────────────────────────────────


def initial_coefficients(basis, z0, N: int) -> tuple[np.ndarray, float]:
    """Mode coefficients of z0 (callable or coefficient vector) and the
    ρ-norm of the part beyond N modes."""
    if callable(z0):
        coeffs = basis.project(z0, N)
        rest = basis.norm2(z0) - float(coeffs @ coeffs)
        return coeffs, math.sqrt(max(rest, 0.0))
    z0 = np.asarray(z0, dtype=float)
    if z0.size > N:
        raise PreconditionError(f"z0 has {z0.size} coefficients but N_max = {N}")
    coeffs = np.zeros(N)
    coeffs[: z0.size] = z0
    return coeffs, 0.0


def _checkpoints(control, B: np.ndarray, z0: np.ndarray, lambdas: np.ndarray) -> list[tuple]:
    """(slice, state at slice start, state at active end) for every slice."""
    lam2 = lambdas ** 2
    state, t = z0, 0.0
    marks = []
    for s in control.slices:
        start = np.exp(-lam2 * (s.t_start - t)) * state
        active_end = np.exp(-lam2 * s.tau) * start - s.forced_response(B, lambdas, s.tau)
        marks.append((s, start, active_end))
        state, t = active_end, s.t_start + s.tau
    return marks


def _state_at(t: float, marks, z0: np.ndarray, lam2: np.ndarray, B, lambdas) -> np.ndarray:
    state, t_ref = z0, 0.0
    for s, start, active_end in marks:
        if t < s.t_start:
            break
        if t <= s.t_start + s.tau:
            local = t - s.t_start
            return np.exp(-lam2 * local) * start - s.forced_response(B, lambdas, local)
        state, t_ref = active_end, s.t_start + s.tau
    return np.exp(-lam2 * (t - t_ref)) * state


def spectral_simulate(canonical, basis, z0, control=None, times=None,
                      N_max: int | None = None, T: float | None = None) -> Trajectory:
    """Exact per-mode evolution of the canonical system.

    Args:
        canonical: The CanonicalSystem (ρ̃ lives in *basis*; kept for the record).
        z0:        Coefficient vector or callable z̃0(y).
        control:   None, a ControlField (closed-form forcing) or any callable
                   f̃(y, t) (forcing integrated with adaptive quadrature).
        times:     Output times (default 101 points on [0, T]).
    """
    start = time.time()
    plan = getattr(control, "plan", None)
    N = N_max or (plan.N_max if plan is not None else settings.N_MAX)
    if N > basis.m:
        raise PreconditionError(f"N_max = {N} exceeds the {basis.m} computed modes")
    lambdas = basis.lambdas[:N]
    lam2 = lambdas ** 2
    coeffs, residual = initial_coefficients(basis, z0, N)
    if residual > 0.0:
        logger.info("[simulate] z0 beyond %d modes: ρ-norm %.3e", N, residual)

    if T is None:
        T = plan.T if plan is not None else 1.0
    times = np.linspace(0.0, T, 101) if times is None else np.asarray(times, dtype=float)

    if control is None:
        states = np.exp(-np.outer(times, lam2)) * coeffs
    elif hasattr(control, "slices"):
        from .lr_control import build_input_operator

        m_max = max(s.modes for s in control.slices)
        B, _ = build_input_operator(basis, control.support, m_max, N, eta=control.eta)
        marks = _checkpoints(control, B, coeffs, lambdas)
        states = np.stack([_state_at(float(t), marks, coeffs, lam2, B, lambdas) for t in times])
    else:
        states = _integrate_forcing(basis, control, coeffs, lambdas, times)

    trajectory = Trajectory.from_modes(times, states)
    logger.info("[simulate] spectral: %d modes, ‖z(T)‖=%.3e (%.2fs)",
                N, trajectory.final_norm, time.time() - start)
    return trajectory


def _integrate_forcing(basis, control: Callable, coeffs, lambdas, times) -> np.ndarray:
    lam2 = lambdas ** 2
    N = lambdas.size
    rho = basis.rho

    def forcing(s):
        # ∫ f̃ e_j dy as a ρ-weighted projection of f̃/ρ̃
        return basis.project(lambda y: control(y, s) / rho(y), N)

    states = [coeffs]
    state, t_prev = coeffs, 0.0
    for t in times[1:] if times[0] == 0.0 else times:
        integrand = lambda s, t=t: np.exp(-lam2 * (t - s)) * forcing(s)
        forced, _ = quad_vec(integrand, t_prev, t, epsabs=1e-13, epsrel=1e-10)
        state = np.exp(-lam2 * (t - t_prev)) * state - forced
        states.append(state)
        t_prev = t
    if times[0] != 0.0:
        states = states[1:]
    return np.stack(states)


# ── Crank–Nicolson (original coordinates) ──────────────────


@dataclass
class FemSystem:
    """P1 matrices on the full node set; ``operator`` is −A + N_b + C."""

    nodes: np.ndarray
    mass: object
    operator: object
    control_mass: object


def assemble_original(spec: ProblemSpec, nodes: np.ndarray, omega: ControlRegion | None = None) -> FemSystem:
    """Assemble mass, operator and the χ_ω mass on *nodes*.

    *nodes* must contain every coefficient breakpoint, so a, b, c, ρ are
    constant on each cell.  The b-term is split into its skew part and the
    jump term −½[b] at breakpoints.
    """
    h = np.diff(nodes)
    a = spec.a.on_cells(nodes)
    b = spec.b.on_cells(nodes)
    c = spec.c.on_cells(nodes)
    rho = spec.rho.on_cells(nodes)
    size = nodes.size

    def tri(local_diag_l, local_diag_r, local_off):
        diag = np.zeros(size)
        diag[:-1] += local_diag_l
        diag[1:] += local_diag_r
        return diag, local_off

    m_diag, m_off = tri(rho * h / 3.0, rho * h / 3.0, rho * h / 6.0)
    a_diag, a_off = tri(a / h, a / h, -a / h)
    c_diag, c_off = tri(c * h / 3.0, c * h / 3.0, c * h / 6.0)

    # skew part of ∫ b φ_j′ φ_i: +b/2 above the diagonal, −b/2 below
    skew_upper = b / 2.0
    jump = np.zeros(size)
    for x, db in spec.b.jumps():
        jump[int(np.argmin(np.abs(nodes - x)))] += db

    mass = diags([m_off, m_diag, m_off], [-1, 0, 1], format="csr")
    operator = diags(
        [-a_off + c_off - skew_upper, -a_diag + c_diag - 0.5 * jump, -a_off + c_off + skew_upper],
        [-1, 0, 1], format="csr")

    omega = omega or spec.omega
    edges = np.unique(np.concatenate((nodes, omega.endpoints)))
    gx, gw = gauss_rule()
    widths = np.diff(edges)
    pts = (edges[:-1, None] + widths[:, None] * gx[None, :]).ravel()
    wts = (widths[:, None] * gw[None, :]).ravel() * omega.contains(pts)
    cell = np.clip(np.searchsorted(nodes, pts, side="right") - 1, 0, size - 2)
    s = (pts - nodes[cell]) / h[cell]
    w_diag = (np.bincount(cell, wts * (1 - s) ** 2, minlength=size)
              + np.bincount(cell + 1, wts * s ** 2, minlength=size))
    w_off = np.bincount(cell, wts * s * (1 - s), minlength=size - 1)
    control_mass = diags([w_off, w_diag, w_off], [-1, 0, 1], format="csr")
    return FemSystem(nodes=nodes, mass=mass, operator=operator, control_mass=control_mass)


def crank_nicolson_simulate(spec: ProblemSpec, control: Callable | None = None,
                            n: int | None = None, dt: float | None = None,
                            record_times=None, rannacher: bool = True,
                            T: float | None = None) -> Trajectory:
    """Implicit-midpoint P1 simulation of the original system.

    Args:
        control:  f(x, t) in original coordinates (applied on ω), or None.
        n:        Uniform cells; every coefficient breakpoint is added as a node.
        rannacher: Replace the first step by two backward-Euler half steps.
        record_times: Times to record (snapped to steps; default 101 points).

    Raises:
        PreconditionError: dt ≤ 0.
        NumericalRefusal: energy grows although the system is dissipative.
    """
    from .reduction import reduction_grid

    start = time.time()
    n = n or settings.SIM_MESH_N
    dt = dt or settings.DT
    T = T or spec.T
    if dt <= 0.0:
        raise PreconditionError("dt must be positive")
    steps = max(1, int(round(T / dt)))
    dt = T / steps

    nodes = reduction_grid(spec.a, spec.b, spec.c, spec.rho, n=n)
    fem = assemble_original(spec, nodes)
    inner = slice(1, -1)
    M = fem.mass[inner, inner].tocsc()
    L = fem.operator[inner, inner].tocsc()
    solve = factorized((M - 0.5 * dt * L).tocsc())
    explicit = (M + 0.5 * dt * L).tocsr()

    def load(t):
        if control is None:
            return 0.0
        return (fem.control_mass @ np.asarray(control(nodes, t), dtype=float))[inner]

    record_times = np.linspace(0.0, T, 101) if record_times is None else np.asarray(record_times, dtype=float)
    record_steps = {int(round(t / dt)): t for t in record_times}

    z = np.asarray(spec.z0(nodes), dtype=float)[inner].copy()
    dissipative = (control is None and np.all(spec.c.values <= 0.0)
                   and all(db >= 0.0 for _, db in spec.b.jumps()))

    times, states, norms = [], [], []
    energy = float(z @ (M @ z))

    def record(k):
        full = np.zeros(nodes.size)
        full[inner] = z
        times.append(k * dt)
        states.append(full)
        norms.append(math.sqrt(max(float(z @ (M @ z)), 0.0)))

    if 0 in record_steps:
        record(0)
    for k in range(1, steps + 1):
        t0, t1 = (k - 1) * dt, k * dt
        if k == 1 and rannacher:
            half = solve(M @ z - 0.5 * dt * load(t0 + 0.5 * dt))
            z = solve(M @ half - 0.5 * dt * load(t1))
        else:
            z = solve(explicit @ z - 0.5 * dt * (load(t0) + load(t1)))
        new_energy = float(z @ (M @ z))
        if dissipative and new_energy > energy * (1.0 + ENERGY_TOL) + 1e-300:
            raise NumericalRefusal(f"energy grew at step {k} ({energy:.6e} → {new_energy:.6e})")
        energy = new_energy
        if k in record_steps:
            record(k)

    trajectory = Trajectory(np.array(times), np.array(states), np.array(norms),
                            kind="nodal", nodes=nodes, mass=fem.mass)
    logger.info("[simulate] Crank–Nicolson: n=%d, dt=%.3g, ‖z(T)‖=%.3e (%.2fs)",
                nodes.size - 1, dt, trajectory.final_norm, time.time() - start)
    return trajectory


# ── Cross validation ───────────────────────────────────────


@dataclass
class CrossValidation:
    times: np.ndarray
    discrepancies: np.ndarray
    initial_norm: float
    spectral_final_norm: float
    fem_final_norm: float

    @property
    def max_discrepancy(self) -> float:
        return float(self.discrepancies.max())

    @property
    def relative_discrepancy(self) -> float:
        return self.max_discrepancy / self.initial_norm if self.initial_norm else 0.0

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "discrepancies": self.discrepancies.tolist(),
                "max_discrepancy": self.max_discrepancy,
                "relative_discrepancy": self.relative_discrepancy,
                "initial_norm": self.initial_norm,
                "spectral_final_norm": self.spectral_final_norm,
                "fem_final_norm": self.fem_final_norm}


def cross_validate(spec: ProblemSpec, canonical, basis, z0=None, control=None,
                   n: int | None = None, dt: float | None = None, times=None,
                   N_max: int | None = None) -> CrossValidation:
    """Sup over sample times of the ρ-weighted L² gap between both simulations.

    The canonical trajectory is mapped back with z = e^{κt} w · z̃∘y; a
    canonical *control* is pulled back with map_control_back.  t = 0 is
    excluded from the default sample times (the modal truncation of z0 is
    not a simulation error).
    """
    from .reduction import map_control_back, map_state_back, map_state_forward

    z0 = spec.z0 if z0 is None else z0
    times = np.linspace(0.0, spec.T, 11)[1:] if times is None else np.asarray(times, dtype=float)
    original_control = map_control_back(control, canonical) if control is not None else None

    spectral = spectral_simulate(canonical, basis, map_state_forward(z0, canonical), control,
                                 times=times, N_max=N_max, T=spec.T)
    fem = crank_nicolson_simulate(spec, original_control, n=n, dt=dt, record_times=times)
    if fem.times.size != times.size:
        raise PreconditionError("sample times must be multiples of dt")

    nodes = fem.nodes
    gaps = []
    for t, coeffs, nodal in zip(times, spectral.states, fem.states):
        mapped = map_state_back(lambda y, c=coeffs: basis.synthesize(c, y), canonical, float(t))(nodes)
        d = mapped - nodal
        gaps.append(math.sqrt(max(float(d @ (fem.mass @ d)), 0.0)))

    initial = math.sqrt(max(float(z0(nodes) @ (fem.mass @ z0(nodes))), 0.0))
    report = CrossValidation(times=times, discrepancies=np.array(gaps), initial_norm=initial,
                             spectral_final_norm=spectral.final_norm,
                             fem_final_norm=fem.final_norm)
    logger.info("[simulate] cross-validation: max gap %.3e (relative %.3e)",
                report.max_discrepancy, report.relative_discrepancy)
    return report
