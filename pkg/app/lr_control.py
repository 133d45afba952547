"""Null control of the canonical system by time slicing.

Slice j has cutoff μ_j = 2^j μ₀ and length T 2^{−j−1}: during the first half
the m_j modes with λ_k ≤ μ_j are steered to zero by the minimal-norm control
f = η Σ_k g_k(t) e_k, during the second half everything decays freely.

With mode coefficients z_j (ρ̃-orthonormal basis) the dynamics are

    z′ = −Λ z − B g,     Λ = diag(λ²),  B[j, k] = ∫ η e_j e_k,

and the steering control g(s) = e^{−Λ_L(τ−s)} ξ with (Φ ∘ B_LL) ξ = e^{−Λ_L τ} z_L,
Φ[j, k] = (1 − e^{−(λ_j²+λ_k²)τ}) / (λ_j² + λ_k²), minimizes ∫∫|f|²/η.
Every quantity is closed form, so trajectories are exact per mode.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import cho_factor, cho_solve

from .coefficients import ControlRegion
from .config import settings
from .eigensolver import EigenBasis
from .errors import NumericalRefusal, PreconditionError
from .simulator import Trajectory

logger = logging.getLogger(__name__)

# Steered modes must end every active window below this share of ‖z0‖
STEER_TOL = 1e-8
MAX_SLICES = 60
# g samples per active window in serialized controls
G_SAMPLES = 65


# ── Plan ───────────────────────────────────────────────────


@dataclass(frozen=True)
class Slice:
    index: int
    t_start: float
    active: float
    passive: float
    mu: float
    modes: int | None = None

    @property
    def t_end(self) -> float:
        return self.t_start + self.active + self.passive

    def to_dict(self) -> dict:
        return {"index": self.index, "t_start": self.t_start, "active": self.active,
                "passive": self.passive, "mu": self.mu, "modes": self.modes}


@dataclass
class SlicePlan:
    """Dyadic schedule; ``residual_bound`` is e^{−μ²·passive} of the last slice."""

    slices: list[Slice]
    T: float
    N_max: int
    mu_0: float
    tol: float
    residual_bound: float

    def to_dict(self) -> dict:
        return {"T": self.T, "N_max": self.N_max, "mu_0": self.mu_0, "tol": self.tol,
                "residual_bound": self.residual_bound,
                "slices": [s.to_dict() for s in self.slices]}

    @classmethod
    def from_dict(cls, data: dict) -> SlicePlan:
        return cls(slices=[Slice(**s) for s in data["slices"]], T=data["T"],
                   N_max=data["N_max"], mu_0=data["mu_0"], tol=data["tol"],
                   residual_bound=data["residual_bound"])

    @property
    def resolved(self) -> bool:
        return all(s.modes is not None for s in self.slices)


def _count(lambdas, mu: float, slack: float) -> int:
    return int(np.count_nonzero(np.asarray(lambdas) <= mu * (1.0 + slack)))


def make_plan(T: float, mu_0: float, tol: float, lambdas=None, N_max: int | None = None,
              slices: int | None = None, slack: float | None = None) -> SlicePlan:
    """Geometric slice schedule, stopped once e^{−μ_j²·passive_j} < tol.

    Args:
        lambdas: Eigenvalues used to fill in mode counts (optional).
        slices:  Fixed slice count; the tolerance test is then skipped.

    Raises:
        PreconditionError: T ≤ 0, μ₀ ≤ 0 or μ₀ below λ₁.
        NumericalRefusal: tol not reached before m_j exceeds N_max/2.
    """
    N_max = N_max or settings.N_MAX
    slack = settings.CUTOFF_SLACK if slack is None else slack
    if T <= 0.0:
        raise PreconditionError("T must be positive")
    if mu_0 <= 0.0:
        raise PreconditionError("mu_0 must be positive")
    if lambdas is not None and _count(lambdas, mu_0, slack) == 0:
        raise PreconditionError(f"mu_0 = {mu_0:.6g} is below λ₁ = {lambdas[0]:.6g}")

    plan: list[Slice] = []
    bound = 1.0
    for j in range(MAX_SLICES):
        mu = mu_0 * 2.0 ** j
        length = T * 2.0 ** (-j - 1)
        modes = None
        if lambdas is not None:
            modes = _count(lambdas, mu, slack)
            if 2 * modes > N_max:
                raise NumericalRefusal(
                    f"tol {tol:g} unreachable: slice {j} needs {modes} modes > N_max/2 = {N_max // 2}; "
                    f"achievable a-priori bound {bound:.3e}")
        plan.append(Slice(j, T * (1.0 - 2.0 ** (-j)), length / 2.0, length / 2.0, mu, modes))
        bound = math.exp(-mu * mu * length / 2.0)
        if slices is not None:
            if len(plan) == slices:
                break
        elif bound < tol:
            break
    else:
        raise NumericalRefusal(f"tol {tol:g} not reached in {MAX_SLICES} slices")
    return SlicePlan(slices=plan, T=T, N_max=N_max, mu_0=mu_0, tol=tol, residual_bound=bound)


def resolve_plan(plan: SlicePlan, lambdas, slack: float | None = None) -> SlicePlan:
    """Fill in mode counts from *lambdas*."""
    slack = settings.CUTOFF_SLACK if slack is None else slack
    resolved = []
    for s in plan.slices:
        modes = _count(lambdas, s.mu, slack)
        if 2 * modes > plan.N_max:
            raise NumericalRefusal(f"slice {s.index} needs {modes} modes > N_max/2 = {plan.N_max // 2}")
        resolved.append(Slice(s.index, s.t_start, s.active, s.passive, s.mu, modes))
    return SlicePlan(resolved, plan.T, plan.N_max, plan.mu_0, plan.tol, plan.residual_bound)


# ── Input operator ─────────────────────────────────────────


@dataclass(frozen=True)
class Bump:
    """C¹ piecewise-cubic cutoff: 0 outside (left, right), 1 on the middle half."""

    left: float
    right: float

    @property
    def ramp(self) -> float:
        return (self.right - self.left) / 4.0

    @property
    def kinks(self) -> np.ndarray:
        return np.array([self.left, self.left + self.ramp, self.right - self.ramp, self.right])

    @property
    def support(self) -> ControlRegion:
        return ControlRegion(((self.left, self.right),))

    def _s(self, x):
        x = np.asarray(x, dtype=float)
        t1 = np.clip((x - self.left) / self.ramp, 0.0, 1.0)
        t2 = np.clip((self.right - x) / self.ramp, 0.0, 1.0)
        return np.minimum(t1, t2)

    def __call__(self, x):
        s = self._s(x)
        return s * s * (3.0 - 2.0 * s)

    def derivative(self, x):
        x = np.asarray(x, dtype=float)
        s = self._s(x)
        slope = np.where(x < 0.5 * (self.left + self.right), 1.0, -1.0) / self.ramp
        inside = (s > 0.0) & (s < 1.0)
        return np.where(inside, 6.0 * s * (1.0 - s) * slope, 0.0)


def build_input_operator(basis: EigenBasis, omega_tilde: ControlRegion, m: int, N_max: int,
                         eta=None) -> tuple[np.ndarray, Bump]:
    """B[j, k] = ∫ η e_j e_k for j < N_max, k < m, and the cutoff η.

    η defaults to the bump on the largest interval of ω̃; pass *eta* to
    override it (kinks are then assumed at the interval ends).
    """
    if 2 * m > N_max:
        raise PreconditionError(f"m = {m} exceeds N_max/2 = {N_max // 2}")
    if N_max > basis.m:
        raise PreconditionError(f"N_max = {N_max} exceeds the {basis.m} computed modes")
    if eta is None:
        eta = Bump(*omega_tilde.largest_interval)
    kinks = getattr(eta, "kinks", omega_tilde.endpoints)
    full = basis.mode_gram(weight=eta, count=N_max, extra=kinks)
    return full[:, :m], eta


# ── Steering ───────────────────────────────────────────────


def _phi(a: np.ndarray, b: np.ndarray, tau: float) -> np.ndarray:
    """(1 − e^{−(a_j + b_k)τ}) / (a_j + b_k)."""
    total = a[:, None] + b[None, :]
    return -np.expm1(-total * tau) / total


def gramian(lambdas: np.ndarray, G: np.ndarray, tau: float) -> np.ndarray:
    """∫₀^τ e^{−Λs} G e^{−Λs} ds in closed form."""
    lam2 = np.asarray(lambdas) ** 2
    return _phi(lam2, lam2, tau) * G


def gramian_quadrature(lambdas: np.ndarray, G: np.ndarray, tau: float) -> np.ndarray:
    """Same integral by adaptive vector quadrature."""
    lam2 = np.asarray(lambdas) ** 2
    integrand = lambda s: np.exp(-lam2 * s)[:, None] * G * np.exp(-lam2 * s)[None, :]
    value, _ = quad_vec(integrand, 0.0, tau, epsabs=0.0, epsrel=1e-13)
    return value


@dataclass
class SliceControl:
    """Steering data of one slice: g(t) = e^{−Λ_L(τ − (t − t_start))} ξ on the active window."""

    index: int
    t_start: float
    tau: float
    passive: float
    xi: np.ndarray
    lambdas: np.ndarray
    gramian_cond: float = 0.0
    energy: float = 0.0
    steer_residual: float = 0.0
    leakage_error: float = 0.0

    @property
    def modes(self) -> int:
        return self.xi.size

    def g(self, t) -> np.ndarray:
        """Time coefficients at *t*; zero outside the active window."""
        s = float(t) - self.t_start
        if s < 0.0 or s > self.tau:
            return np.zeros(self.modes)
        return np.exp(-self.lambdas ** 2 * (self.tau - s)) * self.xi

    def forced_response(self, B: np.ndarray, lambdas: np.ndarray, s: float) -> np.ndarray:
        """∫₀^s e^{−Λ(s−u)} B g(u) du for local time s ∈ [0, τ]."""
        lam2 = np.asarray(lambdas) ** 2
        low2 = self.lambdas ** 2
        weight = _phi(lam2, low2, s) * np.exp(-low2 * (self.tau - s))[None, :]
        return (weight * B[:, : self.modes]) @ self.xi

    def to_dict(self) -> dict:
        times = np.linspace(self.t_start, self.t_start + self.tau, G_SAMPLES)
        return {
            "index": self.index, "t_start": self.t_start, "tau": self.tau,
            "passive": self.passive, "xi": self.xi.tolist(), "lambdas": self.lambdas.tolist(),
            "gramian_cond": self.gramian_cond, "energy": self.energy,
            "steer_residual": self.steer_residual, "leakage_error": self.leakage_error,
            "g_times": times.tolist(),
            "g_samples": [self.g(t).tolist() for t in times],
        }

    @classmethod
    def from_dict(cls, data: dict) -> SliceControl:
        return cls(index=data["index"], t_start=data["t_start"], tau=data["tau"],
                   passive=data["passive"], xi=np.asarray(data["xi"], dtype=float),
                   lambdas=np.asarray(data["lambdas"], dtype=float),
                   gramian_cond=data["gramian_cond"], energy=data["energy"],
                   steer_residual=data["steer_residual"], leakage_error=data["leakage_error"])


def steer_slice(state: np.ndarray, slice_: Slice, Bmat: np.ndarray, lambdas: np.ndarray,
                energy_gram: np.ndarray | None = None, reference_norm: float | None = None,
                check_leakage: bool = True) -> tuple[SliceControl, np.ndarray, np.ndarray]:
    """Drive the first m modes of *state* to zero over the active window.

    Args:
        state:   Mode coefficients (length N) at the slice start.
        Bmat:    Input operator, N × m (at least) columns.
        lambdas: λ_1 … λ_N.
        energy_gram: ∫η² e_j e_k over the steered modes, for the energy ∫∫|f|².
        reference_norm: ‖z0‖ for the steering assertion (default ‖state‖).

    Returns:
        (control, state at the end of the active window, state at the slice end).

    Raises:
        NumericalRefusal: Gramian too ill-conditioned, or steered modes not zero.
    """
    m = slice_.modes
    lambdas = np.asarray(lambdas, dtype=float)
    lam2 = lambdas ** 2
    tau = slice_.active
    B = Bmat[:, :m]
    low = lambdas[:m]

    if not np.any(state):
        control = SliceControl(slice_.index, slice_.t_start, tau, slice_.passive, np.zeros(m), low)
        return control, np.zeros_like(state), np.zeros_like(state)

    W = gramian(low, B[:m, :m], tau)
    cond = float(np.linalg.cond(W))
    if cond > settings.GRAMIAN_COND_MAX:
        raise NumericalRefusal(
            f"slice {slice_.index}: steering Gramian condition {cond:.3e} > "
            f"{settings.GRAMIAN_COND_MAX:.0e}; use a longer active window or fewer modes")

    target = np.exp(-lam2[:m] * tau) * state[:m]
    factor = cho_factor(W)
    xi = cho_solve(factor, target)
    xi += cho_solve(factor, target - W @ xi)

    control = SliceControl(slice_.index, slice_.t_start, tau, slice_.passive, xi, low,
                           gramian_cond=cond)
    active_end = np.exp(-lam2 * tau) * state - control.forced_response(B, lambdas, tau)

    reference = reference_norm if reference_norm else float(np.linalg.norm(state))
    control.steer_residual = float(np.linalg.norm(active_end[:m]))
    if control.steer_residual > STEER_TOL * reference:
        raise NumericalRefusal(
            f"slice {slice_.index}: steered modes left at {control.steer_residual:.3e} "
            f"(> {STEER_TOL:g}·‖z0‖)")

    if energy_gram is not None:
        control.energy = float(xi @ ((_phi(lam2[:m], lam2[:m], tau) * energy_gram[:m, :m]) @ xi))

    if check_leakage and B.shape[0] > m:
        high2 = lam2[m:]
        integrand = lambda s: np.exp(-high2 * (tau - s)) * (B[m:] @ (np.exp(-low ** 2 * (tau - s)) * xi))
        numeric, _ = quad_vec(integrand, 0.0, tau, epsabs=0.0, epsrel=1e-10)
        closed = control.forced_response(B, lambdas, tau)[m:]
        scale = max(float(np.linalg.norm(closed)), 1e-300)
        control.leakage_error = float(np.linalg.norm(numeric - closed) / scale)

    end = np.exp(-lam2 * slice_.passive) * active_end
    return control, active_end, end


# ── Synthesis ──────────────────────────────────────────────


class ControlField:
    """Canonical control f̃(y, t) = η(y) Σ_k g_k(t) e_k(y), one term set per slice."""

    def __init__(self, plan: SlicePlan, slices: list[SliceControl], basis: EigenBasis, eta: Bump):
        self.plan = plan
        self.slices = slices
        self.basis = basis
        self.eta = eta

    @property
    def support(self) -> ControlRegion:
        return self.eta.support

    @property
    def energy(self) -> float:
        return float(sum(s.energy for s in self.slices))

    def active_slice(self, t: float) -> SliceControl | None:
        for s in self.slices:
            if s.t_start <= t <= s.t_start + s.tau:
                return s
        return None

    def __call__(self, y, t: float) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        s = self.active_slice(float(t))
        if s is None:
            return np.zeros(y.shape)
        shapes = self.basis.values_at(y.ravel(), s.modes)
        return (self.eta(y.ravel()) * (s.g(t) @ shapes)).reshape(y.shape)

    def raster(self, y: np.ndarray, times: np.ndarray) -> np.ndarray:
        return np.stack([self(y, t) for t in times])

    def write_csv(self, path, y: np.ndarray, times: np.ndarray) -> None:
        """Dense raster: one row per time, first column t, one column per y."""
        values = self.raster(y, times)
        header = "t," + ",".join(repr(float(v)) for v in y)
        np.savetxt(path, np.column_stack((times, values)), delimiter=",", fmt="%.17g",
                   header=header, comments="")

    def to_dict(self) -> dict:
        return {"plan": self.plan.to_dict(), "eta": [self.eta.left, self.eta.right],
                "slices": [s.to_dict() for s in self.slices]}

    @classmethod
    def from_dict(cls, data: dict, basis: EigenBasis) -> ControlField:
        return cls(SlicePlan.from_dict(data["plan"]),
                   [SliceControl.from_dict(s) for s in data["slices"]],
                   basis, Bump(*data["eta"]))


@dataclass
class SynthesisResult:
    control: ControlField
    trajectory: Trajectory
    final_norm: float
    initial_norm: float
    tail_bound: float
    energies: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "final_norm": self.final_norm, "initial_norm": self.initial_norm,
            "relative_final_norm": self.final_norm / self.initial_norm if self.initial_norm else 0.0,
            "tail_bound": self.tail_bound, "energies": self.energies,
            "total_energy": float(sum(self.energies)),
            "gramian_conds": [s.gramian_cond for s in self.control.slices],
            "steer_residuals": [s.steer_residual for s in self.control.slices],
            "leakage_errors": [s.leakage_error for s in self.control.slices],
        }


def tail_bound(basis: EigenBasis, z0_norm: float, N_max: int, T: float) -> float:
    """K̃ ‖z0‖ e^{−λ_N² T/2}: size of what the truncation to N_max modes neglects."""
    return basis.K_tilde * z0_norm * math.exp(-basis.lambdas[N_max - 1] ** 2 * T / 2.0)


def synthesize(z0, plan: SlicePlan, basis: EigenBasis, omega_tilde: ControlRegion,
               check_leakage: bool = True) -> SynthesisResult:
    """Chain steer_slice over the plan, then decay freely to T.

    Args:
        z0: Mode coefficients (padded with zeros to N_max).

    Raises:
        NumericalRefusal: a slice refuses, or ‖z(T)‖ > tol·‖z0‖.
    """
    start = time.time()
    N = plan.N_max
    z0 = np.asarray(z0, dtype=float)
    if z0.size > N:
        raise PreconditionError(f"z0 has {z0.size} coefficients but N_max = {N}")
    state = np.zeros(N)
    state[: z0.size] = z0
    if not plan.resolved:
        plan = resolve_plan(plan, basis.lambdas)
    m_max = max(s.modes for s in plan.slices)
    lambdas = basis.lambdas[:N]

    B, eta = build_input_operator(basis, omega_tilde, m_max, N)
    energy_gram = basis.mode_gram(weight=lambda x: eta(x) ** 2, count=m_max, extra=eta.kinks)
    norm0 = float(np.linalg.norm(state))

    times, states = [0.0], [state.copy()]
    controls: list[SliceControl] = []
    for s in plan.slices:
        control, active_end, state = steer_slice(
            state, s, B, lambdas, energy_gram=energy_gram, reference_norm=norm0,
            check_leakage=check_leakage)
        controls.append(control)
        times += [s.t_start + s.active, s.t_end]
        states += [active_end, state.copy()]
        logger.info("[lr] slice %d: μ=%.4g m=%d cond=%.3e energy=%.4g",
                    s.index, s.mu, s.modes, control.gramian_cond, control.energy)

    last = plan.slices[-1].t_end
    if plan.T > last:
        state = np.exp(-lambdas ** 2 * (plan.T - last)) * state
        times.append(plan.T)
        states.append(state.copy())

    final = float(np.linalg.norm(state))
    field_ = ControlField(plan, controls, basis, eta)
    trajectory = Trajectory.from_modes(np.array(times), np.array(states))
    result = SynthesisResult(
        control=field_, trajectory=trajectory, final_norm=final, initial_norm=norm0,
        tail_bound=tail_bound(basis, norm0, N, plan.T) if norm0 else 0.0,
        energies=[c.energy for c in controls],
    )
    if final > plan.tol * norm0:
        raise NumericalRefusal(f"final norm {final:.3e} exceeds tol·‖z0‖ = {plan.tol * norm0:.3e}")
    logger.info("[lr] %d slices, ‖z(T)‖/‖z0‖ = %.3e (%.2fs)",
                len(controls), final / norm0 if norm0 else 0.0, time.time() - start)
    return result
