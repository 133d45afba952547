"""Harmonic lift of eigenfunction sums and growth measurements.

For coefficients a_k over modes λ_k ≤ μ the lift

    u(x, y) = Σ a_k e_k(x) cosh(λ_k y)
    v(x, y) = Σ a_k e_k′(x) sinh(λ_k y) / λ_k

solves ∂ₓ(∂ₓu) + ∂_y(ρ∂_y u) = 0 with stream function v (∂ₓv = −ρ∂_y u,
∂_y v = ∂ₓu).  Here e_k is the odd period-2 extension and ρ the even one,
so u lives on the whole strip.  Sup norms over Euclidean balls centred in
ω give the doubling, three-ball and Cauchy-data measurements.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .coefficients import ControlRegion, gauss_rule
from .config import settings
from .eigensolver import EigenBasis, extended_rho, extended_slopes, extended_values
from .errors import NumericalRefusal, PreconditionError

logger = logging.getLogger(__name__)

RING_COUNT = 12
RING_POINTS = 96
# Exponent bounds of the Cauchy-data fit
THETA_EPS = 1e-3


@dataclass(frozen=True)
class LiftGrid:
    """Tensor grid on [c − W, c + W] × [−Y, Y]; ny is forced odd so y = 0 is a row."""

    center: float
    nx: int
    ny: int
    half_width: float = 1.0
    height: float = 1.0

    @classmethod
    def around(cls, omega: ControlRegion, n: int | None = None, height: float = 1.0) -> LiftGrid:
        n = n or settings.LIFT_GRID_N
        return cls(omega.center, n, n, 1.0, height)

    @property
    def xs(self) -> np.ndarray:
        return np.linspace(self.center - self.half_width, self.center + self.half_width, self.nx)

    @property
    def ys(self) -> np.ndarray:
        half = np.linspace(0.0, self.height, self.ny // 2 + 1)
        return np.concatenate((-half[:0:-1], half))

    @property
    def hx(self) -> float:
        return 2.0 * self.half_width / (self.nx - 1)

    @property
    def hy(self) -> float:
        return self.height / (self.ny // 2)


@dataclass(eq=False)
class LiftField:
    """u and v sampled on a LiftGrid; rows are y, columns are x."""

    grid: LiftGrid
    u: np.ndarray
    v: np.ndarray
    mu: float
    coeffs: np.ndarray
    basis: EigenBasis

    @property
    def count(self) -> int:
        return self.coeffs.size


def _check_coeffs(basis: EigenBasis, coeffs, mu: float) -> np.ndarray:
    coeffs = np.atleast_1d(np.asarray(coeffs, dtype=float))
    if coeffs.size > basis.m:
        raise PreconditionError(f"{coeffs.size} coefficients but only {basis.m} modes")
    allowed = basis.count_below(mu)
    above = np.flatnonzero(coeffs[allowed:])
    if above.size:
        k = allowed + above[0]
        raise PreconditionError(
            f"coefficient of mode {k + 1} has λ = {basis.lambdas[k]:.6g} above μ = {mu:.6g}")
    return coeffs[:allowed]


def lift_values(basis: EigenBasis, coeffs: np.ndarray, x, y) -> tuple[np.ndarray, np.ndarray]:
    """u and v at matching point arrays *x*, *y*."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = coeffs.size
    if n == 0:
        return np.zeros(x.shape), np.zeros(x.shape)
    lam = basis.lambdas[:n, None]
    vals = extended_values(basis, x.ravel(), n)
    slopes = extended_slopes(basis, x.ravel(), n)
    ly = lam * y.ravel()[None, :]
    u = coeffs @ (vals * np.cosh(ly))
    v = coeffs @ (slopes * np.sinh(ly) / lam)
    return u.reshape(x.shape), v.reshape(x.shape)


def eval_lift(basis: EigenBasis, coeffs, mu: float, grid: LiftGrid) -> LiftField:
    """Sample u and v on *grid*.

    Raises:
        PreconditionError: a nonzero coefficient belongs to a mode above μ.
    """
    coeffs = _check_coeffs(basis, coeffs, mu)
    n = coeffs.size
    xs, ys = grid.xs, grid.ys
    if n == 0:
        zero = np.zeros((ys.size, xs.size))
        return LiftField(grid, zero, zero.copy(), mu, coeffs, basis)
    lam = basis.lambdas[:n]
    vals = extended_values(basis, xs, n)
    slopes = extended_slopes(basis, xs, n)
    ly = np.outer(ys, lam)
    u = (np.cosh(ly) * coeffs) @ vals
    v = (np.sinh(ly) / lam * coeffs) @ slopes

    scale = max(np.abs(u).max(), np.abs(v).max(), 1e-300)
    if np.abs(u - u[::-1]).max() > 1e-12 * scale or np.abs(v + v[::-1]).max() > 1e-12 * scale:
        raise NumericalRefusal("lift lost its parity in y")
    return LiftField(grid, u, v, mu, coeffs, basis)


# ── Residuals ──────────────────────────────────────────────


def _extended_breaks(rho, lo: float, hi: float) -> np.ndarray:
    """Nodes of the even period-2 extension of ρ inside (lo, hi)."""
    nodes = rho.segments()[0]
    shifts = 2.0 * np.arange(math.floor((lo - 1.0) / 2.0), math.ceil((hi + 1.0) / 2.0) + 1)
    pts = np.concatenate([s + nodes for s in shifts] + [s - nodes for s in shifts])
    return np.unique(pts[(pts > lo) & (pts < hi)])


def _gauss_on(edges: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx, gw = gauss_rule()
    widths = np.diff(edges)
    points = (edges[:-1, None] + widths[:, None] * gx[None, :]).ravel()
    return points, (widths[:, None] * gw[None, :]).ravel()


def _hat_galerkin_residual(basis: EigenBasis, n: int, center: float, half: float) -> np.ndarray:
    """∫e_k′φ′ − λ_k²∫ρe_kφ for a hat φ whose kinks sit on mesh nodes."""
    h = basis.mesh.h
    i_lo, i_hi = round((center - half) / h), round((center + half) / h)
    nodes = np.arange(i_lo, i_hi + 1) * h
    vals = extended_values(basis, nodes, n)
    mids = 0.5 * (nodes[1:] + nodes[:-1])
    dphi = np.where(mids < center, 1.0, -1.0) / half
    stiffness = np.diff(vals, axis=1) @ dphi

    edges = np.unique(np.concatenate((nodes, _extended_breaks(basis.rho, nodes[0], nodes[-1]))))
    pts, wts = _gauss_on(edges)
    hat = np.maximum(0.0, 1.0 - np.abs(pts - center) / half)
    mass = extended_values(basis, pts, n) @ (wts * extended_rho(basis.rho, pts) * hat)
    return stiffness - basis.lambdas[:n] ** 2 * mass


def weak_residual(field: LiftField, hats: int = 5, width: float = 0.1) -> float:
    """Normalized weak residual of ∂ₓ(∂ₓu) + ∂_y(ρ∂_y u) = 0.

    Test functions are tensor hats φ(x)ψ(y) on a hats × hats lattice inside
    the grid; the result is max |∫∫ ∂ₓu ∂ₓ(φψ) + ρ ∂_y u ∂_y(φψ)| divided by
    ‖u‖_∞ ‖∇(φψ)‖₂.  The x-integrals are exact for the discrete modes and
    the y-integrals closed form.
    """
    basis, coeffs, grid = field.basis, field.coeffs, field.grid
    scale = float(np.abs(field.u).max())
    if coeffs.size == 0 or scale == 0.0:
        return 0.0
    n = coeffs.size
    lam = basis.lambdas[:n]
    h = basis.mesh.h
    hx = max(1, round(width * grid.half_width / h)) * h
    hy = width * grid.height

    reach = grid.half_width - hx
    centers_x = np.round(np.linspace(grid.center - 0.8 * reach, grid.center + 0.8 * reach, hats) / h) * h
    centers_y = np.linspace(-0.8, 0.8, hats) * (grid.height - hy)

    x_part = np.stack([_hat_galerkin_residual(basis, n, xc, hx) for xc in centers_x])
    # ∫cosh(λy)ψ(y)dy for the hat ψ of half-width hy
    y_part = np.stack([
        (np.cosh(lam * (yc + hy)) + np.cosh(lam * (yc - hy)) - 2.0 * np.cosh(lam * yc)) / (lam ** 2 * hy)
        for yc in centers_y])
    residual = (x_part * coeffs) @ y_part.T

    grad_norm = math.sqrt((2.0 / hx) * (2.0 * hy / 3.0) + (2.0 * hx / 3.0) * (2.0 / hy))
    return float(np.abs(residual).max() / (scale * grad_norm))


def _cell_average_rho(rho, xs: np.ndarray) -> np.ndarray:
    edges = np.unique(np.concatenate((xs, _extended_breaks(rho, xs[0], xs[-1]))))
    pts, wts = _gauss_on(edges)
    cell = np.clip(np.searchsorted(xs, pts, side="right") - 1, 0, xs.size - 2)
    totals = np.bincount(cell, wts * extended_rho(rho, pts), minlength=xs.size - 1)
    return totals / np.diff(xs)


def stream_residual(field: LiftField) -> dict[str, float]:
    """Finite-difference residuals of the stream relations on the grid.

    ``system``:   ∂ₓv + ρ∂_y u and ∂_y v − ∂ₓu at cell centres, over max|∇u|.
    ``elliptic``: ∂ₓ(ρ⁻¹∂ₓv) + ∂_y²v at interior nodes, over max|∂_y²v|.
    Both are O(h) near jumps of ρ and O(h²) elsewhere.
    """
    u, v, grid = field.u, field.v, field.grid
    if not np.any(u) and not np.any(v):
        return {"system": 0.0, "elliptic": 0.0}
    hx, hy = grid.hx, grid.hy
    rho_bar = _cell_average_rho(field.basis.rho, grid.xs)

    ux = (u[:-1, 1:] + u[1:, 1:] - u[:-1, :-1] - u[1:, :-1]) / (2.0 * hx)
    uy = (u[1:, :-1] + u[1:, 1:] - u[:-1, :-1] - u[:-1, 1:]) / (2.0 * hy)
    vx = (v[:-1, 1:] + v[1:, 1:] - v[:-1, :-1] - v[1:, :-1]) / (2.0 * hx)
    vy = (v[1:, :-1] + v[1:, 1:] - v[:-1, :-1] - v[:-1, 1:]) / (2.0 * hy)
    r1 = vx + rho_bar[None, :] * uy
    r2 = vy - ux
    grad = max(np.abs(ux).max(), (np.abs(uy) * rho_bar[None, :]).max(), 1e-300)

    flux = (v[:, 1:] - v[:, :-1]) / (hx * rho_bar[None, :])
    div = (flux[:, 1:] - flux[:, :-1]) / hx
    vyy = (v[2:, :] - 2.0 * v[1:-1, :] + v[:-2, :]) / hy ** 2
    elliptic = div[1:-1, :] + vyy[:, 1:-1]
    curv = max(np.abs(vyy).max(), 1e-300)
    return {
        "system": float(max(np.abs(r1).max(), np.abs(r2).max()) / grad),
        "elliptic": float(np.abs(elliptic).max() / curv),
    }


# ── Ball norms ─────────────────────────────────────────────


def ball_sup(basis: EigenBasis, coeffs: np.ndarray, center: float, radius: float) -> float:
    """max |u| over concentric sample circles of the ball B_radius((center, 0))."""
    radii = radius * np.arange(1, RING_COUNT + 1) / RING_COUNT
    angles = 2.0 * math.pi * np.arange(RING_POINTS) / RING_POINTS
    x = np.concatenate(([center], (center + np.outer(radii, np.cos(angles))).ravel()))
    y = np.concatenate(([0.0], np.outer(radii, np.sin(angles)).ravel()))
    u, _ = lift_values(basis, coeffs, x, y)
    return float(np.abs(u).max())


def ball_profile(basis: EigenBasis, coeffs: np.ndarray, center: float, radii) -> np.ndarray:
    """m(r) for ascending *radii*: sup over the sample points of every smaller ball too."""
    raw = np.array([ball_sup(basis, coeffs, center, r) for r in radii])
    return np.maximum.accumulate(raw)


def trace_norm(basis: EigenBasis, coeffs: np.ndarray, center: float, radius: float) -> float:
    """‖u(·, 0)‖ in L²(center − radius, center + radius)."""
    n = coeffs.size
    if n == 0:
        return 0.0
    h = basis.mesh.h
    lo, hi = center - radius, center + radius
    nodes = np.arange(math.ceil(lo / h), math.floor(hi / h) + 1) * h
    edges = np.unique(np.concatenate(([lo, hi], nodes)))
    pts, wts = _gauss_on(edges)
    vals = coeffs @ extended_values(basis, pts, n)
    return float(math.sqrt(np.sum(wts * vals ** 2)))


def _linear_fit(x, y) -> dict | None:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size < 2:
        return None
    design = np.column_stack((np.ones_like(x), x))
    (intercept, slope), *_ = np.linalg.lstsq(design, y, rcond=None)
    residuals = y - (intercept + slope * x)
    return {"slope": float(slope), "intercept": float(intercept),
            "max_residual": float(max(residuals.max(), 0.0))}


def random_coefficients(rng: np.random.Generator, count: int) -> np.ndarray:
    """Gaussian coefficients normalized to Σa_k² = 1."""
    a = rng.standard_normal(count)
    return a / np.linalg.norm(a)


# ── Growth report ──────────────────────────────────────────


def radius_ladder(delta: float) -> np.ndarray:
    """Dyadic radii 2^{−j} down to δ/2, with δ/2 itself included, ascending."""
    radii = [1.0]
    while radii[-1] / 2.0 > delta / 2.0:
        radii.append(radii[-1] / 2.0)
    radii.append(delta / 2.0)
    return np.unique(radii)


@dataclass
class GrowthReport:
    """Doubling, three-ball, convexity and boundary-observability data."""

    center: float
    delta: float
    radii: np.ndarray
    rows: list[dict] = field(default_factory=list)
    doubling_log_ratio: dict[float, float] = field(default_factory=dict)
    doubling_fit: dict | None = None
    boundary_log_ratio: dict[float, float] = field(default_factory=dict)
    boundary_fit: dict | None = None
    three_ball_max: float = 0.0
    doubling_max: float = 0.0
    convexity_min: float = math.inf
    convexity_violations: int = 0
    skipped: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "center": self.center, "delta": self.delta, "radii": self.radii.tolist(),
            "doubling_log_ratio": {repr(k): v for k, v in self.doubling_log_ratio.items()},
            "doubling_fit": self.doubling_fit,
            "boundary_log_ratio": {repr(k): v for k, v in self.boundary_log_ratio.items()},
            "boundary_fit": self.boundary_fit,
            "three_ball_max": self.three_ball_max,
            "doubling_max": self.doubling_max,
            "convexity_min": None if math.isinf(self.convexity_min) else self.convexity_min,
            "convexity_violations": self.convexity_violations,
            "skipped": self.skipped,
        }

    def write_csv(self, path) -> None:
        """Columns mu, trial, r, sup_norm, trace_norm."""
        lines = ["mu,trial,r,sup_norm,trace_norm"]
        for row in self.rows:
            lines.append(f"{row['mu']!r},{row['trial']},{row['r']!r},"
                         f"{row['sup_norm']!r},{row['trace_norm']!r}")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")


def _trial_profile(basis, coeffs, center, radii, delta):
    sup = ball_profile(basis, coeffs, center, radii)
    traces = np.array([trace_norm(basis, coeffs, center, r) for r in radii])
    return sup, traces, trace_norm(basis, coeffs, center, delta)


def growth_report(basis: EigenBasis, omega: ControlRegion, mu_samples, trials: int,
                  seed: int, jobs: int | None = None) -> GrowthReport:
    """Ball sup norms of random lifts for every cutoff in *mu_samples*.

    Coefficients are drawn in (μ, trial) order from one seeded generator, so
    results do not depend on *jobs*.

    Raises:
        NumericalRefusal: m(r) decreasing in r.
    """
    start = time.time()
    center, delta = omega.center, omega.inradius
    radii = radius_ladder(delta)
    report = GrowthReport(center=center, delta=delta, radii=radii)
    rng = np.random.default_rng(seed)

    tasks = []
    for mu in mu_samples:
        count = basis.count_below(mu)
        if count == 0:
            report.skipped.append(f"μ={mu!r}: no modes below the cutoff")
            logger.warning("[lift] μ=%.6g has no modes, skipped", mu)
            continue
        if count == basis.m:
            logger.warning("[lift] μ=%.6g covers all %d computed modes", mu, basis.m)
        for trial in range(trials):
            tasks.append((float(mu), trial, random_coefficients(rng, count)))

    run = lambda task: _trial_profile(basis, task[2], center, radii, delta)
    jobs = jobs or settings.JOBS
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            profiles = list(pool.map(run, tasks))
    else:
        profiles = [run(t) for t in tasks]

    i_half = int(np.argmin(np.abs(radii - delta / 2.0)))
    log_r = np.log(radii)
    for (mu, trial, _), (sup, traces, omega_trace) in zip(tasks, profiles):
        if sup[-1] == 0.0:
            report.skipped.append(f"μ={mu!r} trial {trial}: u identically zero")
            continue
        if np.any(np.diff(sup) < 0.0):
            raise NumericalRefusal(f"m(r) decreases in r at μ={mu:.6g}, trial {trial}")
        for r, s, t in zip(radii, sup, traces):
            report.rows.append({"mu": mu, "trial": trial, "r": float(r),
                                "sup_norm": float(s), "trace_norm": float(t)})

        log_ratio = math.log(sup[-1] / sup[i_half])
        report.doubling_log_ratio[mu] = max(report.doubling_log_ratio.get(mu, -math.inf), log_ratio)
        if omega_trace > 0.0:
            boundary = math.log(sup[-1] / omega_trace)
            report.boundary_log_ratio[mu] = max(report.boundary_log_ratio.get(mu, -math.inf), boundary)

        log_m = np.log(sup)
        # three balls on consecutive rungs (r1 < r < r2)
        for j in range(len(radii) - 2):
            r1, r, r2 = radii[j], radii[j + 1], radii[j + 2]
            theta = math.log(r2 / r) / math.log(r2 / r1)
            c3 = math.exp(log_m[j + 1] - theta * log_m[j] - (1.0 - theta) * log_m[j + 2])
            report.three_ball_max = max(report.three_ball_max, c3)
        # m(r)/m(r/2) against m(1)/m(1/4)
        reference = sup[-1] / sup[-3] if len(radii) >= 3 else math.nan
        for j in range(1, len(radii)):
            if math.isclose(radii[j - 1], radii[j] / 2.0) and math.isfinite(reference):
                report.doubling_max = max(report.doubling_max, (sup[j] / sup[j - 1]) / reference)
        # convexity of log m in log r (non-uniform spacing at the δ/2 rung)
        for j in range(1, len(radii) - 1):
            left = (log_m[j] - log_m[j - 1]) / (log_r[j] - log_r[j - 1])
            right = (log_m[j + 1] - log_m[j]) / (log_r[j + 1] - log_r[j])
            report.convexity_min = min(report.convexity_min, right - left)
            if right - left < -1e-12:
                report.convexity_violations += 1

    mus = sorted(report.doubling_log_ratio)
    report.doubling_fit = _linear_fit(mus, [report.doubling_log_ratio[m] for m in mus])
    mus_b = sorted(report.boundary_log_ratio)
    report.boundary_fit = _linear_fit(mus_b, [report.boundary_log_ratio[m] for m in mus_b])
    if report.convexity_violations:
        logger.info("[lift] log m(r) not convex in log r on %d rung(s) (reported only)",
                    report.convexity_violations)
    logger.info("[lift] growth: %d μ × %d trials, %d radii (%.2fs)",
                len(mus), trials, radii.size, time.time() - start)
    return report


# ── Cauchy-data estimate ───────────────────────────────────


@dataclass
class CauchyReport:
    """Fit of ‖u‖_{B_{r/2}} ≤ C (r^{−1/2}‖u(·,0)‖_{L²(−r,r)})^θ ‖u‖_{B_{4r}}^{1−θ}.

    Norms are taken around the centre of ω; ``C_hat`` is the smallest
    constant that makes every recorded pair satisfy the fitted inequality.
    """

    theta: float
    C_hat: float
    C_fit: float
    violations: int
    pairs: int
    excluded: int
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"theta": self.theta, "C_hat": self.C_hat, "C_fit": self.C_fit,
                "violations": self.violations, "pairs": self.pairs, "excluded": self.excluded}

    def write_csv(self, path) -> None:
        """Columns trial, r, lhs, trace_norm, big_norm."""
        lines = ["trial,r,lhs,trace_norm,big_norm"]
        for row in self.rows:
            lines.append(f"{row['trial']},{row['r']!r},{row['lhs']!r},"
                         f"{row['trace_norm']!r},{row['big_norm']!r}")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")


def cauchy_data_report(basis: EigenBasis, omega: ControlRegion, trials: int, r_grid,
                       seed: int, mu: float | None = None, coefficient_sets=None,
                       jobs: int | None = None) -> CauchyReport:
    """Empirical exponent θ̂ ∈ (0, 1) and constant Ĉ of the Cauchy-data estimate.

    Args:
        mu:               Cutoff of the random lifts (default: λ of mode min(10, m − 1)).
        coefficient_sets: Explicit coefficient vectors used instead of random ones.

    Raises:
        PreconditionError: r_grid not inside (0, 1/4].
        NumericalRefusal: every pair excluded.
    """
    r_grid = np.asarray(r_grid, dtype=float)
    if r_grid.size == 0 or np.any((r_grid <= 0.0) | (r_grid > 0.25)):
        raise PreconditionError("r_grid must lie in (0, 1/4]")
    start = time.time()
    center = omega.center
    if coefficient_sets is None:
        mu = mu or float(basis.lambdas[min(10, basis.m - 1) - 1])
        count = basis.count_below(mu)
        rng = np.random.default_rng(seed)
        coefficient_sets = [random_coefficients(rng, count) for _ in range(trials)]
    sets = [np.atleast_1d(np.asarray(a, dtype=float)) for a in coefficient_sets]

    def measure(coeffs):
        return [(ball_sup(basis, coeffs, center, r / 2.0),
                 trace_norm(basis, coeffs, center, r),
                 ball_sup(basis, coeffs, center, 4.0 * r)) for r in r_grid]

    jobs = jobs or settings.JOBS
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            measured = list(pool.map(measure, sets))
    else:
        measured = [measure(c) for c in sets]

    rows, q, s = [], [], []
    excluded = 0
    for trial, values in enumerate(measured):
        for r, (lhs, trace, big) in zip(r_grid, values):
            rows.append({"trial": trial, "r": float(r), "lhs": lhs, "trace_norm": trace, "big_norm": big})
            if trace <= 1e-300 or big <= 1e-300:
                excluded += 1
                continue
            q.append(lhs / big)
            s.append(trace / (math.sqrt(r) * big))
    if excluded:
        logger.warning("[lift] %d (trial, r) pair(s) with vanishing trace excluded", excluded)
    if not q:
        raise NumericalRefusal("every (trial, r) pair was excluded")

    q, s = np.array(q), np.array(s)
    design = np.column_stack((np.ones_like(s), np.log(s)))
    fit = lsq_linear(design, np.log(q), bounds=([-np.inf, THETA_EPS], [np.inf, 1.0 - THETA_EPS]))
    log_c, theta = fit.x
    C_hat = float(np.max(q / s ** theta))
    violations = int(np.count_nonzero(q > C_hat * s ** theta * (1.0 + 1e-12)))
    logger.info("[lift] Cauchy data: θ̂=%.4f Ĉ=%.4g over %d pairs (%.2fs)",
                theta, C_hat, q.size, time.time() - start)
    return CauchyReport(theta=float(theta), C_hat=C_hat, C_fit=float(math.exp(log_c)),
                        violations=violations, pairs=int(q.size), excluded=excluded, rows=rows)
