"""Observability ratios  sup Σa_k² / ∫_ω|Σa_k e_k|²  over modes λ_k ≤ μ.

For a fixed cutoff the supremum is 1/λ_min of the Gram matrix
G[j, k] = ∫_ω e_j e_k.  G = AᵀA for the quadrature-weighted sample matrix
A of the modes on ω, so the whole curve is one A and the smallest singular
value of its leading column blocks.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import svd, svdvals
from scipy.optimize import brentq

from .coefficients import ControlRegion
from .config import settings
from .eigensolver import EigenBasis
from .errors import NumericalRefusal, PreconditionError

logger = logging.getLogger(__name__)

# σ_min below this fraction of σ_max is reported as an infinite ratio
SENTINEL_RATIO = 1e-11
# Relative slack for the monotonicity assertion
MONOTONE_TOL = 1e-9
# Residuals above this share of the fitted range are flagged
RESIDUAL_FLAG = 0.15


def _cutoff_count(basis: EigenBasis, mu: float) -> int:
    """Modes with λ_k ≤ μ; warns when μ covers every computed mode."""
    count = basis.count_below(mu)
    if count == 0:
        raise PreconditionError(f"no modes with λ_k ≤ μ = {mu:.6g} (λ₁ = {basis.lambdas[0]:.6g})")
    if count == basis.m:
        logger.warning("[specineq] μ = %.6g covers all %d computed modes (λ_m = %.6g); "
                       "modes above λ_m are not included", mu, basis.m, basis.lambdas[-1])
    return count


def gram_on_region(basis: EigenBasis, omega: ControlRegion, mu: float) -> np.ndarray:
    """G[j, k] = ∫_ω e_j e_k over the modes with λ_k ≤ μ.

    Raises:
        PreconditionError: no mode below μ.
    """
    return basis.mode_gram(region=omega, count=_cutoff_count(basis, mu))


def default_mu_grid(basis: EigenBasis, mu_max: float | None = None) -> np.ndarray:
    """Multiples of π with at least one mode, up to λ_m/2 (or *mu_max*)."""
    top = mu_max or basis.lambdas[-1] / 2.0
    grid = math.pi * np.arange(1, int(top / math.pi) + 1)
    return np.array([mu for mu in grid if basis.count_below(mu) >= 1])


@dataclass
class FitResult:
    N_hat: float
    slope: float
    intercept: float
    max_residual: float
    fitted_range: float
    envelope_N: float
    flagged: bool
    residuals: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "N_hat": self.N_hat, "slope": self.slope, "intercept": self.intercept,
            "max_residual": self.max_residual, "fitted_range": self.fitted_range,
            "envelope_N": self.envelope_N, "flagged": self.flagged,
        }


@dataclass
class ObservabilityReport:
    """Observability ratio per cutoff; ``fit`` is filled by :func:`fit_constant`."""

    mu_grid: np.ndarray
    ratios: np.ndarray
    mode_counts: np.ndarray
    sentinel_mu: list[float] = field(default_factory=list)
    fit: FitResult | None = None

    @property
    def fit_slope(self) -> float | None:
        return self.fit.slope if self.fit else None

    @property
    def fit_intercept(self) -> float | None:
        return self.fit.intercept if self.fit else None

    @property
    def max_residual(self) -> float | None:
        return self.fit.max_residual if self.fit else None

    @property
    def finite(self) -> bool:
        return bool(np.all(np.isfinite(self.ratios)))

    def to_dict(self) -> dict:
        return {
            "mu_grid": self.mu_grid.tolist(),
            "ratios": [r if math.isfinite(r) else None for r in self.ratios.tolist()],
            "mode_counts": self.mode_counts.tolist(),
            "sentinel_mu": self.sentinel_mu,
            "fit": self.fit.to_dict() if self.fit else None,
        }

    def write_csv(self, path) -> None:
        """Columns mu, mode_count, ratio, log_ratio; infinite ratios print as inf."""
        with np.errstate(divide="ignore"):
            logs = np.log(self.ratios)
        lines = ["mu,mode_count,ratio,log_ratio"]
        for mu, count, ratio, lr in zip(self.mu_grid, self.mode_counts, self.ratios, logs):
            lines.append(f"{float(mu)!r},{int(count)},{float(ratio)!r},{float(lr)!r}")
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")


def _ratio(block: np.ndarray) -> float:
    sv = svdvals(block)
    if sv[-1] < SENTINEL_RATIO * sv[0]:
        return math.inf
    return 1.0 / sv[-1] ** 2


def observability_curve(basis: EigenBasis, omega: ControlRegion, mu_grid,
                        jobs: int | None = None) -> ObservabilityReport:
    """Exact observability ratio for every cutoff in *mu_grid*.

    Raises:
        PreconditionError: grid not ascending, or no mode below the first cutoff.
        NumericalRefusal: ratios decrease along the grid.
    """
    mu_grid = np.asarray(mu_grid, dtype=float)
    if mu_grid.size == 0 or np.any(np.diff(mu_grid) <= 0):
        raise PreconditionError("mu_grid must be nonempty and strictly ascending")
    start = time.time()
    counts = np.array([basis.count_below(mu) for mu in mu_grid])
    if counts[0] == 0:
        raise PreconditionError(f"no modes with λ_k ≤ μ = {mu_grid[0]:.6g}")
    samples = basis.mode_samples(omega, _cutoff_count(basis, float(mu_grid[-1])))

    jobs = jobs or settings.JOBS
    blocks = [samples[:, :c] for c in counts]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            ratios = np.array(list(pool.map(_ratio, blocks)))
    else:
        ratios = np.array([_ratio(b) for b in blocks])

    finite = np.isfinite(ratios)
    if np.any(np.diff(ratios[finite]) < -MONOTONE_TOL * ratios[finite][1:]):
        raise NumericalRefusal("observability ratios decrease along the μ grid")
    if np.any(~finite[:-1] & finite[1:]):
        raise NumericalRefusal("finite ratio follows an infinite one")

    sentinel = mu_grid[~finite].tolist()
    if sentinel:
        logger.warning("[specineq] ratio beyond double precision from μ = %.6g (%d point(s))",
                       sentinel[0], len(sentinel))
    logger.info("[specineq] %d cutoffs, up to %d modes (%.2fs)",
                mu_grid.size, counts[-1], time.time() - start)
    return ObservabilityReport(mu_grid=mu_grid, ratios=ratios, mode_counts=counts,
                               sentinel_mu=sentinel)


def _envelope_constant(mu: np.ndarray, log_ratio: np.ndarray) -> float:
    """Smallest N with ratio ≤ N e^{Nμ} at every sample."""
    gap = lambda n: float(np.max(log_ratio - math.log(n) - n * mu))
    lo, hi = 1e-12, 1.0
    if gap(lo) <= 0.0:
        return lo
    while gap(hi) > 0.0:
        hi *= 2.0
    return brentq(gap, lo, hi, xtol=1e-14)


def fit_constant(report: ObservabilityReport, finite_only: bool = False) -> FitResult:
    """Least-squares fit log ratio ≈ α + βμ and the constant of the law N e^{Nμ}.

    Args:
        report:      Curve from :func:`observability_curve`; its ``fit`` is set.
        finite_only: Drop ∞-sentinel points instead of refusing.

    Raises:
        NumericalRefusal: infinite ratios present (and not dropped).
        PreconditionError: fewer than three usable points.
    """
    mu, ratios = report.mu_grid, report.ratios
    finite = np.isfinite(ratios)
    if not np.all(finite):
        if not finite_only:
            raise NumericalRefusal(
                f"cannot fit infinite ratios (first at μ = {mu[~finite][0]:.6g})")
        logger.warning("[specineq] fitting %d of %d points (dropping sentinels)",
                       int(finite.sum()), finite.size)
        mu, ratios = mu[finite], ratios[finite]
    if mu.size < 3:
        raise PreconditionError("fit needs at least three grid points")

    log_ratio = np.log(ratios)
    design = np.column_stack((np.ones_like(mu), mu))
    (alpha, beta), *_ = np.linalg.lstsq(design, log_ratio, rcond=None)
    fitted = alpha + beta * mu
    residuals = log_ratio - fitted
    max_residual = float(max(residuals.max(), 0.0))
    fitted_range = float(fitted.max() - fitted.min())
    flagged = max_residual > RESIDUAL_FLAG * fitted_range if fitted_range > 0 else max_residual > 1e-8
    if flagged:
        logger.warning("[specineq] max residual %.4g exceeds %.0f%% of the fitted range %.4g",
                       max_residual, 100 * RESIDUAL_FLAG, fitted_range)

    result = FitResult(
        N_hat=float(max(beta, math.exp(alpha))),
        slope=float(beta), intercept=float(alpha),
        max_residual=max_residual, fitted_range=fitted_range,
        envelope_N=_envelope_constant(mu, log_ratio),
        flagged=bool(flagged), residuals=residuals.tolist(),
    )
    report.fit = result
    return result


def random_coefficient_check(basis: EigenBasis, omega: ControlRegion, mu: float,
                             trials: int, seed: int, candidates=None) -> float:
    """Max of Σa_k²/∫_ω|Σa_k e_k|² over seeded random unit vectors.

    *candidates* are extra coefficient vectors tried alongside the random ones.
    """
    if trials < 1:
        raise PreconditionError("trials must be at least 1")
    samples = basis.mode_samples(omega, _cutoff_count(basis, mu))
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal((trials, samples.shape[1]))
    if candidates is not None:
        coeffs = np.vstack((coeffs, np.atleast_2d(candidates)))
    coeffs /= np.linalg.norm(coeffs, axis=1, keepdims=True)
    observed = np.sum((coeffs @ samples.T) ** 2, axis=1)
    return float(np.max(1.0 / observed))


def minimal_direction(basis: EigenBasis, omega: ControlRegion, mu: float) -> np.ndarray:
    """Right singular vector of the smallest σ (the worst-observed sequence)."""
    _, _, vt = svd(basis.mode_samples(omega, _cutoff_count(basis, mu)), full_matrices=False)
    return vt[-1]
