"""Dirichlet Sturm–Liouville eigenpairs  −e″ = λ² ρ e  on (0, 1).

Conforming P1 elements on a uniform mesh: stiffness ∫e′φ′, consistent mass
∫ρ eφ integrated exactly by splitting every mesh cell at the density nodes.
The lowest m modes come from shift-invert Lanczos (``eigsh`` with σ = 0),
then a Rayleigh–Ritz pass makes them ρ-orthonormal to machine precision.

Eigenfunctions are stored with two nodal arrays: values and the recovered
derivative e′(x) = e′(0) − λ²∫₀ˣ ρe, which is far more accurate than the
piecewise-constant P1 slope and is what the harmonic lift needs.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg import eigh
from scipy.optimize import brentq
from scipy.sparse import diags
from scipy.sparse.linalg import eigsh

from .coefficients import (
    ControlRegion,
    PiecewiseProfile,
    density_bounds_constant,
    density_from_dict,
    gauss_rule,
)
from .config import settings
from .errors import DomainError, NumericalRefusal, PreconditionError

logger = logging.getLogger(__name__)

# Modes must satisfy m <= n / MESH_PER_MODE
MESH_PER_MODE = 10
# Relative gap required between consecutive eigenvalues
SIMPLE_TOL = 1e-9
# Smallest relative tolerance brentq accepts
BRENT_RTOL = 4.0 * np.finfo(float).eps


@dataclass(frozen=True)
class Mesh:
    """Uniform partition of [0, 1] into n cells."""

    n: int

    def __post_init__(self):
        if self.n < 2:
            raise PreconditionError(f"mesh needs at least 2 cells, got {self.n}")

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n + 1)

    @property
    def h(self) -> float:
        return 1.0 / self.n


# ── Quadrature on the merged mesh ──────────────────────────


def _merged_points(nodes: np.ndarray, density, extra=()) -> tuple[np.ndarray, np.ndarray]:
    """Gauss points and weights on the union of mesh and density nodes."""
    edges = np.unique(np.concatenate((nodes, density.segments()[0], np.asarray(extra, dtype=float))))
    gx, gw = gauss_rule()
    widths = np.diff(edges)
    points = (edges[:-1, None] + widths[:, None] * gx[None, :]).ravel()
    weights = (widths[:, None] * gw[None, :]).ravel()
    return points, weights


def _locate(nodes: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mesh cell index and local coordinate s ∈ [0, 1] for each x."""
    n = nodes.size - 1
    cell = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, n - 1)
    s = (x - nodes[cell]) / (nodes[cell + 1] - nodes[cell])
    return cell, s


def assemble(mesh: Mesh, density) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Full tridiagonal stiffness and mass matrices as (diag, off) pairs.

    Returns:
        (k_diag, k_off, m_diag, m_off) over all n + 1 nodes.
    """
    n, h = mesh.n, mesh.h
    k_diag = np.full(n + 1, 2.0 / h)
    k_diag[0] = k_diag[-1] = 1.0 / h
    k_off = np.full(n, -1.0 / h)

    points, weights = _merged_points(mesh.nodes, density)
    cell, s = _locate(mesh.nodes, points)
    wr = weights * density(points)
    m_diag = (np.bincount(cell, wr * (1.0 - s) ** 2, minlength=n + 1)
              + np.bincount(cell + 1, wr * s ** 2, minlength=n + 1))
    m_off = np.bincount(cell, wr * s * (1.0 - s), minlength=n)
    return k_diag, k_off, m_diag, m_off


def discrete_unit_eigenvalues(mesh: Mesh, m: int) -> np.ndarray:
    """Squared eigenvalues of the P1 problem with ρ ≡ 1 (closed form)."""
    theta = np.arange(1, m + 1) * math.pi * mesh.h
    return 6.0 / mesh.h ** 2 * (1.0 - np.cos(theta)) / (2.0 + np.cos(theta))


# ── Basis ──────────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class EigenBasis:
    """First m eigenpairs, ρ-orthonormal, with e_k′(0) > 0.

    Attributes:
        mesh:    Uniform mesh the modes live on.
        lambdas: λ_k ascending (square roots of the Sturm–Liouville eigenvalues).
        eigvecs: Nodal values, shape (m, n + 1), zero at both ends.
        slopes:  Recovered nodal derivatives, shape (m, n + 1).
        rho:     The density (PiecewiseProfile or TabulatedDensity).
    """

    mesh: Mesh
    lambdas: np.ndarray
    eigvecs: np.ndarray
    slopes: np.ndarray
    rho: object

    @property
    def m(self) -> int:
        return self.lambdas.size

    @property
    def nodes(self) -> np.ndarray:
        return self.mesh.nodes

    @cached_property
    def K_tilde(self) -> float:
        return density_bounds_constant(self.rho)

    def count_below(self, mu: float, slack: float | None = None) -> int:
        """Number of modes with λ_k ≤ μ(1 + slack)."""
        slack = settings.CUTOFF_SLACK if slack is None else slack
        return int(np.count_nonzero(self.lambdas <= mu * (1.0 + slack)))

    def values_at(self, x, count: int | None = None) -> np.ndarray:
        """e_k(x) for k ≤ count, shape (count, len(x)); P1 interpolation."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any((x < 0.0) | (x > 1.0)):
            raise DomainError("eigenfunction evaluated outside [0, 1]")
        cell, s = _locate(self.nodes, x)
        vecs = self.eigvecs[: count or self.m]
        return vecs[:, cell] * (1.0 - s) + vecs[:, cell + 1] * s

    def slopes_at(self, x, count: int | None = None) -> np.ndarray:
        """e_k′(x), interpolated from the recovered nodal derivatives."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.any((x < 0.0) | (x > 1.0)):
            raise DomainError("eigenfunction evaluated outside [0, 1]")
        cell, s = _locate(self.nodes, x)
        d = self.slopes[: count or self.m]
        return d[:, cell] * (1.0 - s) + d[:, cell + 1] * s

    def mode_gram(self, region: ControlRegion | None = None, weighted: bool = False,
                  count: int | None = None, weight=None, extra=()) -> np.ndarray:
        """∫ w e_j e_k over *region* (default [0, 1]).

        The weight w is ρ when *weighted*, the callable *weight* when given,
        else 1. Quadrature is exact for P1 modes and the tabulated density;
        kinks of *weight* must be listed in *extra*.
        """
        count = count or self.m
        edges = np.concatenate((np.asarray(extra, dtype=float),
                                region.endpoints if region is not None else []))
        points, weights = _merged_points(self.nodes, self.rho, edges)
        if region is not None:
            inside = region.contains(points)
            points, weights = points[inside], weights[inside]
        if weighted:
            weights = weights * self.rho(points)
        if weight is not None:
            weights = weights * weight(points)
        vals = self.values_at(points, count)
        return (vals * weights[None, :]) @ vals.T

    def mode_samples(self, region: ControlRegion, count: int | None = None) -> np.ndarray:
        """A[q, k] = √w_q e_k(x_q) at the quadrature points inside *region*.

        AᵀA is ``mode_gram(region=region)``; its singular values give the
        Gram spectrum without squaring the condition number.
        """
        points, weights = _merged_points(self.nodes, self.rho, region.endpoints)
        inside = region.contains(points)
        vals = self.values_at(points[inside], count)
        return (vals * np.sqrt(weights[inside])[None, :]).T

    def project(self, fn, count: int | None = None) -> np.ndarray:
        """Coefficients a_k = ∫ρ f e_k of a callable f."""
        points, weights = _merged_points(self.nodes, self.rho)
        vals = self.values_at(points, count)
        return vals @ (weights * self.rho(points) * fn(points))

    def norm2(self, fn) -> float:
        """∫ρ f² of a callable f."""
        points, weights = _merged_points(self.nodes, self.rho)
        return float(np.sum(weights * self.rho(points) * fn(points) ** 2))

    def synthesize(self, coeffs: np.ndarray, x) -> np.ndarray:
        """Σ a_k e_k(x)."""
        coeffs = np.asarray(coeffs, dtype=float)
        return coeffs @ self.values_at(x, coeffs.size)

    def to_dict(self) -> dict:
        return {
            "mesh_n": self.mesh.n,
            "lambdas": self.lambdas.tolist(),
            "eigvecs": self.eigvecs.tolist(),
            "slopes": self.slopes.tolist(),
            "rho": self.rho.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> EigenBasis:
        return cls(
            mesh=Mesh(int(data["mesh_n"])),
            lambdas=np.asarray(data["lambdas"], dtype=float),
            eigvecs=np.asarray(data["eigvecs"], dtype=float),
            slopes=np.asarray(data["slopes"], dtype=float),
            rho=density_from_dict(data["rho"]),
        )

    def write_csv(self, lambdas_path, eigvecs_path) -> None:
        """lambdas CSV (k, lambda) and eigvecs CSV (x, e_1 … e_m)."""
        k = np.arange(1, self.m + 1)
        np.savetxt(lambdas_path, np.column_stack((k, self.lambdas)), delimiter=",",
                   fmt=("%d", "%.17g"), header="k,lambda", comments="")
        header = ",".join(["x"] + [f"e_{i}" for i in k])
        np.savetxt(eigvecs_path, np.column_stack((self.nodes, self.eigvecs.T)), delimiter=",",
                   fmt="%.17g", header=header, comments="")


def solve_basis(rho, m: int | None = None, mesh: Mesh | None = None) -> EigenBasis:
    """Lowest *m* Dirichlet eigenpairs for density *rho*.

    Raises:
        PreconditionError: m > n/10, or ρ not strictly positive.
        NumericalRefusal: eigenvalues not simple or outside the min-max bounds.
    """
    m = m or settings.MODES
    mesh = mesh or Mesh(settings.MESH_N)
    if m < 1:
        raise PreconditionError("need at least one mode")
    if m * MESH_PER_MODE > mesh.n:
        raise PreconditionError(
            f"{m} modes need a mesh with n ≥ {m * MESH_PER_MODE} cells (got n={mesh.n})")
    lo, _ = rho.bounds()
    if lo <= 0.0:
        raise PreconditionError(f"density must be positive (min {lo})")

    start = time.time()
    k_diag, k_off, m_diag, m_off = assemble(mesh, rho)
    stiff = diags([k_off[1:-1], k_diag[1:-1], k_off[1:-1]], [-1, 0, 1], format="csc")
    mass = diags([m_off[1:-1], m_diag[1:-1], m_off[1:-1]], [-1, 0, 1], format="csc")

    # fixed start vector keeps ARPACK deterministic
    v0 = np.ones(mesh.n - 1)
    _, vecs = eigsh(stiff, k=m, M=mass, sigma=0.0, which="LM", v0=v0)

    # Rayleigh–Ritz: exact M-orthonormality and ascending order
    ritz_vals, ritz_vecs = eigh(vecs.T @ (stiff @ vecs), vecs.T @ (mass @ vecs))
    vecs = vecs @ ritz_vecs
    lambdas = np.sqrt(ritz_vals)

    eigvecs = np.zeros((m, mesh.n + 1))
    eigvecs[:, 1:-1] = vecs.T

    # boundary row of the weak form gives e′(0) = λ²(Me)₀ − (Ke)₀
    slope0 = lambdas ** 2 * m_off[0] * eigvecs[:, 1] - k_off[0] * eigvecs[:, 1]
    sign = np.where(slope0 < 0.0, -1.0, 1.0)
    eigvecs *= sign[:, None]
    slope0 *= sign

    slopes = _recover_slopes(mesh, rho, lambdas, eigvecs, slope0)
    basis = EigenBasis(mesh=mesh, lambdas=lambdas, eigvecs=eigvecs, slopes=slopes, rho=rho)
    _check_spectrum(basis)
    logger.info("[eigs] %d modes on n=%d, λ₁=%.6g λ_m=%.6g (%.2fs)",
                m, mesh.n, lambdas[0], lambdas[-1], time.time() - start)
    return basis


def _recover_slopes(mesh, rho, lambdas, eigvecs, slope0) -> np.ndarray:
    points, weights = _merged_points(mesh.nodes, rho)
    cell, s = _locate(mesh.nodes, points)
    wr = weights * rho(points)
    vals = eigvecs[:, cell] * (1.0 - s) + eigvecs[:, cell + 1] * s
    per_cell = np.stack([np.bincount(cell, wr * v, minlength=mesh.n) for v in vals])
    cumulative = np.concatenate((np.zeros((lambdas.size, 1)), np.cumsum(per_cell, axis=1)), axis=1)
    return slope0[:, None] - lambdas[:, None] ** 2 * cumulative


def _check_spectrum(basis: EigenBasis) -> None:
    lam = basis.lambdas
    if np.any(np.diff(lam) <= SIMPLE_TOL * lam[1:]):
        raise NumericalRefusal("eigenvalues are not strictly increasing")
    K = basis.K_tilde
    ref = np.sqrt(discrete_unit_eigenvalues(basis.mesh, basis.m))
    lower, upper = ref / math.sqrt(K), ref * math.sqrt(K)
    bad = np.flatnonzero((lam < lower * (1 - 1e-9)) | (lam > upper * (1 + 1e-9)))
    if bad.size:
        raise NumericalRefusal(
            f"λ_k outside the min-max bounds for K̃={K:.4g} at k={(bad + 1).tolist()}")


# ── Reports and extensions ─────────────────────────────────


@dataclass
class OrthonormalityReport:
    max_deviation: float
    max_off_diagonal: float
    max_diagonal_deviation: float

    def to_dict(self) -> dict:
        return {"max_deviation": self.max_deviation,
                "max_off_diagonal": self.max_off_diagonal,
                "max_diagonal_deviation": self.max_diagonal_deviation}


def check_orthonormality(basis: EigenBasis) -> OrthonormalityReport:
    """max |∫ρ e_j e_k − δ_jk|. Report only, never raises."""
    dev = basis.mode_gram(weighted=True) - np.eye(basis.m)
    off = dev - np.diag(np.diag(dev))
    return OrthonormalityReport(
        max_deviation=float(np.max(np.abs(dev))),
        max_off_diagonal=float(np.max(np.abs(off))),
        max_diagonal_deviation=float(np.max(np.abs(np.diag(dev)))),
    )


def _fold(x) -> tuple[np.ndarray, np.ndarray]:
    """Reduce x to |s| ∈ [0, 1] and the sign of s, where s ≡ x mod 2 in [−1, 1)."""
    s = np.mod(np.asarray(x, dtype=float) + 1.0, 2.0) - 1.0
    return np.abs(s), np.where(s < 0.0, -1.0, 1.0)


def extended_values(basis: EigenBasis, x, count: int | None = None) -> np.ndarray:
    """Odd period-2 extensions of e_1 … e_count at the 1-D points *x*."""
    r, sign = _fold(np.atleast_1d(x))
    return sign[None, :] * basis.values_at(r, count)


def extended_slopes(basis: EigenBasis, x, count: int | None = None) -> np.ndarray:
    """Derivatives of the odd extensions (even, period 2)."""
    r, _ = _fold(np.atleast_1d(x))
    return basis.slopes_at(r, count)


def extend_odd_periodic(basis: EigenBasis, k: int, x) -> np.ndarray:
    """Odd reflection in 0 of e_k (k is 1-based), extended with period 2."""
    if not 1 <= k <= basis.m:
        raise DomainError(f"mode index {k} outside 1..{basis.m}")
    x = np.asarray(x, dtype=float)
    out = extended_values(basis, x.ravel(), k)[k - 1].reshape(x.shape)
    return float(out) if np.ndim(out) == 0 else out


def extended_rho(rho, x) -> np.ndarray:
    """Even reflection in 0 of ρ, extended with period 2."""
    r, _ = _fold(x)
    return rho(r)


def extension_residual(basis: EigenBasis, k: int, center: float, width: float = 0.05) -> float:
    """Weak residual of e″ + λ²ρe = 0 for the extended e_k against a hat at *center*.

    |∫e′φ′ − λ²∫ρeφ| / λ² with φ the hat of half-width *width*.
    """
    lam2 = basis.lambdas[k - 1] ** 2
    left, right = center - width, center + width
    e = lambda x: extend_odd_periodic(basis, k, x)
    stiffness = ((e(center) - e(left)) - (e(right) - e(center))) / width

    # hat integral split at every node of the folded mesh
    fine = np.linspace(left, right, int(round(2 * width * basis.mesh.n)) * 4 + 1)
    gx, gw = gauss_rule()
    widths = np.diff(fine)
    pts = (fine[:-1, None] + widths[:, None] * gx[None, :]).ravel()
    wts = (widths[:, None] * gw[None, :]).ravel()
    hat = np.maximum(0.0, 1.0 - np.abs(pts - center) / width)
    mass = float(np.sum(wts * extended_rho(basis.rho, pts) * e(pts) * hat))
    return abs(stiffness - lam2 * mass) / lam2


# ── Transfer-matrix oracle ─────────────────────────────────


def _shoot(rho: PiecewiseProfile, lam: np.ndarray) -> np.ndarray:
    """e(1) for e(0) = 0, e′(0) = 1 propagated exactly cell by cell."""
    lam = np.asarray(lam, dtype=float)
    e = np.zeros_like(lam)
    d = np.ones_like(lam)
    for width, r in zip(np.diff(rho.breakpoints), rho.values):
        q = lam * math.sqrt(r)
        c, s = np.cos(q * width), np.sin(q * width)
        e, d = e * c + d * s / q, -e * q * s + d * c
    return e


def transfer_matrix_eigenvalues(rho: PiecewiseProfile, count: int) -> np.ndarray:
    """First *count* λ_k for a piecewise-constant ρ, to root-finder precision."""
    if not isinstance(rho, PiecewiseProfile):
        raise PreconditionError("transfer-matrix oracle needs a piecewise-constant density")
    lo, hi = rho.bounds()
    step = 0.05 / math.sqrt(hi)
    upper = (count + 2) * math.pi * math.sqrt(max(hi, 1.0 / lo))
    grid = np.arange(step, upper + step, step)
    vals = _shoot(rho, grid)
    roots = []
    for i in np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0):
        roots.append(brentq(lambda t: float(_shoot(rho, np.array([t]))[0]),
                            grid[i], grid[i + 1], xtol=1e-15, rtol=BRENT_RTOL))
        if len(roots) == count:
            break
    if len(roots) < count:
        raise NumericalRefusal(f"oracle found only {len(roots)} of {count} roots")
    return np.asarray(roots)
