"""Piecewise-constant coefficient profiles, problem specs and quadrature.

Piecewise-constant profiles are the computable stand-in for bounded
measurable coefficients: any bound that holds cell-wise holds a.e., and
quadrature split at the breakpoints stays exact.

Problem specs are read from JSON with the layout::

    {"a": {"breakpoints": [...], "values": [...]}, "b": ..., "c": ..., "rho": ...,
     "K": 4, "omega": [[0.3, 0.5]], "T": 1.0,
     "z0": {"mesh_n": 64, "values": [...]}}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .errors import DomainError, PreconditionError, SchemaError

logger = logging.getLogger(__name__)

# Relative slack when comparing cell values against K and 1/K
BOUND_TOL = 1e-12

GAUSS_ORDER = 5


@lru_cache(maxsize=None)
def gauss_rule(order: int = GAUSS_ORDER) -> tuple[np.ndarray, np.ndarray]:
    """Gauss–Legendre nodes and weights on [0, 1]."""
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return (nodes + 1.0) / 2.0, weights / 2.0


# ── Profiles ───────────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class PiecewiseProfile:
    """Piecewise-constant function on [0, 1].

    Right-continuous at interior breakpoints and left-continuous at 1, so
    ``eval`` is defined on the closed interval.
    """

    breakpoints: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        bp = np.array(self.breakpoints, dtype=float)
        vals = np.array(self.values, dtype=float)
        if bp.ndim != 1 or bp.size < 2:
            raise PreconditionError("profile needs at least two breakpoints")
        if bp[0] != 0.0 or bp[-1] != 1.0:
            raise PreconditionError("profile breakpoints must start at 0 and end at 1")
        if np.any(np.diff(bp) <= 0):
            raise PreconditionError("profile breakpoints must be strictly increasing")
        if vals.shape != (bp.size - 1,):
            raise PreconditionError(
                f"profile has {bp.size - 1} cells but {vals.size} values")
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("profile values must be finite")
        bp.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, value: float) -> PiecewiseProfile:
        return cls(np.array([0.0, 1.0]), np.array([float(value)]))

    @classmethod
    def from_dict(cls, data: dict) -> PiecewiseProfile:
        return cls(np.asarray(data["breakpoints"], dtype=float),
                   np.asarray(data["values"], dtype=float))

    def to_dict(self) -> dict:
        return {"breakpoints": self.breakpoints.tolist(), "values": self.values.tolist()}

    @property
    def n_cells(self) -> int:
        return self.values.size

    @property
    def interior_breakpoints(self) -> np.ndarray:
        return self.breakpoints[1:-1]

    def cell_index(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if np.any((x < 0.0) | (x > 1.0)) or np.any(np.isnan(x)):
            raise DomainError("profile evaluated outside [0, 1]")
        idx = np.searchsorted(self.breakpoints, x, side="right") - 1
        return np.clip(idx, 0, self.n_cells - 1)

    def eval(self, x):
        """Cell value containing *x* (scalar or array)."""
        out = self.values[self.cell_index(x)]
        return float(out) if np.ndim(out) == 0 else out

    __call__ = eval

    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Density view: (nodes, value at cell start, value at cell end)."""
        return self.breakpoints, self.values, self.values

    def jumps(self) -> list[tuple[float, float]]:
        """Interior breakpoints with the jump value(right) − value(left)."""
        return [(float(x), float(self.values[i + 1] - self.values[i]))
                for i, x in enumerate(self.interior_breakpoints)
                if self.values[i + 1] != self.values[i]]

    def bounds(self) -> tuple[float, float]:
        return float(self.values.min()), float(self.values.max())

    def scaled(self, factor: float) -> PiecewiseProfile:
        return PiecewiseProfile(self.breakpoints, self.values * factor)

    def on_cells(self, breakpoints: np.ndarray) -> np.ndarray:
        """Values on each cell of a refinement given by *breakpoints*."""
        mids = 0.5 * (breakpoints[1:] + breakpoints[:-1])
        return self.values[self.cell_index(mids)]


def random_profile(rng: np.random.Generator, K: float, n_cells: int) -> PiecewiseProfile:
    """Piecewise-constant profile with log-uniform values in [1/K, K]."""
    inner = np.sort(rng.uniform(0.05, 0.95, n_cells - 1))
    # keep cells from collapsing
    inner = np.unique(np.round(inner, 6))
    values = np.exp(rng.uniform(-np.log(K), np.log(K), inner.size + 1))
    return PiecewiseProfile(np.concatenate(([0.0], inner, [1.0])), values)


@dataclass(frozen=True, eq=False)
class TabulatedDensity:
    """Discontinuous piecewise-linear density on [0, 1].

    Cell i runs from ``nodes[i]`` to ``nodes[i+1]`` and is linear from
    ``start[i]`` to ``end[i]``; jumps are allowed at every node.
    """

    nodes: np.ndarray
    start: np.ndarray
    end: np.ndarray

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        start = np.array(self.start, dtype=float)
        end = np.array(self.end, dtype=float)
        if nodes[0] != 0.0 or nodes[-1] != 1.0 or np.any(np.diff(nodes) <= 0):
            raise PreconditionError("density nodes must increase from 0 to 1")
        if start.shape != (nodes.size - 1,) or end.shape != start.shape:
            raise PreconditionError("density needs one start and one end value per cell")
        for arr in (nodes, start, end):
            arr.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        if np.any((x < 0.0) | (x > 1.0)):
            raise DomainError("density evaluated outside [0, 1]")
        i = np.clip(np.searchsorted(self.nodes, x, side="right") - 1, 0, self.start.size - 1)
        t = (x - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i])
        out = self.start[i] + t * (self.end[i] - self.start[i])
        return float(out) if np.ndim(out) == 0 else out

    __call__ = eval

    def segments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.nodes, self.start, self.end

    def bounds(self) -> tuple[float, float]:
        return (float(min(self.start.min(), self.end.min())),
                float(max(self.start.max(), self.end.max())))

    def to_dict(self) -> dict:
        return {"nodes": self.nodes.tolist(), "start": self.start.tolist(),
                "end": self.end.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> TabulatedDensity:
        return cls(np.asarray(data["nodes"]), np.asarray(data["start"]), np.asarray(data["end"]))


def density_from_dict(data: dict) -> PiecewiseProfile | TabulatedDensity:
    if "breakpoints" in data:
        return PiecewiseProfile.from_dict(data)
    return TabulatedDensity.from_dict(data)


def density_bounds_constant(density) -> float:
    """Smallest K̃ with K̃⁻¹ ≤ density ≤ K̃."""
    lo, hi = density.bounds()
    return max(hi, 1.0 / lo, 1.0)


def union_breakpoints(*profiles: PiecewiseProfile, extra: Iterable[float] = ()) -> np.ndarray:
    """Sorted union of all breakpoints (always contains 0 and 1)."""
    pts = [p.breakpoints for p in profiles]
    pts.append(np.asarray(list(extra), dtype=float))
    pts.append(np.array([0.0, 1.0]))
    return np.unique(np.concatenate(pts))


def integrate(
    integrand: Callable[[np.ndarray], np.ndarray],
    interval: tuple[float, float],
    breakpoints: Iterable[float] = (),
    order: int = GAUSS_ORDER,
    pieces: int = 1,
) -> float:
    """Composite Gauss–Legendre quadrature of a piecewise-smooth integrand.

    The interval is split at every supplied breakpoint that falls inside it,
    and each cell into ``pieces`` equal parts; each part gets an ``order``-point
    rule, so the result is exact for piecewise polynomials of degree
    ``2*order - 1`` whose pieces meet at the breakpoints.

    Args:
        integrand: Vectorized callable.
        interval:  (l, r); an empty interval (l >= r) integrates to 0.
        breakpoints: Points where the integrand may be non-smooth.
        order:     Gauss points per part.
        pieces:    Equal subdivisions per cell.
    """
    left, right = float(interval[0]), float(interval[1])
    if left >= right:
        return 0.0
    bp = np.asarray(list(breakpoints), dtype=float)
    inner = bp[(bp > left) & (bp < right)]
    edges = np.unique(np.concatenate(([left], inner, [right])))
    if pieces > 1:
        frac = np.linspace(0.0, 1.0, pieces + 1)[:-1]
        widths = np.diff(edges)
        starts = (edges[:-1, None] + widths[:, None] * frac[None, :]).ravel()
        edges = np.append(starts, right)
    nodes, weights = gauss_rule(order)
    widths = np.diff(edges)
    points = edges[:-1, None] + widths[:, None] * nodes[None, :]
    values = np.asarray(integrand(points.ravel()), dtype=float).reshape(points.shape)
    return float(np.sum(values * weights[None, :] * widths[:, None]))


# ── Control region ─────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class ControlRegion:
    """Finite union of disjoint open subintervals of [0, 1]."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = tuple(sorted((float(l), float(r)) for l, r in self.intervals))
        if not ivs:
            raise PreconditionError("control region must contain at least one interval")
        for l, r in ivs:
            if not (0.0 <= l < r <= 1.0):
                raise PreconditionError(f"interval ({l}, {r}) is empty or leaves [0, 1]")
        for (_, r0), (l1, _) in zip(ivs, ivs[1:]):
            if l1 < r0:
                raise PreconditionError("control region intervals overlap")
        object.__setattr__(self, "intervals", ivs)

    @property
    def inradius(self) -> float:
        """Largest half-length among the intervals (δ)."""
        return max((r - l) / 2.0 for l, r in self.intervals)

    @property
    def largest_interval(self) -> tuple[float, float]:
        # first one wins on ties
        return max(self.intervals, key=lambda iv: iv[1] - iv[0])

    @property
    def center(self) -> float:
        l, r = self.largest_interval
        return 0.5 * (l + r)

    @property
    def measure(self) -> float:
        return sum(r - l for l, r in self.intervals)

    @property
    def endpoints(self) -> np.ndarray:
        return np.array([p for iv in self.intervals for p in iv])

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        mask = np.zeros(x.shape, dtype=bool)
        for l, r in self.intervals:
            mask |= (x > l) & (x < r)
        return mask

    def includes(self, other: ControlRegion, tol: float = 0.0) -> bool:
        return all(any(l - tol <= ol and orr <= r + tol for l, r in self.intervals)
                   for ol, orr in other.intervals)

    def mapped(self, fn: Callable[[np.ndarray], np.ndarray]) -> ControlRegion:
        """Image under an increasing map (endpoints mapped pointwise)."""
        return ControlRegion(tuple((float(fn(l)), float(fn(r))) for l, r in self.intervals))

    def to_list(self) -> list[list[float]]:
        return [[l, r] for l, r in self.intervals]


# ── Problem spec ───────────────────────────────────────────


@dataclass(frozen=True, eq=False)
class NodalFunction:
    """Function given by nodal values on a uniform mesh of [0, 1]."""

    mesh_n: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if self.mesh_n < 1 or vals.shape != (self.mesh_n + 1,):
            raise PreconditionError(
                f"nodal function needs mesh_n + 1 = {self.mesh_n + 1} values, got {vals.size}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.mesh_n + 1)

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values)

    @classmethod
    def sample(cls, fn: Callable[[np.ndarray], np.ndarray], mesh_n: int) -> NodalFunction:
        return cls(mesh_n, fn(np.linspace(0.0, 1.0, mesh_n + 1)))


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """The original parabolic system: coefficients, K, ω, T and z0."""

    a: PiecewiseProfile
    b: PiecewiseProfile
    c: PiecewiseProfile
    rho: PiecewiseProfile
    K: float
    omega: ControlRegion
    T: float
    z0: NodalFunction
    raw: dict = field(default_factory=dict, repr=False)

    def breakpoints(self) -> np.ndarray:
        return union_breakpoints(self.a, self.b, self.c, self.rho)

    def to_dict(self) -> dict:
        return {
            "a": self.a.to_dict(), "b": self.b.to_dict(),
            "c": self.c.to_dict(), "rho": self.rho.to_dict(),
            "K": self.K, "omega": self.omega.to_list(), "T": self.T,
            "z0": {"mesh_n": self.z0.mesh_n, "values": self.z0.values.tolist()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> ProblemSpec:
        """Build a spec from parsed JSON, raising SchemaError on any mismatch."""
        if not isinstance(data, dict):
            raise SchemaError("problem spec must be a JSON object")
        missing = [k for k in ("a", "b", "c", "rho", "K", "omega", "T", "z0") if k not in data]
        if missing:
            raise SchemaError(f"problem spec is missing keys: {', '.join(missing)}")
        try:
            profiles = {k: PiecewiseProfile.from_dict(data[k]) for k in ("a", "b", "c", "rho")}
            omega = ControlRegion(tuple((float(l), float(r)) for l, r in data["omega"]))
            z0 = NodalFunction(int(data["z0"]["mesh_n"]), np.asarray(data["z0"]["values"], dtype=float))
            K = float(data["K"])
            T = float(data["T"])
        except PreconditionError as e:
            raise SchemaError(str(e)) from e
        except (KeyError, TypeError, ValueError) as e:
            raise SchemaError(f"problem spec does not match the schema: {e}") from e
        if T <= 0.0:
            raise SchemaError("T must be positive")
        return cls(K=K, omega=omega, T=T, z0=z0, raw=data, **profiles)


def load_problem(path: str | Path) -> ProblemSpec:
    """Parse a problem spec file."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise SchemaError(f"cannot read spec file {path}: {e}") from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"malformed JSON in {path}: {e.msg} (offset {e.pos})") from e
    return ProblemSpec.from_dict(data)


# ── Validation ─────────────────────────────────────────────


@dataclass
class Violation:
    coefficient: str
    cell: int
    message: str

    def to_dict(self) -> dict:
        return {"coefficient": self.coefficient, "cell": self.cell, "message": self.message}


@dataclass
class ValidationReport:
    violations: list[Violation]
    inradius: float
    K: float

    @property
    def valid(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {"valid": self.valid, "K": self.K, "inradius": self.inradius,
                "violations": [v.to_dict() for v in self.violations]}


def validate(spec: ProblemSpec) -> ValidationReport:
    """Check every ellipticity bound cell by cell. Never raises."""
    K = spec.K
    violations: list[Violation] = []
    if K < 1.0:
        violations.append(Violation("K", -1, f"K = {K} is below 1"))
    inverse = 1.0 / K if K > 0 else 0.0
    lo = inverse * (1.0 - BOUND_TOL)
    hi = K * (1.0 + BOUND_TOL)

    for name, label in (("a", "a"), ("rho", "ρ")):
        profile: PiecewiseProfile = getattr(spec, name)
        for i, v in enumerate(profile.values):
            if v < lo:
                violations.append(Violation(name, i, f"{label} below K⁻¹ ({v} < {inverse})"))
            elif v > hi:
                violations.append(Violation(name, i, f"{label} above K ({v} > {K})"))

    # |b| + |c| on the common refinement; cell index refers to that refinement
    cells = union_breakpoints(spec.b, spec.c)
    total = np.abs(spec.b.on_cells(cells)) + np.abs(spec.c.on_cells(cells))
    for i, v in enumerate(total):
        if v > hi:
            violations.append(Violation("b+c", i, f"|b| + |c| above K ({v} > {K}) on "
                                                  f"({cells[i]}, {cells[i + 1]})"))

    if violations:
        logger.warning("[validate] %d bound violation(s)", len(violations))
    return ValidationReport(violations=violations, inradius=spec.omega.inradius, K=K)
