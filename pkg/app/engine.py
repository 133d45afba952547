"""Shared compute engine — loads the problem once and builds each stage on demand.

The canonical system and the eigenbasis are the expensive pieces; both go
through the on-disk cache so later commands on the same spec and
resolution skip the recomputation.  Every file a stage writes is
registered here so the CLI can list it in the manifest.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .cache import ArtifactCache, cache_key
from .coefficients import PiecewiseProfile, ProblemSpec, load_problem, validate
from .config import settings
from .eigensolver import EigenBasis, Mesh, solve_basis
from .errors import PreconditionError
from .reduction import CanonicalSystem, build_canonical, map_state_forward

logger = logging.getLogger(__name__)


@dataclass
class RunConfig:
    """One CLI invocation: command, paths, seed and resolution overrides."""

    command: str
    spec_path: str
    out_dir: str = field(default_factory=lambda: settings.OUT_DIR)
    seed: int = field(default_factory=lambda: settings.SEED)
    mesh_n: int = field(default_factory=lambda: settings.MESH_N)
    modes: int = field(default_factory=lambda: settings.MODES)
    dt: float = field(default_factory=lambda: settings.DT)
    mu_max: float = field(default_factory=lambda: settings.MU_MAX)
    tol: float = field(default_factory=lambda: settings.TOL)
    jobs: int = field(default_factory=lambda: settings.JOBS)
    grid_n: int = field(default_factory=lambda: settings.REDUCTION_GRID_N)
    sim_mesh_n: int = field(default_factory=lambda: settings.SIM_MESH_N)
    n_max: int = field(default_factory=lambda: settings.N_MAX)
    trials: int = field(default_factory=lambda: settings.TRIALS)

    @property
    def resolution(self) -> dict:
        data = asdict(self)
        for key in ("command", "spec_path", "out_dir"):
            data.pop(key)
        return data

    @property
    def N_max(self) -> int:
        return min(self.n_max, self.modes)


@dataclass
class Artifact:
    path: Path
    sha256: str
    size: int

    def to_dict(self, root: Path) -> dict:
        return {"path": self.path.relative_to(root).as_posix(), "sha256": self.sha256,
                "bytes": self.size}


def file_digest(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def piecewise_density(density) -> PiecewiseProfile | None:
    """The density as a PiecewiseProfile if it is constant on every cell."""
    if isinstance(density, PiecewiseProfile):
        return density
    if not np.array_equal(density.start, density.end):
        return None
    values = density.start
    keep = np.concatenate(([True], values[1:] != values[:-1]))
    breakpoints = np.append(density.nodes[:-1][keep], 1.0)
    return PiecewiseProfile(breakpoints, values[keep])


class AnalysisEngine:
    """Holds the spec, canonical system, basis and control of one run.

    The spec is parsed in the constructor, before the output directory is
    touched, so a malformed spec leaves no files behind.
    """

    def __init__(self, config: RunConfig):
        self.config = config
        self.spec: ProblemSpec = load_problem(config.spec_path)
        self.spec_sha256 = file_digest(Path(config.spec_path))
        self.out_dir = Path(config.out_dir)
        self.cache = ArtifactCache(self.out_dir / "cache")
        self.cached: set[str] = set()
        self.artifacts: dict[str, list[Artifact]] = {}
        self._canonical: CanonicalSystem | None = None
        self._basis: EigenBasis | None = None
        self._synthesis = None

    # ── Stages ─────────────────────────────────────────────

    def _spec_key(self, *extra) -> str:
        return cache_key(self.spec.to_dict(), self.config.grid_n, *extra)

    @property
    def canonical(self) -> CanonicalSystem:
        if self._canonical is None:
            report = validate(self.spec)
            if not report.valid:
                first = report.violations[0]
                raise PreconditionError(
                    f"spec violates its bounds ({len(report.violations)} violation(s)); "
                    f"first: {first.coefficient} cell {first.cell}: {first.message}")
            key = self._spec_key()
            system = self.cache.get("canonical", key)
            if system is None:
                system = build_canonical(self.spec, grid_n=self.config.grid_n)
                self.cache.put("canonical", key, system)
            else:
                self.cached.add("reduce")
            self._canonical = system
        return self._canonical

    @property
    def basis(self) -> EigenBasis:
        if self._basis is None:
            key = self._spec_key(self.config.mesh_n, self.config.modes)
            basis = self.cache.get("basis", key)
            if basis is None:
                basis = solve_basis(self.canonical.rho_tilde, m=self.config.modes,
                                    mesh=Mesh(self.config.mesh_n))
                self.cache.put("basis", key, basis)
            else:
                self.cached.add("eigs")
            self._basis = basis
        return self._basis

    def canonical_z0(self) -> np.ndarray:
        """Mode coefficients of the mapped initial state."""
        z0 = map_state_forward(self.spec.z0, self.canonical)
        return self.basis.project(z0, self.config.N_max)

    @property
    def synthesis(self):
        if self._synthesis is None:
            from .lr_control import make_plan, synthesize

            basis = self.basis
            mu_0 = settings.MU_0 or float(basis.lambdas[0])
            plan = make_plan(self.spec.T, mu_0, self.config.tol, lambdas=basis.lambdas,
                             N_max=self.config.N_max)
            self._synthesis = synthesize(self.canonical_z0(), plan, basis,
                                         self.canonical.omega_tilde)
        return self._synthesis

    # ── Artifacts ──────────────────────────────────────────

    def path(self, stage: str, name: str) -> Path:
        """Reserve *name* in the output directory for *stage*."""
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        self.artifacts.setdefault(stage, [])
        return path

    def record(self, stage: str, path: Path) -> Path:
        self.artifacts.setdefault(stage, []).append(
            Artifact(path, file_digest(path), path.stat().st_size))
        return path

    def write_json(self, stage: str, name: str, data: dict) -> Path:
        path = self.path(stage, name)
        payload = {"seed": self.config.seed, **data}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n",
                        encoding="utf-8")
        return self.record(stage, path)

    def write_with(self, stage: str, name: str, writer) -> Path:
        """Call ``writer(path)`` and register the file."""
        path = self.path(stage, name)
        writer(path)
        return self.record(stage, path)

    def manifest(self) -> dict:
        return {
            "command": self.config.command,
            "spec": Path(self.config.spec_path).name,
            "spec_sha256": self.spec_sha256,
            "seed": self.config.seed,
            "resolution": self.config.resolution,
            "stages": [
                {"stage": stage, "cached": stage in self.cached,
                 "files": [a.to_dict(self.out_dir) for a in files]}
                for stage, files in self.artifacts.items()
            ],
        }
