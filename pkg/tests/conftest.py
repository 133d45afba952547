"""Fixtures compartidos: bases espectrales costosas y specs de ejemplo."""

import json
import math
from pathlib import Path

import numpy as np
import pytest

from app.coefficients import ControlRegion, NodalFunction, PiecewiseProfile, ProblemSpec
from app.eigensolver import Mesh, solve_basis

SPECS_DIR = Path(__file__).resolve().parent.parent / "specs"


def make_spec(a=(1.0,), b=(0.0,), c=(0.0,), rho=(1.0,), a_bp=None, b_bp=None, c_bp=None,
              rho_bp=None, K=4.0, omega=((0.3, 0.5),), T=1.0, z0=None) -> ProblemSpec:
    """ProblemSpec a partir de valores por celda; sin breakpoints, celdas uniformes."""

    def profile(values, bp):
        values = np.asarray(values, dtype=float)
        bp = np.linspace(0.0, 1.0, values.size + 1) if bp is None else np.asarray(bp, dtype=float)
        return PiecewiseProfile(bp, values)

    if z0 is None:
        z0 = lambda x: np.sin(math.pi * x)
    return ProblemSpec(
        a=profile(a, a_bp), b=profile(b, b_bp), c=profile(c, c_bp), rho=profile(rho, rho_bp),
        K=K, omega=ControlRegion(tuple(omega)), T=T, z0=NodalFunction.sample(z0, 256),
    )


@pytest.fixture
def spec_factory():
    return make_spec


@pytest.fixture(scope="session")
def unit_basis():
    """ρ ≡ 1, n = 4000, 60 modos."""
    return solve_basis(PiecewiseProfile.constant(1.0), m=60, mesh=Mesh(4000))


@pytest.fixture(scope="session")
def two_piece_basis():
    """ρ = 1 en (0, 0.5), 4 en (0.5, 1); n = 2000, 40 modos."""
    rho = PiecewiseProfile(np.array([0.0, 0.5, 1.0]), np.array([1.0, 4.0]))
    return solve_basis(rho, m=40, mesh=Mesh(2000))


@pytest.fixture(scope="session")
def rough_spec():
    """Coeficientes del caso de extremo a extremo con coeficientes rugosos."""
    return make_spec(a=(1.0, 4.0), a_bp=(0.0, 0.5, 1.0), b=(0.5,), c=(-0.5,),
                     rho=(1.0, 2.0), rho_bp=(0.0, 0.3, 1.0), K=4.0, omega=((0.55, 0.8),),
                     z0=lambda x: np.sin(math.pi * x) + 0.5 * np.sin(3 * math.pi * x))


@pytest.fixture
def demo_spec_path():
    return SPECS_DIR / "constant_demo.json"


@pytest.fixture
def demo_spec_data(demo_spec_path):
    return json.loads(demo_spec_path.read_text(encoding="utf-8"))


@pytest.fixture
def rough_spec_path():
    return SPECS_DIR / "rough_demo.json"
