"""Tests unitarios para la curva de observabilidad y su ajuste exponencial."""

import logging
import math

import numpy as np
import pytest

from app.coefficients import ControlRegion, PiecewiseProfile, random_profile
from app.eigensolver import Mesh, solve_basis
from app.errors import NumericalRefusal, PreconditionError
from app.spectral_inequality import (RESIDUAL_FLAG, ObservabilityReport, default_mu_grid,
                                     fit_constant, gram_on_region, minimal_direction,
                                     observability_curve, random_coefficient_check)

WIDE = ControlRegion(((0.1, 0.9),))
NARROW = ControlRegion(((0.3, 0.5),))


def pi_grid(count):
    return math.pi * np.arange(1, count + 1)


class TestGram:
    """Matriz de Gram sobre ω."""

    def test_region_completa_es_la_identidad(self, unit_basis):
        gram = gram_on_region(unit_basis, ControlRegion(((0.0, 1.0),)), 10 * math.pi)
        np.testing.assert_allclose(gram, np.eye(10), atol=1e-8)

    def test_sin_modos(self, unit_basis):
        with pytest.raises(PreconditionError, match="no modes"):
            gram_on_region(unit_basis, NARROW, 1.0)

    def test_corte_cubre_todos_los_modos(self, caplog):
        basis = solve_basis(PiecewiseProfile.constant(1.0), m=2, mesh=Mesh(400))
        with caplog.at_level(logging.WARNING, logger="app.spectral_inequality"):
            gram = gram_on_region(basis, ControlRegion(((0.0, 0.5),)), 2 * math.pi)
        assert "covers all 2 computed modes" in caplog.text
        np.testing.assert_allclose(np.diag(gram), 0.5, atol=1e-4)
        assert abs(gram[0, 1]) == pytest.approx(4.0 / (3.0 * math.pi), abs=1e-4)

    def test_muestreo_con_todos_los_modos(self):
        basis = solve_basis(PiecewiseProfile.constant(1.0), m=5, mesh=Mesh(400))
        sampled = random_coefficient_check(basis, NARROW, 5 * math.pi, trials=50, seed=7)
        exact = observability_curve(basis, NARROW, [5 * math.pi]).ratios[0]
        assert 1.0 <= sampled <= exact * (1 + 1e-10)


class TestObservabilityCurve:
    """Cociente exacto por corte: monotonia y casos limite."""

    def test_region_completa(self, unit_basis):
        report = observability_curve(unit_basis, ControlRegion(((0.0, 1.0),)), pi_grid(10))
        np.testing.assert_allclose(report.ratios, 1.0, atol=1e-8)
        np.testing.assert_array_equal(report.mode_counts, np.arange(1, 11))

    def test_monotona(self, unit_basis):
        report = observability_curve(unit_basis, NARROW, pi_grid(12))
        assert report.finite
        assert np.all(np.diff(report.ratios) >= -1e-9 * report.ratios[1:])
        assert report.ratios[0] >= 1.0

    def test_densidad_rugosa(self, two_piece_basis):
        report = observability_curve(two_piece_basis, WIDE, pi_grid(5))
        assert np.all(np.diff(report.ratios) >= 0.0)

    def test_regiones_anidadas(self, two_piece_basis):
        grid = pi_grid(5)
        inner = observability_curve(two_piece_basis, ControlRegion(((0.35, 0.45),)), grid).ratios
        middle = observability_curve(two_piece_basis, NARROW, grid).ratios
        outer = observability_curve(two_piece_basis, WIDE, grid).ratios
        assert np.all(middle <= inner * (1 + 1e-9))
        assert np.all(outer <= middle * (1 + 1e-9))

    def test_grid_no_ascendente(self, unit_basis):
        with pytest.raises(PreconditionError, match="ascending"):
            observability_curve(unit_basis, NARROW, [2 * math.pi, math.pi])

    def test_paralelo_igual_a_secuencial(self, unit_basis):
        serial = observability_curve(unit_basis, NARROW, pi_grid(8), jobs=1)
        parallel = observability_curve(unit_basis, NARROW, pi_grid(8), jobs=3)
        np.testing.assert_array_equal(serial.ratios, parallel.ratios)

    def test_grid_por_defecto(self, unit_basis):
        grid = default_mu_grid(unit_basis)
        assert grid[0] == pytest.approx(math.pi)
        assert grid[-1] <= unit_basis.lambdas[-1] / 2.0
        assert default_mu_grid(unit_basis, 5 * math.pi + 0.1).size == 5

    def test_csv(self, unit_basis, tmp_path):
        report = observability_curve(unit_basis, NARROW, pi_grid(4))
        path = tmp_path / "specineq.csv"
        report.write_csv(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "mu,mode_count,ratio,log_ratio"
        assert len(lines) == 5


class TestFit:
    """Ajuste log ratio ≈ α + βμ."""

    def test_ajuste_exacto(self):
        mu = pi_grid(6)
        report = ObservabilityReport(mu_grid=mu, ratios=2.0 * np.exp(0.5 * mu),
                                     mode_counts=np.arange(1, 7))
        fit = fit_constant(report)
        assert fit.slope == pytest.approx(0.5)
        assert fit.intercept == pytest.approx(math.log(2.0))
        assert fit.N_hat == pytest.approx(2.0)
        assert not fit.flagged
        assert report.fit_slope == fit.slope

    def test_constante_envolvente(self):
        mu = pi_grid(5)
        ratios = 3.0 * np.exp(0.2 * mu)
        fit = fit_constant(ObservabilityReport(mu, ratios, np.arange(1, 6)))
        N = fit.envelope_N
        assert np.all(ratios <= N * np.exp(N * mu) * (1 + 1e-9))

    def test_curva_real(self, unit_basis):
        report = observability_curve(unit_basis, NARROW, pi_grid(10))
        fit = fit_constant(report)
        assert fit.slope > 0.0
        assert report.to_dict()["fit"]["N_hat"] == fit.N_hat

    def test_cociente_infinito(self):
        mu = pi_grid(5)
        ratios = np.array([1.0, 2.0, 4.0, 8.0, math.inf])
        report = ObservabilityReport(mu, ratios, np.arange(1, 6), sentinel_mu=[mu[-1]])
        with pytest.raises(NumericalRefusal, match="infinite"):
            fit_constant(report)
        fit = fit_constant(report, finite_only=True)
        assert fit.slope == pytest.approx(math.log(2.0) / math.pi)
        assert report.to_dict()["ratios"][-1] is None

    def test_pocos_puntos(self):
        report = ObservabilityReport(pi_grid(2), np.array([1.0, 2.0]), np.arange(1, 3))
        with pytest.raises(PreconditionError, match="three"):
            fit_constant(report)


class TestRandomCheck:
    """El muestreo aleatorio nunca supera el cociente exacto."""

    def test_monte_carlo_por_debajo(self, two_piece_basis):
        mu = 4 * math.pi
        exact = observability_curve(two_piece_basis, WIDE, [mu]).ratios[0]
        sampled = random_coefficient_check(two_piece_basis, WIDE, mu, trials=200, seed=3)
        assert sampled <= exact * (1 + 1e-10)

    def test_direccion_minima_alcanza_el_supremo(self, unit_basis):
        mu = 6 * math.pi
        exact = observability_curve(unit_basis, NARROW, [mu]).ratios[0]
        worst = minimal_direction(unit_basis, NARROW, mu)
        sampled = random_coefficient_check(unit_basis, NARROW, mu, trials=5, seed=1,
                                           candidates=worst)
        assert sampled == pytest.approx(exact, rel=1e-8)

    def test_determinista(self, unit_basis):
        first = random_coefficient_check(unit_basis, WIDE, 5 * math.pi, trials=20, seed=42)
        again = random_coefficient_check(unit_basis, WIDE, 5 * math.pi, trials=20, seed=42)
        assert first == again

    def test_sin_ensayos(self, unit_basis):
        with pytest.raises(PreconditionError):
            random_coefficient_check(unit_basis, WIDE, math.pi, trials=0, seed=0)


@pytest.fixture(scope="module")
def random_bases():
    """Cinco densidades a trozos con semilla fija, K = 4."""
    bases = []
    for seed in range(5):
        rho = random_profile(np.random.default_rng(seed), K=4.0, n_cells=4)
        bases.append(solve_basis(rho, m=30, mesh=Mesh(2000)))
    return bases


class TestRandomDensities:
    """Curvas sobre densidades aleatorias: finitas, monotonas y ajuste con bandera."""

    @pytest.mark.parametrize("index", range(5))
    def test_curva_y_ajuste(self, random_bases, index):
        basis = random_bases[index]
        grid = default_mu_grid(basis, 5 * math.pi + 0.1)
        report = observability_curve(basis, NARROW, grid)
        assert report.finite
        assert np.all(np.diff(report.ratios) >= -1e-9 * report.ratios[1:])
        fit = fit_constant(report)
        assert fit.max_residual >= 0.0
        assert fit.flagged == (fit.max_residual > RESIDUAL_FLAG * fit.fitted_range)
