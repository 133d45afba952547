"""Tests unitarios para el solver de Sturm–Liouville y sus extensiones."""

import math
import time

import numpy as np
import pytest

from app.coefficients import PiecewiseProfile, random_profile
from app.eigensolver import (Mesh, check_orthonormality, discrete_unit_eigenvalues,
                             extend_odd_periodic, extended_rho,
                             extension_residual, solve_basis, transfer_matrix_eigenvalues)
from app.errors import DomainError, PreconditionError


def two_piece(left, right, split=0.5):
    return PiecewiseProfile(np.array([0.0, split, 1.0]), np.array([left, right]))


class TestConstantDensity:
    """ρ ≡ 1: λ_k = kπ y e_k = √2 sin(kπx)."""

    def test_autovalores(self, unit_basis):
        k = np.arange(1, 21)
        rel = np.abs(unit_basis.lambdas[:20] - k * math.pi) / (k * math.pi)
        assert rel.max() <= 1e-4

    def test_tiempo(self):
        start = time.time()
        solve_basis(PiecewiseProfile.constant(1.0), m=20, mesh=Mesh(4000))
        assert time.time() - start < 10.0

    def test_autofunciones(self, unit_basis):
        x = unit_basis.nodes
        for k in range(1, 6):
            exact = math.sqrt(2.0) * np.sin(k * math.pi * x)
            assert np.abs(unit_basis.eigvecs[k - 1] - exact).max() <= 1e-3

    def test_signo(self, unit_basis):
        assert np.all(unit_basis.slopes[:, 0] > 0.0)

    def test_pendientes_recuperadas(self, unit_basis):
        x = unit_basis.nodes
        exact = math.sqrt(2.0) * 3 * math.pi * np.cos(3 * math.pi * x)
        assert np.abs(unit_basis.slopes[2] - exact).max() <= 1e-3 * 3 * math.pi

    def test_ortonormalidad(self, unit_basis):
        assert check_orthonormality(unit_basis).max_deviation <= 1e-8

    def test_conteo_bajo_corte(self, unit_basis):
        assert unit_basis.count_below(3 * math.pi) == 3
        assert unit_basis.count_below(0.5) == 0


class TestTransferMatrix:
    """Comparacion con el oraculo de matriz de transferencia."""

    def test_oraculo_densidad_constante(self):
        exact = transfer_matrix_eigenvalues(PiecewiseProfile.constant(1.0), 5)
        np.testing.assert_allclose(exact, math.pi * np.arange(1, 6), rtol=1e-13)

    @pytest.mark.parametrize("left,right", [(1.0, 4.0), (0.5, 2.0)])
    def test_dos_trozos(self, left, right):
        rho = two_piece(left, right)
        basis = solve_basis(rho, m=10, mesh=Mesh(8000))
        exact = transfer_matrix_eigenvalues(rho, 10)
        rel = np.abs(basis.lambdas - exact) / exact
        assert rel.max() <= 1e-6

    def test_oraculo_necesita_constante_a_trozos(self):
        from app.coefficients import TabulatedDensity

        with pytest.raises(PreconditionError):
            transfer_matrix_eigenvalues(TabulatedDensity([0.0, 1.0], [1.0], [2.0]), 3)

    def test_convergencia_de_segundo_orden(self):
        rho = two_piece(1.0, 4.0)
        exact = transfer_matrix_eigenvalues(rho, 3)[2]
        errors = [abs(solve_basis(rho, m=3, mesh=Mesh(n)).lambdas[2] - exact) for n in (100, 200, 400)]
        for coarse, fine in zip(errors, errors[1:]):
            assert 3.0 <= coarse / fine <= 5.0


class TestRoughDensity:
    """Densidades rugosas: cotas min-max, monotonia y ortonormalidad."""

    def test_cotas_min_max(self):
        rng = np.random.default_rng(11)
        for _ in range(3):
            rho = random_profile(rng, 4.0, 5)
            basis = solve_basis(rho, m=20, mesh=Mesh(1000))
            upper = 2.0 * np.sqrt(discrete_unit_eigenvalues(basis.mesh, 20))
            k = np.arange(1, 21)
            assert np.all(basis.lambdas >= k * math.pi / 2.0 * (1 - 1e-9))
            assert np.all(basis.lambdas <= upper * (1 + 1e-9))

    def test_monotonia_en_rho(self):
        light = solve_basis(two_piece(1.0, 2.0), m=10, mesh=Mesh(1000))
        heavy = solve_basis(two_piece(1.5, 2.0), m=10, mesh=Mesh(1000))
        assert np.all(light.lambdas >= heavy.lambdas)

    def test_ortonormalidad(self, two_piece_basis):
        assert check_orthonormality(two_piece_basis).max_deviation <= 1e-7

    def test_un_modo(self):
        basis = solve_basis(two_piece(1.0, 3.0), m=1, mesh=Mesh(500))
        assert check_orthonormality(basis).max_deviation <= 1e-10

    def test_malla_insuficiente(self):
        with pytest.raises(PreconditionError, match="n ≥ 400"):
            solve_basis(PiecewiseProfile.constant(1.0), m=40, mesh=Mesh(200))


class TestExtensions:
    """Extension impar y 2-periodica de los modos, par de ρ."""

    def test_impar(self, two_piece_basis):
        x = np.linspace(0.05, 0.95, 19)
        for k in (1, 4):
            np.testing.assert_allclose(extend_odd_periodic(two_piece_basis, k, -x),
                                       -extend_odd_periodic(two_piece_basis, k, x), atol=1e-12)

    def test_periodica(self, two_piece_basis):
        x = np.linspace(-0.9, 0.9, 19)
        np.testing.assert_allclose(extend_odd_periodic(two_piece_basis, 3, x + 2.0),
                                   extend_odd_periodic(two_piece_basis, 3, x), atol=1e-12)

    def test_rho_par(self, two_piece_basis):
        x = np.linspace(0.07, 0.93, 10)
        np.testing.assert_array_equal(extended_rho(two_piece_basis.rho, -x),
                                      extended_rho(two_piece_basis.rho, x))

    def test_indice_fuera_de_rango(self, two_piece_basis):
        with pytest.raises(DomainError):
            extend_odd_periodic(two_piece_basis, 0, 0.5)

    @pytest.mark.parametrize("center", [0.0, 0.5, 1.0])
    def test_ecuacion_debil_a_traves_de_los_bordes(self, unit_basis, center):
        for k in (1, 5, 12):
            assert extension_residual(unit_basis, k, center, width=0.05) <= 1e-6
