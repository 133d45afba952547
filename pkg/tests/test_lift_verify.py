"""Tests unitarios para el levantamiento armonico y las medidas de crecimiento."""

import json
import logging
import math

import numpy as np
import pytest

from app.coefficients import ControlRegion, PiecewiseProfile
from app.eigensolver import Mesh, extend_odd_periodic, solve_basis
from app.errors import PreconditionError
from app.lift_verify import (LiftGrid, ball_profile, cauchy_data_report, eval_lift,
                             growth_report, radius_ladder, stream_residual, trace_norm,
                             weak_residual)

NARROW = ControlRegion(((0.3, 0.5),))
RADII = (1 / 16, 1 / 8, 1 / 4)


class TestEvalLift:
    """Evaluacion de u y v sobre la malla del levantamiento."""

    def test_paridad_y_traza(self, unit_basis):
        grid = LiftGrid.around(NARROW, 33)
        field = eval_lift(unit_basis, [1.0], 1.01 * math.pi, grid)
        mid = grid.ny // 2
        assert grid.ys[mid] == 0.0
        np.testing.assert_allclose(field.u[mid], extend_odd_periodic(unit_basis, 1, grid.xs),
                                   atol=1e-12)
        np.testing.assert_array_equal(field.v[mid], 0.0)

    def test_coeficiente_por_encima_del_corte(self, unit_basis):
        with pytest.raises(PreconditionError, match="above"):
            eval_lift(unit_basis, [1.0, 0.0, 0.5], 2.5 * math.pi, LiftGrid.around(NARROW, 17))

    def test_ceros_finales_permitidos(self, unit_basis):
        field = eval_lift(unit_basis, [1.0, 0.0, 0.0], 1.5 * math.pi, LiftGrid.around(NARROW, 17))
        assert field.count == 1


class TestResiduals:
    """Residuo debil y relaciones de la funcion de corriente."""

    def test_modo_unico(self, unit_basis):
        field = eval_lift(unit_basis, [1.0], 1.01 * math.pi, LiftGrid.around(NARROW, 65))
        assert weak_residual(field) <= 1e-10

    def test_coeficientes_nulos(self, unit_basis):
        field = eval_lift(unit_basis, np.zeros(4), 4.5 * math.pi, LiftGrid.around(NARROW, 17))
        assert weak_residual(field) == 0.0
        assert stream_residual(field) == {"system": 0.0, "elliptic": 0.0}

    def test_varios_modos_densidad_rugosa(self, two_piece_basis):
        rng = np.random.default_rng(5)
        mu = 4 * math.pi
        coeffs = rng.standard_normal(two_piece_basis.count_below(mu))
        field = eval_lift(two_piece_basis, coeffs, mu, LiftGrid.around(NARROW, 65))
        assert weak_residual(field) <= 1e-8

    def test_corriente_segundo_orden_densidad_constante(self, unit_basis):
        coeffs = np.array([1.0, -0.5, 0.25])
        res = [stream_residual(eval_lift(unit_basis, coeffs, 3.5 * math.pi,
                                         LiftGrid.around(NARROW, n)))["system"]
               for n in (33, 65, 129)]
        for coarse, fine in zip(res, res[1:]):
            assert coarse / fine >= 3.0

    def test_corriente_converge_con_saltos(self, two_piece_basis):
        coeffs = np.array([1.0, 0.5, -0.5])
        mu = 1.01 * two_piece_basis.lambdas[2]
        coarse, fine = (stream_residual(eval_lift(two_piece_basis, coeffs, mu,
                                                  LiftGrid.around(NARROW, n)))
                        for n in (33, 129))
        assert fine["system"] <= coarse["system"] / 2.0
        assert math.isfinite(fine["elliptic"])


class TestBallNorms:
    """Normas sobre bolas centradas en ω."""

    def test_escalera_de_radios(self):
        np.testing.assert_allclose(radius_ladder(0.1), [0.05, 0.0625, 0.125, 0.25, 0.5, 1.0])

    def test_perfil_monotono(self, unit_basis):
        coeffs = np.array([0.3, -1.0, 0.7, 0.2])
        profile = ball_profile(unit_basis, coeffs, 0.4, radius_ladder(0.1))
        assert np.all(np.diff(profile) >= 0.0)

    def test_traza_de_un_modo(self, unit_basis):
        assert trace_norm(unit_basis, np.array([1.0]), 0.5, 0.5) == pytest.approx(1.0, abs=1e-6)
        assert trace_norm(unit_basis, np.array([]), 0.5, 0.5) == 0.0


class TestGrowthReport:
    """Duplicacion, tres bolas y observabilidad de frontera."""

    def test_reporte(self, unit_basis):
        mus = [2 * math.pi, 4 * math.pi, 6 * math.pi]
        report = growth_report(unit_basis, NARROW, mus, trials=3, seed=5, jobs=1)
        assert report.doubling_fit is not None
        assert len(report.rows) == 3 * 3 * report.radii.size
        for mu in mus:
            for trial in range(3):
                sups = [row["sup_norm"] for row in report.rows
                        if row["mu"] == mu and row["trial"] == trial]
                assert np.all(np.diff(sups) >= 0.0)
        assert all(v >= 0.0 for v in report.doubling_log_ratio.values())
        json.dumps(report.to_dict())

    def test_independiente_de_jobs(self, unit_basis):
        mus = [2 * math.pi, 3 * math.pi]
        serial = growth_report(unit_basis, NARROW, mus, trials=2, seed=9, jobs=1)
        parallel = growth_report(unit_basis, NARROW, mus, trials=2, seed=9, jobs=2)
        assert serial.rows == parallel.rows

    def test_corte_sin_modos(self, unit_basis):
        report = growth_report(unit_basis, NARROW, [1.0, 2 * math.pi], trials=1, seed=0)
        assert report.skipped and "no modes" in report.skipped[0]

    def test_corte_cubre_todos_los_modos(self, caplog):
        basis = solve_basis(PiecewiseProfile.constant(1.0), m=3, mesh=Mesh(400))
        with caplog.at_level(logging.WARNING, logger="app.lift_verify"):
            report = growth_report(basis, NARROW, [4 * math.pi], trials=1, seed=3, jobs=1)
        assert "covers all 3 computed modes" in caplog.text
        assert len(report.rows) == report.radii.size

    def test_csv(self, unit_basis, tmp_path):
        report = growth_report(unit_basis, NARROW, [2 * math.pi], trials=1, seed=1)
        path = tmp_path / "growth.csv"
        report.write_csv(path)
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "mu,trial,r,sup_norm,trace_norm"
        assert len(lines) == 1 + report.radii.size


class TestCauchyData:
    """Estimacion por datos de Cauchy: exponente en (0, 1) y sin violaciones."""

    def test_exponente(self, unit_basis):
        report = cauchy_data_report(unit_basis, NARROW, trials=4, r_grid=RADII, seed=7)
        assert 0.0 < report.theta < 1.0
        assert report.violations == 0
        assert report.pairs == 12 and report.excluded == 0
        assert report.C_hat > 0.0

    def test_densidad_rugosa(self, two_piece_basis):
        report = cauchy_data_report(two_piece_basis, ControlRegion(((0.55, 0.8),)),
                                    trials=3, r_grid=RADII, seed=2)
        assert 0.0 < report.theta < 1.0
        assert report.violations == 0

    def test_estable_entre_lotes(self, unit_basis):
        first = cauchy_data_report(unit_basis, NARROW, trials=100, r_grid=RADII, seed=11)
        second = cauchy_data_report(unit_basis, NARROW, trials=100, r_grid=RADII, seed=12)
        for report in (first, second):
            assert 0.0 < report.theta < 1.0
            assert math.isfinite(report.C_hat)
            assert report.violations == 0 and report.pairs == 300
        assert second.theta == pytest.approx(first.theta, rel=0.2)
        assert second.C_hat == pytest.approx(first.C_hat, rel=0.2)

    def test_coeficientes_explicitos(self, unit_basis):
        report = cauchy_data_report(unit_basis, NARROW, trials=0, r_grid=RADII, seed=0,
                                    coefficient_sets=[[1.0], [0.0, 1.0]])
        assert report.pairs == 6

    @pytest.mark.parametrize("r_grid", [(0.0, 0.1), (0.1, 0.3), ()])
    def test_radios_invalidos(self, unit_basis, r_grid):
        with pytest.raises(PreconditionError, match="1/4"):
            cauchy_data_report(unit_basis, NARROW, trials=1, r_grid=r_grid, seed=0)
