"""Tests unitarios para perfiles de coeficientes, specs y validacion."""

import json
import math

import numpy as np
import pytest

from app.coefficients import (ControlRegion, NodalFunction, PiecewiseProfile, ProblemSpec,
                              TabulatedDensity, integrate, load_problem, random_profile,
                              union_breakpoints, validate)
from app.errors import DomainError, PreconditionError, SchemaError


class TestPiecewiseProfile:
    """Construccion y evaluacion de perfiles constantes a trozos."""

    def test_eval_continua_por_la_derecha(self):
        p = PiecewiseProfile([0.0, 0.5, 1.0], [1.0, 4.0])
        assert p.eval(0.25) == 1.0
        assert p.eval(0.5) == 4.0
        assert p.eval(1.0) == 4.0
        assert p.eval(0.0) == 1.0

    def test_eval_vectorial(self):
        p = PiecewiseProfile([0.0, 0.3, 1.0], [2.0, 3.0])
        np.testing.assert_array_equal(p(np.array([0.1, 0.3, 0.9])), [2.0, 3.0, 3.0])

    def test_fuera_del_intervalo(self):
        p = PiecewiseProfile.constant(1.0)
        with pytest.raises(DomainError):
            p.eval(1.5)
        with pytest.raises(ValueError):
            p.eval(-0.1)

    def test_breakpoints_no_crecientes(self):
        with pytest.raises(PreconditionError):
            PiecewiseProfile([0.0, 0.6, 0.4, 1.0], [1.0, 1.0, 1.0])

    def test_breakpoints_no_empiezan_en_cero(self):
        with pytest.raises(PreconditionError):
            PiecewiseProfile([0.1, 1.0], [1.0])

    def test_numero_de_valores(self):
        with pytest.raises(PreconditionError):
            PiecewiseProfile([0.0, 0.5, 1.0], [1.0])

    def test_saltos(self):
        p = PiecewiseProfile([0.0, 0.2, 0.6, 1.0], [1.0, 1.0, 3.0])
        assert p.jumps() == [(0.6, 2.0)]

    def test_valores_en_refinamiento(self):
        p = PiecewiseProfile([0.0, 0.5, 1.0], [1.0, 4.0])
        np.testing.assert_array_equal(p.on_cells(np.array([0.0, 0.25, 0.5, 0.75, 1.0])),
                                      [1.0, 1.0, 4.0, 4.0])

    def test_union_de_breakpoints(self):
        p = PiecewiseProfile([0.0, 0.5, 1.0], [1.0, 4.0])
        q = PiecewiseProfile([0.0, 0.3, 1.0], [1.0, 2.0])
        np.testing.assert_array_equal(union_breakpoints(p, q), [0.0, 0.3, 0.5, 1.0])

    def test_perfil_aleatorio_respeta_k(self):
        rng = np.random.default_rng(7)
        p = random_profile(rng, 4.0, 6)
        lo, hi = p.bounds()
        assert 0.25 <= lo and hi <= 4.0
        assert p.breakpoints[0] == 0.0 and p.breakpoints[-1] == 1.0


class TestTabulatedDensity:
    """Densidad lineal a trozos con saltos en los nodos."""

    def test_interpolacion_lineal_y_salto(self):
        d = TabulatedDensity([0.0, 0.5, 1.0], [1.0, 4.0], [2.0, 4.0])
        assert d(0.25) == pytest.approx(1.5)
        assert d(0.5) == 4.0
        assert d.bounds() == (1.0, 4.0)

    def test_fuera_del_intervalo(self):
        d = TabulatedDensity([0.0, 1.0], [1.0], [1.0])
        with pytest.raises(DomainError):
            d(1.01)


class TestIntegrate:
    """Cuadratura de Gauss compuesta partida en los breakpoints."""

    def test_exacta_para_constantes_a_trozos(self):
        p = PiecewiseProfile([0.0, 0.3, 1.0], [2.0, 5.0])
        value = integrate(p, (0.0, 1.0), p.breakpoints)
        assert value == pytest.approx(0.3 * 2.0 + 0.7 * 5.0, abs=1e-14)

    def test_exacta_para_polinomios(self):
        value = integrate(lambda x: x ** 9, (0.0, 1.0))
        assert value == pytest.approx(0.1, abs=1e-14)

    def test_intervalo_vacio(self):
        assert integrate(lambda x: x, (0.5, 0.5)) == 0.0


class TestControlRegion:
    """Region de control: inradio y consultas de pertenencia."""

    def test_inradio_es_la_mayor_semilongitud(self):
        omega = ControlRegion(((0.1, 0.2), (0.4, 0.8)))
        assert omega.inradius == pytest.approx(0.2)
        assert omega.center == pytest.approx(0.6)
        assert omega.measure == pytest.approx(0.5)

    def test_abierta(self):
        omega = ControlRegion(((0.3, 0.5),))
        np.testing.assert_array_equal(omega.contains(np.array([0.3, 0.4, 0.5])),
                                      [False, True, False])

    def test_solapada(self):
        with pytest.raises(PreconditionError):
            ControlRegion(((0.1, 0.4), (0.3, 0.6)))

    def test_vacia(self):
        with pytest.raises(PreconditionError):
            ControlRegion(())

    def test_inclusion(self):
        big = ControlRegion(((0.2, 0.6),))
        assert big.includes(ControlRegion(((0.3, 0.5),)))
        assert not big.includes(ControlRegion(((0.5, 0.7),)))


class TestValidate:
    """validate nunca lanza y lista cada cota violada con su celda."""

    def test_spec_valida(self, spec_factory):
        report = validate(spec_factory())
        assert report.valid
        assert report.inradius == pytest.approx(0.1)

    def test_a_por_encima_de_k(self, spec_factory):
        report = validate(spec_factory(a=(1.0, 5.0), K=4.0))
        assert not report.valid
        assert [(v.coefficient, v.cell) for v in report.violations] == [("a", 1)]

    def test_rho_por_debajo_de_k_inverso(self, spec_factory):
        report = validate(spec_factory(rho=(0.2, 1.0, 1.0), K=4.0))
        assert [(v.coefficient, v.cell) for v in report.violations] == [("rho", 0)]

    def test_suma_b_c(self, spec_factory):
        report = validate(spec_factory(b=(3.0,), c=(-2.0,), K=4.0))
        assert report.violations[0].coefficient == "b+c"

    def test_k_nulo_no_lanza(self, spec_factory):
        report = validate(spec_factory(a=(-1.0, 1.0), K=0.0))
        assert not report.valid
        found = [(v.coefficient, v.cell) for v in report.violations]
        assert ("K", -1) in found and ("a", 0) in found

    def test_reporte_serializable(self, spec_factory):
        data = validate(spec_factory(a=(5.0,), K=4.0)).to_dict()
        assert data["valid"] is False
        json.dumps(data)


class TestProblemSpec:
    """Lectura de specs JSON y errores de esquema."""

    def test_carga_el_demo(self, demo_spec_path):
        spec = load_problem(demo_spec_path)
        assert spec.T == 1.0
        assert spec.z0.mesh_n == 64
        assert spec.z0(0.0) == 0.0

    def test_ida_y_vuelta(self, demo_spec_data):
        spec = ProblemSpec.from_dict(demo_spec_data)
        again = ProblemSpec.from_dict(spec.to_dict())
        np.testing.assert_array_equal(again.z0.values, spec.z0.values)
        assert again.omega.to_list() == spec.omega.to_list()

    def test_falta_una_clave(self, demo_spec_data):
        del demo_spec_data["rho"]
        with pytest.raises(SchemaError, match="rho"):
            ProblemSpec.from_dict(demo_spec_data)

    def test_perfil_mal_formado(self, demo_spec_data):
        demo_spec_data["a"]["values"] = [1.0, 2.0]
        with pytest.raises(SchemaError):
            ProblemSpec.from_dict(demo_spec_data)

    def test_json_mal_formado(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"a": [1, 2', encoding="utf-8")
        with pytest.raises(SchemaError, match="offset"):
            load_problem(path)

    def test_horizonte_no_positivo(self, demo_spec_data):
        demo_spec_data["T"] = 0.0
        with pytest.raises(SchemaError):
            ProblemSpec.from_dict(demo_spec_data)

    def test_funcion_nodal(self):
        f = NodalFunction.sample(lambda x: np.sin(math.pi * x), 64)
        assert f(0.5) == pytest.approx(1.0)
        with pytest.raises(PreconditionError):
            NodalFunction(4, np.zeros(3))
