"""Tests de la linea de comandos: codigos de salida, manifiesto, cache y determinismo."""

import json

import pytest
from click.testing import CliRunner

from app.engine import RunConfig
from app.main import STAGES, cli, run

FAST = ["--mesh-n", "400", "--modes", "20"]


def invoke(command, spec, out, *extra):
    runner = CliRunner()
    return runner.invoke(cli, [command, "--spec", str(spec), "--out", str(out), *FAST, *extra])


def manifest(out):
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


@pytest.fixture
def invalid_spec(demo_spec_data, tmp_path):
    demo_spec_data["a"]["values"] = [5.0]
    path = tmp_path / "invalid.json"
    path.write_text(json.dumps(demo_spec_data), encoding="utf-8")
    return path


class TestExitCodes:
    """Errores de esquema, precondiciones y comandos desconocidos."""

    def test_json_mal_formado(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"a": {"breakpoints": [0, 1], "values": [1', encoding="utf-8")
        out = tmp_path / "out"
        result = invoke("validate", bad, out)
        assert result.exit_code == 1
        assert not out.exists()

    def test_spec_inexistente(self, tmp_path):
        out = tmp_path / "out"
        result = invoke("reduce", tmp_path / "missing.json", out)
        assert result.exit_code == 1
        assert not out.exists()

    def test_validate_no_falla_con_spec_invalida(self, invalid_spec, tmp_path):
        out = tmp_path / "out"
        result = invoke("validate", invalid_spec, out)
        assert result.exit_code == 0
        report = json.loads((out / "validation.json").read_text(encoding="utf-8"))
        assert report["valid"] is False
        assert report["violations"][0]["coefficient"] == "a"

    def test_reduce_rechaza_spec_invalida(self, invalid_spec, tmp_path):
        result = invoke("reduce", invalid_spec, tmp_path / "out")
        assert result.exit_code == 2

    def test_demasiados_modos(self, demo_spec_path, tmp_path):
        runner = CliRunner()
        result = runner.invoke(cli, ["eigs", "--spec", str(demo_spec_path),
                                     "--out", str(tmp_path / "out"),
                                     "--mesh-n", "100", "--modes", "20"])
        assert result.exit_code == 2

    def test_comando_desconocido(self, demo_spec_path, tmp_path):
        assert run(RunConfig(command="nope", spec_path=str(demo_spec_path),
                             out_dir=str(tmp_path))) == 2

    def test_semilla_negativa(self, demo_spec_path, tmp_path):
        result = invoke("validate", demo_spec_path, tmp_path / "out", "--seed", "-1")
        assert result.exit_code == 2

    def test_fallo_numerico_inesperado(self, demo_spec_path, tmp_path, monkeypatch):
        from pipelines.eigs.pipeline import EigsPipeline

        def broken(self, engine):
            engine.write_json(self.name, "eigs.json", {"partial": True})
            raise ValueError("rtol too small")

        monkeypatch.setattr(EigsPipeline, "run", broken)
        out = tmp_path / "out"
        result = invoke("eigs", demo_spec_path, out)
        assert result.exit_code == 3
        assert manifest(out)["stages"][0]["stage"] == "eigs"


class TestArtifacts:
    """Manifiesto, semillas y reutilizacion de la cache."""

    def test_validate(self, demo_spec_path, tmp_path):
        out = tmp_path / "out"
        result = invoke("validate", demo_spec_path, out, "--seed", "17")
        assert result.exit_code == 0
        data = manifest(out)
        assert data["command"] == "validate" and data["seed"] == 17
        assert data["spec"] == "constant_demo.json"
        assert [s["stage"] for s in data["stages"]] == ["validate"]
        assert data["stages"][0]["files"][0]["path"] == "validation.json"
        assert json.loads((out / "validation.json").read_text(encoding="utf-8"))["seed"] == 17

    def test_cache_en_segunda_ejecucion(self, demo_spec_path, tmp_path):
        out = tmp_path / "out"
        assert invoke("eigs", demo_spec_path, out).exit_code == 0
        assert manifest(out)["stages"][0]["cached"] is False
        assert invoke("eigs", demo_spec_path, out).exit_code == 0
        assert manifest(out)["stages"][0]["cached"] is True
        assert any((out / "cache").glob("basis-*.json"))

    def test_eigs_compara_con_el_oraculo(self, demo_spec_path, tmp_path):
        out = tmp_path / "out"
        assert invoke("eigs", demo_spec_path, out).exit_code == 0
        report = json.loads((out / "eigs.json").read_text(encoding="utf-8"))
        oracle = report["transfer_matrix"]
        assert oracle["modes"] == 10
        assert oracle["max_relative_error"] <= 1e-2

    def test_reduce(self, demo_spec_path, tmp_path):
        out = tmp_path / "out"
        assert invoke("reduce", demo_spec_path, out).exit_code == 0
        header = (out / "reduction.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header == "x,y,w,B,rho_tilde_left,rho_tilde_right"
        canonical = json.loads((out / "canonical.json").read_text(encoding="utf-8"))
        assert canonical["L"] == pytest.approx(1.0)


class TestDeterminism:
    """Misma semilla, mismos bytes."""

    @pytest.mark.parametrize("command,files", [
        ("specineq", ["specineq.csv", "specineq.json"]),
        ("synthesize", ["control.csv", "control.json"]),
    ])
    def test_artefactos_identicos(self, demo_spec_path, tmp_path, command, files):
        first, second = tmp_path / "a", tmp_path / "b"
        assert invoke(command, demo_spec_path, first, "--seed", "5").exit_code == 0
        assert invoke(command, demo_spec_path, second, "--seed", "5").exit_code == 0
        for name in files + ["manifest.json"]:
            assert (first / name).read_bytes() == (second / name).read_bytes()


@pytest.mark.slow
class TestFullPipeline:
    """Todas las etapas sobre el ejemplo de coeficientes constantes."""

    def test_pipeline_completo(self, demo_spec_path, tmp_path):
        out = tmp_path / "out"
        runner = CliRunner()
        result = runner.invoke(cli, ["full-pipeline", "--spec", str(demo_spec_path),
                                     "--out", str(out), "--mesh-n", "600", "--modes", "60"])
        assert result.exit_code == 0
        data = manifest(out)
        assert [s["stage"] for s in data["stages"]] == STAGES
        assert all(s["files"] for s in data["stages"])
        summary = json.loads((out / "control.json").read_text(encoding="utf-8"))["summary"]
        assert summary["relative_final_norm"] <= 1e-6
