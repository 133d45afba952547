"""Command-line entry point of the null-control lab.

Every command is a Pipeline subclass in ``pipelines/<name>/pipeline.py``,
loaded by name at startup.  ``full-pipeline`` runs the stages in order over
one shared engine.  Library refusals become exit codes here and nowhere
else: 1 schema error, 2 precondition refusal, 3 numerical refusal.

    python -m app.main full-pipeline --spec specs/constant_demo.json --out out/
"""

import importlib
import inspect
import json
import logging
import sys
import time

import click
import numpy as np

from .config import settings
from .engine import AnalysisEngine, RunConfig
from .errors import LabError, NumericalRefusal
from .pipeline import Pipeline

logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format="%(asctime)s [%(levelname)s] %(message)s",
)
logger = logging.getLogger(__name__)

STAGES = ["validate", "reduce", "eigs", "specineq", "lift-verify", "synthesize", "simulate"]


def _discover_pipelines(names: list[str]) -> list[Pipeline]:
    """Import pipeline modules and return instantiated Pipeline subclasses."""
    pipelines: list[Pipeline] = []
    for name in names:
        module_path = f"pipelines.{name.replace('-', '_')}.pipeline"
        try:
            module = importlib.import_module(module_path)
        except ModuleNotFoundError:
            logger.error("Pipeline '%s' not found at %s", name, module_path)
            continue

        found = False
        for _attr_name, obj in inspect.getmembers(module, inspect.isclass):
            if issubclass(obj, Pipeline) and obj is not Pipeline:
                pipelines.append(obj())
                found = True
                break

        if not found:
            logger.error("No Pipeline subclass found in %s", module_path)

    return pipelines


def run(config: RunConfig) -> int:
    """Run one command; returns the process exit code."""
    start = time.time()
    names = STAGES if config.command == "full-pipeline" else [config.command]
    pipelines = _discover_pipelines(names)
    if len(pipelines) != len(names):
        logger.error("Could not load every stage of '%s'", config.command)
        return 2

    try:
        engine = AnalysisEngine(config)
    except LabError as e:
        logger.error("%s", e)
        return e.exit_code

    logger.info("[run] %s on %s (seed=%d, out=%s)",
                config.command, config.spec_path, config.seed, config.out_dir)
    code = 0
    try:
        for pipeline in pipelines:
            stage_start = time.time()
            summary = pipeline.run(engine)
            logger.info("[%s] done (%.2fs) %s", pipeline.name, time.time() - stage_start,
                        json.dumps(summary, sort_keys=True, default=str))
    except LabError as e:
        logger.error("[%s] %s: %s", pipeline.name, type(e).__name__, e)
        code = e.exit_code
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as e:
        logger.exception("[%s] unexpected numerical failure: %s", pipeline.name, e)
        code = NumericalRefusal.exit_code

    if engine.artifacts:
        manifest_path = engine.out_dir / "manifest.json"
        manifest_path.write_text(json.dumps(engine.manifest(), indent=2) + "\n", encoding="utf-8")
        logger.info("[run] manifest: %s", manifest_path)
    logger.info("[run] %s finished with exit code %d (%.2fs)",
                config.command, code, time.time() - start)
    return code


# ── Click surface ──────────────────────────────────────────


def _options(fn):
    options = [
        click.option("--spec", "spec_path", required=True,
                     type=click.Path(dir_okay=False), help="Problem spec JSON"),
        click.option("--out", "out_dir", default=settings.OUT_DIR, show_default=True,
                     type=click.Path(file_okay=False), help="Artifact directory"),
        click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=settings.SEED,
                     show_default=True, help="Base random seed"),
        click.option("--mesh-n", type=click.IntRange(2), default=settings.MESH_N,
                     show_default=True, help="Eigensolver mesh cells"),
        click.option("--modes", type=click.IntRange(1), default=settings.MODES,
                     show_default=True, help="Eigenpairs to compute"),
        click.option("--dt", type=float, default=settings.DT, show_default=True,
                     help="Crank–Nicolson time step"),
        click.option("--mu-max", type=float, default=settings.MU_MAX, show_default=True,
                     help="Largest frequency cutoff of sweeps (0 = automatic)"),
        click.option("--tol", type=float, default=settings.TOL, show_default=True,
                     help="Control plan tolerance"),
        click.option("--jobs", type=click.IntRange(1), default=settings.JOBS,
                     show_default=True, help="Worker threads for sweeps"),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
def cli():
    """Numerical null-controllability lab for 1-D parabolic equations."""


def _make_command(name: str, help_text: str):
    @cli.command(name=name, help=help_text)
    @_options
    def command(**kwargs):
        code = run(RunConfig(command=name, **kwargs))
        sys.exit(code)

    return command


_HELP = {
    "validate": "Check the coefficient bounds of a problem spec.",
    "reduce": "Reduce the problem to canonical form.",
    "eigs": "Compute the Dirichlet eigenbasis of the canonical density.",
    "specineq": "Sweep observability ratios over frequency cutoffs.",
    "lift-verify": "Check the harmonic lift, growth and Cauchy-data estimates.",
    "synthesize": "Build the time-sliced null control.",
    "simulate": "Simulate the controlled system in both coordinate systems.",
    "full-pipeline": "Run every stage in order.",
}

for _name in STAGES + ["full-pipeline"]:
    _make_command(_name, _HELP[_name])


if __name__ == "__main__":
    cli()
