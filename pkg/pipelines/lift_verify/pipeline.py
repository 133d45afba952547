"""Harmonic-lift verification stage.

Artifacts:
    growth.csv — mu, trial, r, sup_norm, trace_norm of the random lifts
    cauchy.csv — trial, r, lhs, trace_norm, big_norm of the Cauchy-data pairs
    lift.json  — residuals of a single-mode lift, growth and Cauchy-data fits
"""

from __future__ import annotations

import numpy as np

from app.engine import AnalysisEngine
from app.lift_verify import (LiftGrid, cauchy_data_report, eval_lift, growth_report,
                             stream_residual, weak_residual)
from app.pipeline import Pipeline
from app.spectral_inequality import default_mu_grid

# Cutoffs sampled by the growth report
GROWTH_SAMPLES = 8
CAUCHY_RADII = (1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0)


class LiftVerifyPipeline(Pipeline):
    name = "lift-verify"
    description = "Check the harmonic lift, growth and Cauchy-data estimates."

    def run(self, engine: AnalysisEngine) -> dict:
        basis = engine.basis
        omega = engine.canonical.omega_tilde
        config = engine.config

        first = float(basis.lambdas[0])
        field = eval_lift(basis, [1.0], first, LiftGrid.around(omega))
        residuals = {"weak": weak_residual(field), **stream_residual(field)}

        mu_samples = default_mu_grid(basis, config.mu_max or None)[:GROWTH_SAMPLES]
        growth = growth_report(basis, omega, mu_samples, config.trials, config.seed,
                               jobs=config.jobs)
        cauchy = cauchy_data_report(basis, omega, config.trials, np.array(CAUCHY_RADII),
                                    config.seed + 1, jobs=config.jobs)

        engine.write_with(self.name, "growth.csv", growth.write_csv)
        engine.write_with(self.name, "cauchy.csv", cauchy.write_csv)
        engine.write_json(self.name, "lift.json", {
            "single_mode": {"mu": first, "residuals": residuals},
            "growth": growth.to_dict(),
            "cauchy": {**cauchy.to_dict(), "seed": config.seed + 1},
        })
        return {"weak_residual": residuals["weak"], "theta": cauchy.theta, "C_hat": cauchy.C_hat}
