"""Observability sweep stage.

Artifacts:
    specineq.csv  — mu, mode_count, ratio, log_ratio
    specineq.json — fit of log ratio against μ and a seeded Monte-Carlo
                    lower check at the top finite cutoff

With the automatic grid (``--mu-max 0``) the fit stops at the last finite
ratio; an explicit ``--mu-max`` that reaches the ∞ sentinel is refused.
"""

from __future__ import annotations

import logging

import numpy as np

from app.engine import AnalysisEngine
from app.pipeline import Pipeline
from app.spectral_inequality import (default_mu_grid, fit_constant, observability_curve,
                                     random_coefficient_check)

logger = logging.getLogger(__name__)


class SpecineqPipeline(Pipeline):
    name = "specineq"
    description = "Sweep observability ratios over frequency cutoffs."

    def run(self, engine: AnalysisEngine) -> dict:
        basis = engine.basis
        omega = engine.canonical.omega_tilde
        config = engine.config

        automatic = not config.mu_max
        mu_grid = default_mu_grid(basis, config.mu_max or None)
        report = observability_curve(basis, omega, mu_grid, jobs=config.jobs)
        if automatic and not report.finite:
            logger.warning("[specineq] automatic grid: fitting up to μ = %.6g",
                           float(mu_grid[np.isfinite(report.ratios)][-1]))
        fit = fit_constant(report, finite_only=automatic)
        top = float(mu_grid[np.isfinite(report.ratios)][-1])
        sampled = random_coefficient_check(basis, omega, top, config.trials, config.seed)

        engine.write_with(self.name, "specineq.csv", report.write_csv)
        engine.write_json(self.name, "specineq.json", {
            **report.to_dict(),
            "monte_carlo": {"mu": top, "trials": config.trials, "max_ratio": sampled},
        })
        return {"cutoffs": int(mu_grid.size), "sentinels": len(report.sentinel_mu),
                "N_hat": fit.N_hat, "flagged": fit.flagged}
