"""Reduction stage: original coefficients → canonical density on [0, 1].

Artifacts:
    canonical.json — L, κ, K̃ (measured and a-priori), ω and ω̃
    reduction.csv  — x, y(x), w(x), B(x) and ρ̃ on both sides of each node
"""

from __future__ import annotations

import math

import numpy as np

from app.engine import AnalysisEngine
from app.pipeline import Pipeline


class ReducePipeline(Pipeline):
    name = "reduce"
    description = "Reduce the problem to canonical form."

    def run(self, engine: AnalysisEngine) -> dict:
        system = engine.canonical
        bound = system.K_tilde_bound
        engine.write_json(self.name, "canonical.json", {
            "L": system.L,
            "shift_rate": system.shift_rate,
            "K_tilde": system.K_tilde,
            "K_tilde_bound": None if math.isinf(bound) else bound,
            "omega": system.omega.to_list(),
            "omega_tilde": system.omega_tilde.to_list(),
            "inradius": system.omega.inradius,
            "inradius_tilde": system.omega_tilde.inradius,
            "grid_cells": int(system.x_grid.size - 1),
        })

        def write(path):
            rho = system.rho_tilde
            left = np.concatenate(([rho.start[0]], rho.end))
            right = np.concatenate((rho.start, [rho.end[-1]]))
            table = np.column_stack((system.x_grid, system.y_grid, system.w_values,
                                     system.B_values, left, right))
            np.savetxt(path, table, delimiter=",", fmt="%.17g",
                       header="x,y,w,B,rho_tilde_left,rho_tilde_right", comments="")

        engine.write_with(self.name, "reduction.csv", write)
        return {"L": system.L, "K_tilde": system.K_tilde, "cached": self.name in engine.cached}
