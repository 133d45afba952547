"""Control synthesis stage (canonical coordinates).

Artifacts:
    control.json — slice plan, per-slice steering data and the synthesis summary
    control.csv  — raster of f̃(y, t): one row per time, one column per y
"""

from __future__ import annotations

import numpy as np

from app.engine import AnalysisEngine
from app.pipeline import Pipeline

RASTER_Y = 201
RASTER_T = 201


class SynthesizePipeline(Pipeline):
    name = "synthesize"
    description = "Build the time-sliced null control."

    def run(self, engine: AnalysisEngine) -> dict:
        result = engine.synthesis
        control = result.control
        engine.write_json(self.name, "control.json", {
            "summary": result.to_dict(),
            "control": control.to_dict(),
            "trajectory": result.trajectory.to_dict(),
        })
        y = np.linspace(0.0, 1.0, RASTER_Y)
        times = np.linspace(0.0, control.plan.T, RASTER_T)
        engine.write_with(self.name, "control.csv", lambda path: control.write_csv(path, y, times))
        relative = result.final_norm / result.initial_norm if result.initial_norm else 0.0
        return {"slices": len(control.slices), "relative_final_norm": relative,
                "energy": control.energy}
