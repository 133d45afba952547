"""Spec validation stage.

Artifacts:
    validation.json — every violated bound with its cell index, K and the inradius of ω
"""

from __future__ import annotations

from app.coefficients import validate
from app.engine import AnalysisEngine
from app.pipeline import Pipeline


class ValidatePipeline(Pipeline):
    name = "validate"
    description = "Check the coefficient bounds of a problem spec."

    def run(self, engine: AnalysisEngine) -> dict:
        report = validate(engine.spec)
        engine.write_json(self.name, "validation.json", report.to_dict())
        return {"valid": report.valid, "violations": len(report.violations),
                "inradius": report.inradius}
