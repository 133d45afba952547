"""Eigenbasis stage.

Artifacts:
    lambdas.csv — k, λ_k
    eigvecs.csv — x, e_1 … e_m on the mesh nodes
    eigs.json   — orthonormality defect, and the transfer-matrix comparison
                  when the canonical density is piecewise constant
"""

from __future__ import annotations

import logging

import numpy as np

from app.eigensolver import check_orthonormality, transfer_matrix_eigenvalues
from app.engine import AnalysisEngine, piecewise_density
from app.pipeline import Pipeline

logger = logging.getLogger(__name__)

# Modes compared against the transfer-matrix oracle
ORACLE_MODES = 10


class EigsPipeline(Pipeline):
    name = "eigs"
    description = "Compute the Dirichlet eigenbasis of the canonical density."

    def run(self, engine: AnalysisEngine) -> dict:
        basis = engine.basis
        ortho = check_orthonormality(basis)

        oracle = None
        density = piecewise_density(basis.rho)
        if density is not None:
            count = min(ORACLE_MODES, basis.m)
            exact = transfer_matrix_eigenvalues(density, count)
            errors = np.abs(basis.lambdas[:count] - exact) / exact
            oracle = {"modes": count, "exact": exact.tolist(),
                      "max_relative_error": float(errors.max())}
            logger.info("[eigs] transfer-matrix check: max relative error %.3e over %d modes",
                        oracle["max_relative_error"], count)

        lambdas_path = engine.path(self.name, "lambdas.csv")
        eigvecs_path = engine.path(self.name, "eigvecs.csv")
        basis.write_csv(lambdas_path, eigvecs_path)
        engine.record(self.name, lambdas_path)
        engine.record(self.name, eigvecs_path)
        engine.write_json(self.name, "eigs.json", {
            "mesh_n": basis.mesh.n, "modes": basis.m,
            "lambdas": basis.lambdas.tolist(),
            "K_tilde": basis.K_tilde,
            "orthonormality": ortho.to_dict(),
            "transfer_matrix": oracle,
        })
        return {"modes": basis.m, "lambda_1": float(basis.lambdas[0]),
                "max_orthonormality_defect": ortho.max_deviation,
                "cached": self.name in engine.cached}
