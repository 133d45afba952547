"""Simulation stage: the synthesized control applied in original coordinates.

Artifacts:
    trajectory.csv — t, ρ-weighted L² norm of the Crank–Nicolson state
    snapshots.csv  — x and the nodal state at the recorded times
    simulate.json  — terminal norms and the spectral/Crank–Nicolson cross-validation
"""

from __future__ import annotations

from app.engine import AnalysisEngine
from app.pipeline import Pipeline
from app.reduction import map_control_back
from app.simulator import Trajectory, crank_nicolson_simulate, cross_validate

SNAPSHOTS = 11


class SimulatePipeline(Pipeline):
    name = "simulate"
    description = "Simulate the controlled system in both coordinate systems."

    def run(self, engine: AnalysisEngine) -> dict:
        spec, canonical, basis = engine.spec, engine.canonical, engine.basis
        config = engine.config
        control = engine.synthesis.control

        original = map_control_back(control, canonical)
        trajectory = crank_nicolson_simulate(spec, original, n=config.sim_mesh_n, dt=config.dt)
        every = max(1, (trajectory.times.size - 1) // (SNAPSHOTS - 1))
        snapshots = Trajectory(trajectory.times[::every], trajectory.states[::every],
                               trajectory.norms[::every], kind="nodal",
                               nodes=trajectory.nodes, mass=trajectory.mass)
        check = cross_validate(spec, canonical, basis, control=control,
                               n=config.sim_mesh_n, dt=config.dt, N_max=config.N_max)

        initial = float(trajectory.norms[0])
        final = trajectory.final_norm
        engine.write_with(self.name, "trajectory.csv", trajectory.write_csv)
        engine.write_with(self.name, "snapshots.csv", snapshots.write_snapshots)
        engine.write_json(self.name, "simulate.json", {
            "mesh_n": config.sim_mesh_n, "dt": config.dt,
            "initial_norm": initial, "final_norm": final,
            "relative_final_norm": final / initial if initial else 0.0,
            "cross_validation": check.to_dict(),
        })
        return {"relative_final_norm": final / initial if initial else 0.0,
                "max_discrepancy": check.max_discrepancy}
