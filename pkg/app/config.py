"""Configuration from environment variables."""

import os
from dotenv import load_dotenv

load_dotenv()


class Settings:
    """Lab settings loaded from .env file. CLI flags override them per run."""

    # Discretization
    MESH_N: int = int(os.getenv("MESH_N", "4000"))
    REDUCTION_GRID_N: int = int(os.getenv("REDUCTION_GRID_N", "4096"))
    SIM_MESH_N: int = int(os.getenv("SIM_MESH_N", "512"))
    DT: float = float(os.getenv("DT", "1e-3"))

    # Modes
    MODES: int = int(os.getenv("MODES", "60"))
    N_MAX: int = int(os.getenv("N_MAX", "60"))
    CUTOFF_SLACK: float = float(os.getenv("CUTOFF_SLACK", "1e-3"))

    # Sweeps — 0 means "pick from the computed spectrum"
    MU_MAX: float = float(os.getenv("MU_MAX", "0"))
    MU_0: float = float(os.getenv("MU_0", "0"))
    TRIALS: int = int(os.getenv("TRIALS", "20"))
    LIFT_GRID_N: int = int(os.getenv("LIFT_GRID_N", "257"))

    # Control synthesis
    TOL: float = float(os.getenv("TOL", "1e-3"))
    GRAMIAN_COND_MAX: float = float(os.getenv("GRAMIAN_COND_MAX", "1e14"))

    # Reproducibility / execution
    SEED: int = int(os.getenv("SEED", "20240101"))
    JOBS: int = int(os.getenv("JOBS", "1"))
    OUT_DIR: str = os.getenv("OUT_DIR", "./out")

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")


settings = Settings()
