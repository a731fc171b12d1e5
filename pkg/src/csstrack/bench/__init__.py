"""Study plants, Monte-Carlo harness, scenario runner and command-line front end."""
from .plants import (
    GYRO_TAGS,
    GYRO_TS,
    GyroParams,
    GyroProfile,
    PiezoParams,
    build_gyro,
    build_piezo,
    gyro_design,
    piezo_design,
    sensitivity,
    theoretical_resonance,
)
from .scenarios import (
    CSV_FIELDS,
    GyroSpec,
    MonteCarloSpec,
    RunResult,
    run_gyro_scenario,
    run_piezo_monte_carlo,
)

__all__ = [
    "GYRO_TAGS", "GYRO_TS", "GyroParams", "GyroProfile", "PiezoParams", "build_gyro",
    "build_piezo", "gyro_design", "piezo_design", "sensitivity", "theoretical_resonance",
    "CSV_FIELDS", "GyroSpec", "MonteCarloSpec", "RunResult", "run_gyro_scenario",
    "run_piezo_monte_carlo",
]
