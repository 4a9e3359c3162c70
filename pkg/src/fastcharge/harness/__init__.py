"""Scenario configuration, closed-loop runs, characterisation and reporting."""

from .config import ScenarioConfig, load_scenario, save_scenario
from .export import export, read_trace_csv, write_summary, write_trace_csv
from .simulate import (DEFAULT_SOH_LEVELS, PulseSchedule, RunSummary, StepTrace, characterization_pulses,
                       run_scenario, soh_sweep)
from .suite import preset_scenarios, run_preset_suite

__all__ = [
    "DEFAULT_SOH_LEVELS", "PulseSchedule", "RunSummary", "ScenarioConfig", "StepTrace",
    "characterization_pulses", "export", "load_scenario", "preset_scenarios", "read_trace_csv",
    "run_preset_suite", "run_scenario", "save_scenario", "soh_sweep", "write_summary", "write_trace_csv",
]
