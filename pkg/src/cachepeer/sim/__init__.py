from .config import (ScenarioConfig, Violation, load_config, load_scenario_file,
                     validate_config)
from .engine import EventKind, RequestRecord, ServedBy, SimResult, Simulation, run
from .metrics import build_report, dumps_report, write_outputs
from .workload import Workload, make_rng, sample_request, zipf_pmf

__all__ = [
    "ScenarioConfig", "Violation", "load_config", "load_scenario_file", "validate_config",
    "EventKind", "RequestRecord", "ServedBy", "SimResult", "Simulation", "run",
    "build_report", "dumps_report", "write_outputs",
    "Workload", "make_rng", "sample_request", "zipf_pmf",
]
