"""Deterministic SDN simulator with injectable attack scenarios."""

from .engine import Simulator, run
from .model import (
    AppSpec,
    Disconnection,
    FORMAT_VERSION,
    MalformedPolicy,
    Scenario,
    ScenarioKind,
    SimConfig,
    SimReport,
    TRACE_HEADER,
    default_intensity,
    dump_run_document,
    export_trace,
    load_run_document,
)
from .postconditions import Verdict, scenario_postcondition

__all__ = [
    "AppSpec", "Disconnection", "FORMAT_VERSION", "MalformedPolicy", "Scenario", "ScenarioKind",
    "SimConfig", "SimReport", "Simulator", "TRACE_HEADER", "Verdict", "default_intensity",
    "dump_run_document", "export_trace", "load_run_document", "run", "scenario_postcondition",
]
