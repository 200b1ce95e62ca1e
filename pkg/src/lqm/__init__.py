"""Link queue model: macroscopic network loading with turn-level queues and time-varying free-flow speed."""

from .engine import Engine, InvariantError, SimulationState, run
from .io import (
    ComparisonReport,
    SchemaError,
    TraceSet,
    compare_traces,
    dump_scenario,
    epsilon,
    load_scenario,
    load_trace,
    write_trace,
)
from .network import (
    CflWarning,
    LinkKind,
    LinkParams,
    NodeSpec,
    RoadSegment,
    Scenario,
    Violation,
    build_segment,
    validate_scenario,
)
from .node import NodeStepProblem, NodeStepSolution, allocate
from .scenarios import build_paper_corridor, build_paper_intersection, build_single_link, builtin

__all__ = [
    "CflWarning",
    "ComparisonReport",
    "Engine",
    "InvariantError",
    "LinkKind",
    "LinkParams",
    "NodeSpec",
    "NodeStepProblem",
    "NodeStepSolution",
    "RoadSegment",
    "Scenario",
    "SchemaError",
    "SimulationState",
    "TraceSet",
    "Violation",
    "allocate",
    "build_paper_corridor",
    "build_paper_intersection",
    "build_segment",
    "build_single_link",
    "builtin",
    "compare_traces",
    "dump_scenario",
    "epsilon",
    "load_scenario",
    "load_trace",
    "run",
    "validate_scenario",
    "write_trace",
]

__version__ = "0.1.0"
