"""Generator and Experimenter roles: prompts, parsing and the experiment loop."""

from .experimenter import (
    ExperimenterConfig,
    TurnRecord,
    build_experimenter_exchange,
    extract_plan,
    render_outcome,
    run_experimenter,
)
from .generator import (
    GeneratorProposal,
    IterationStatus,
    ProposalParseError,
    SessionMemory,
    build_generator_prompt,
    parse_proposal,
    request_proposal,
)
from .report import VERDICTS, AnalysisReport, ReportParseError, parse_report, term_column

__all__ = [
    "AnalysisReport",
    "ExperimenterConfig",
    "GeneratorProposal",
    "IterationStatus",
    "ProposalParseError",
    "ReportParseError",
    "SessionMemory",
    "TurnRecord",
    "VERDICTS",
    "build_experimenter_exchange",
    "build_generator_prompt",
    "extract_plan",
    "parse_proposal",
    "parse_report",
    "render_outcome",
    "request_proposal",
    "run_experimenter",
    "term_column",
]
