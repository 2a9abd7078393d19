"""humantool: expose a human collaborator as a callable tool inside an
AI-led workflow.

The package splits into the schema (who the human is), the task graph (what
needs doing and who acts), the interaction tables (how to talk), the wire
protocol (how calls travel), the orchestrator (the session engine), and the
store (logs, replay, reports). `humantool.cli` is the operator entry point.
"""

from .interaction import Behavior, Stage, StageEvent, advance_stage, allowed_behaviors
from .orchestrator import (
    Mode,
    Session,
    SessionSummary,
    deliver_response,
    run_to_completion,
    start_session,
    step,
)
from .protocol import HumanToolCall, HumanToolResponse
from .schema import Domain, HumanToolProfile, profile_from_questionnaire, validate_profile
from .taskgraph import (
    Allocation,
    AllocationPolicy,
    InvocationReason,
    TaskNode,
    TaskTree,
    allocate,
    validate_tree,
)

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "AllocationPolicy",
    "Behavior",
    "Domain",
    "HumanToolCall",
    "HumanToolProfile",
    "HumanToolResponse",
    "InvocationReason",
    "Mode",
    "Session",
    "SessionSummary",
    "Stage",
    "StageEvent",
    "TaskNode",
    "TaskTree",
    "advance_stage",
    "allocate",
    "allowed_behaviors",
    "deliver_response",
    "profile_from_questionnaire",
    "run_to_completion",
    "start_session",
    "step",
    "validate_profile",
    "validate_tree",
]
