"""The session engine: walk the task tree, call the human where allocation
says to, integrate the four response outcomes, and close the loop.

A session is a single-writer state machine. At most one human tool call is
outstanding at any time; the engine owns the clock of record, so only it can
declare a timeout. Baseline mode (``ai_only``) runs the identical tree but
executes every leaf with the planner and never emits a call.

Flow control rules the engine enforces:

- refusal of a work call opens one repair exchange (an ``explain`` call); a
  second refusal on the same node marks it skipped and moves on. Nodes whose
  primary reason is authority control are never retried: a refusal or a
  denied approval fails them permanently for the session.
- a counter-proposal triggers a bounded replan of the node's subtree; once
  the negotiation budget is spent it is treated as a refusal.
- on timeout, authority nodes fail (never auto-approved) and every other
  node falls back to AI execution.

Every call reaches exactly one terminal outcome and every mutation is
logged, so an event log replays to the exact terminal state.
"""

from __future__ import annotations

import logging
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from enum import Enum
from typing import Any, Callable, Protocol

from .interaction import (
    Behavior,
    GuidelineReport,
    Stage,
    StageEvent,
    advance_stage,
    check_guidelines,
    compose_call,
)
from .planner import Planner, PlannerError
from .protocol import (
    INVALID_MESSAGE,
    Answered,
    CounterProposal,
    HumanToolCall,
    HumanToolResponse,
    ProtocolError,
    Refused,
    TimedOut,
    isoformat_utc,
    validate_response_against_call,
)
from .schema import HumanToolProfile, render_profile_prompt, validate_profile
from .store import EventKind, EventLogEntry
from .taskgraph import (
    Actor,
    AllocationPolicy,
    InvocationReason,
    RequirementFlag,
    Status,
    TaskNode,
    TaskTree,
    TreeError,
    allocate,
    allocate_leaves,
    mark_status,
    next_executable,
    replace_subtree,
    status_census,
    validate_tree,
)

logger = logging.getLogger(__name__)

DEFAULT_TIMEOUT_SECONDS = 300.0
DEFAULT_NEGOTIATION_ROUNDS = 2
DEFAULT_GUIDELINE_WINDOW = 10
MAX_REFUSALS_PER_NODE = 2

_SIM_EPOCH = datetime(2024, 1, 1, tzinfo=timezone.utc)


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return datetime.now(timezone.utc)


class SimClock:
    """Deterministic clock for scripted runs; only the engine advances it."""

    def __init__(self, start: datetime | None = None):
        self._now = start or _SIM_EPOCH

    def now(self) -> datetime:
        return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("clock can only move forward")
        self._now += timedelta(seconds=seconds)

    def advance_to(self, moment: datetime) -> None:
        if moment > self._now:
            self._now = moment


class Mode(str, Enum):
    HUMAN_TOOL = "human_tool"
    AI_ONLY = "ai_only"


class RecordOutcome(str, Enum):
    ANSWERED = "answered"
    REFUSED = "refused"
    COUNTER_PROPOSAL = "counter_proposal"
    TIMED_OUT = "timed_out"
    AI_EXECUTED = "ai_executed"


HUMAN_OUTCOMES = frozenset(
    {RecordOutcome.ANSWERED, RecordOutcome.REFUSED, RecordOutcome.COUNTER_PROPOSAL, RecordOutcome.TIMED_OUT}
)

LATENCY_OUTCOMES = frozenset({RecordOutcome.ANSWERED, RecordOutcome.REFUSED, RecordOutcome.COUNTER_PROPOSAL})


@dataclass(frozen=True)
class InvocationRecord:
    timestamp: datetime
    session_id: str
    node_id: str
    stage: Stage
    behavior: Behavior | None
    reason: InvocationReason | None
    outcome: RecordOutcome
    latency: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "timestamp": isoformat_utc(self.timestamp),
            "session_id": self.session_id,
            "node_id": self.node_id,
            "stage": self.stage.value,
            "behavior": self.behavior.value if self.behavior else None,
            "reason": self.reason.value if self.reason else None,
            "outcome": self.outcome.value,
            "latency": self.latency,
        }


class CallPurpose(str, Enum):
    OPENING = "opening"  # the prime call that establishes context
    WORK = "work"  # a call produced by a leaf's allocation
    REPAIR = "repair"  # an explain call inside error handling
    CLOSING = "closing"  # the ending-stage summary call


class RepairOrigin(str, Enum):
    REFUSAL = "refusal"
    AI_FAILURE = "ai_failure"
    OPENING = "opening"


@dataclass
class PendingMeta:
    purpose: CallPurpose
    origin: RepairOrigin | None = None
    guidelines: GuidelineReport | None = None


class OrchestrationError(Exception):
    """Base for engine faults."""


class IllegalStateError(OrchestrationError):
    pass


class UnknownCallError(OrchestrationError):
    pass


class DuplicateResponseError(OrchestrationError):
    pass


class PastDeadlineError(OrchestrationError):
    pass


@dataclass
class Session:
    session_id: str
    goal: str
    profile: HumanToolProfile
    tree: TaskTree
    stage: Stage
    mode: Mode
    policy: AllocationPolicy
    clock: Clock
    timeout_default: float = DEFAULT_TIMEOUT_SECONDS
    max_negotiation_rounds: int = DEFAULT_NEGOTIATION_ROUNDS
    guideline_window: int = DEFAULT_GUIDELINE_WINDOW
    pending_call: HumanToolCall | None = None
    event_log: list[EventLogEntry] = field(default_factory=list)
    node_context: dict[str, list[str]] = field(default_factory=dict)
    recent_messages: list[str] = field(default_factory=list)
    log_sink: Callable[[EventLogEntry], None] | None = None

    _pending_meta: PendingMeta | None = None
    _call_registry: dict[str, str] = field(default_factory=dict)
    _refusals: dict[str, int] = field(default_factory=dict)
    _negotiations: dict[str, int] = field(default_factory=dict)
    _call_counter: int = 0

    @property
    def profile_prompt(self) -> str:
        return render_profile_prompt(self.profile)

    @property
    def is_terminal(self) -> bool:
        return self.stage is Stage.ENDING and self.pending_call is None

    @property
    def calls_issued(self) -> int:
        return len(self._call_registry)

    def now(self) -> datetime:
        return self.clock.now()

    def log(self, kind: EventKind, body: dict[str, Any]) -> None:
        entry = EventLogEntry(sequence_number=len(self.event_log) + 1, kind=kind, body=body)
        self.event_log.append(entry)
        if self.log_sink is not None:
            self.log_sink(entry)

    def records(self) -> list[dict[str, Any]]:
        return [e.body["record"] for e in self.event_log if e.kind is EventKind.INVOCATION]


@dataclass(frozen=True)
class SessionEvent:
    kind: str
    call: HumanToolCall | None = None
    node_id: str | None = None
    detail: str = ""


def check_invariants(session: Session) -> None:
    """Assert the structural invariants that must hold between operations."""
    if session.mode is Mode.AI_ONLY:
        if session.pending_call is not None or session._call_registry:
            raise IllegalStateError("ai_only sessions must never issue human tool calls")
    if session.pending_call is not None:
        meta = session._pending_meta
        if meta is None:
            raise IllegalStateError("pending call without metadata")
        if session.stage is Stage.ENDING and meta.purpose is not CallPurpose.CLOSING:
            raise IllegalStateError("only the closing call may be pending in the ending stage")
    pending_in_registry = [cid for cid, state in session._call_registry.items() if state == "pending"]
    if len(pending_in_registry) > 1:
        raise IllegalStateError(f"multiple calls outstanding: {pending_in_registry}")
    if session.pending_call is None and pending_in_registry:
        raise IllegalStateError("registry believes a call is pending but none is")


# ---------------------------------------------------------------------------
# Internal helpers
# ---------------------------------------------------------------------------


def _fire(session: Session, event: StageEvent) -> None:
    new_stage = advance_stage(session.stage, event)
    if new_stage is not session.stage:
        session.log(
            EventKind.STAGE_CHANGE,
            {"from": session.stage.value, "to": new_stage.value, "event": event.value},
        )
        session.stage = new_stage


def _mark(session: Session, node_id: str, status: Status) -> None:
    mark_status(session.tree, node_id, status)
    session.log(EventKind.TREE_MUTATION, {"action": "set_status", "node_id": node_id, "status": status.value})


def _context_for(session: Session, node: TaskNode) -> dict[str, Any]:
    return {
        "goal": session.goal,
        "node_context": list(session.node_context.get(node.id, [])),
        "recent_messages": list(session.recent_messages[-session.guideline_window :]),
        "census": status_census(session.tree),
    }


def _issue_call(
    session: Session,
    planner: Planner,
    stage: Stage,
    behavior: Behavior,
    node: TaskNode,
    reason: InvocationReason | None,
    purpose: CallPurpose,
    origin: RepairOrigin | None = None,
) -> HumanToolCall:
    if session.mode is Mode.AI_ONLY:
        raise IllegalStateError("ai_only sessions cannot issue human tool calls")
    prompt = planner.compose_message(stage, behavior, node, session.profile_prompt, _context_for(session, node))
    payload = compose_call(behavior, stage, node, reason, prompt)
    guidelines = check_guidelines(
        prompt,
        session.recent_messages,
        stage=stage,
        behavior=behavior,
        window=session.guideline_window,
    )
    session._call_counter += 1
    now = session.now()
    call = HumanToolCall(
        call_id=f"{session.session_id}-c{session._call_counter:03d}",
        session_id=session.session_id,
        node_id=node.id,
        stage=stage,
        behavior=behavior,
        reason=reason,
        prompt_text=prompt,
        response_kind=payload.response_kind,
        deadline=now + timedelta(seconds=session.timeout_default),
        issued_at=now,
    )
    session.pending_call = call
    session._pending_meta = PendingMeta(purpose=purpose, origin=origin, guidelines=guidelines)
    session._call_registry[call.call_id] = "pending"
    session.recent_messages.append(prompt)
    del session.recent_messages[: -2 * session.guideline_window]
    return call


def _record_outcome(
    session: Session,
    call: HumanToolCall,
    meta: PendingMeta,
    outcome: RecordOutcome,
    received_at: datetime | None,
    *,
    payload: Any = None,
    context_append: str | None = None,
    preferences_append: str | None = None,
    detail: str | None = None,
) -> None:
    """Complete the pending call: clear it, update the registry, log the record."""
    latency = None
    if outcome in LATENCY_OUTCOMES and received_at is not None:
        latency = (received_at - call.issued_at).total_seconds()
    # Reasons are reported only for allocation-caused calls.
    reason = call.reason if meta.purpose is CallPurpose.WORK else None
    record = InvocationRecord(
        timestamp=received_at or session.now(),
        session_id=session.session_id,
        node_id=call.node_id,
        stage=call.stage,
        behavior=call.behavior,
        reason=reason,
        outcome=outcome,
        latency=latency,
    )
    body: dict[str, Any] = {
        "record": record.to_dict(),
        "call_id": call.call_id,
        "purpose": meta.purpose.value,
        "prompt_text": call.prompt_text,
        "guidelines": meta.guidelines.to_dict() if meta.guidelines else None,
    }
    if payload is not None:
        body["payload"] = payload
    if context_append is not None:
        body["context_append"] = context_append
        session.node_context.setdefault(call.node_id, []).append(context_append)
    if preferences_append is not None:
        body["preferences_append"] = preferences_append
        session.profile = session.profile.with_appended_notes(preferences_append)
    if detail:
        body["detail"] = detail
    session._call_registry[call.call_id] = outcome.value
    session.pending_call = None
    session._pending_meta = None
    session.log(EventKind.INVOCATION, body)


def _record_ai_executed(session: Session, node: TaskNode, output: str) -> None:
    record = InvocationRecord(
        timestamp=session.now(),
        session_id=session.session_id,
        node_id=node.id,
        stage=session.stage,
        behavior=None,
        reason=None,
        outcome=RecordOutcome.AI_EXECUTED,
        latency=None,
    )
    session.node_context.setdefault(node.id, []).append(output)
    session.log(
        EventKind.INVOCATION,
        {"record": record.to_dict(), "call_id": None, "purpose": None, "context_append": output},
    )


def _behavior_for(node: TaskNode, reason: InvocationReason) -> Behavior:
    """Map the primary invocation reason to the call behavior."""
    if reason is InvocationReason.AUTHORITY_CONTROL:
        return Behavior.APPROVE
    if reason is InvocationReason.INFORMATION_EXCHANGE:
        wants = {RequirementFlag.NEEDS_PREFERENCES, RequirementFlag.NEEDS_PRIVATE_INFO}
        return Behavior.ELICIT if node.requirement_flags & wants else Behavior.PROBE
    if RequirementFlag.NEEDS_PHYSICAL_INTERACTION in node.requirement_flags:
        return Behavior.GUIDE
    return Behavior.ELICIT


def _is_authority_node(node: TaskNode) -> bool:
    return (
        node.allocation is not None
        and node.allocation.actor is Actor.HUMAN
        and node.allocation.primary_reason is InvocationReason.AUTHORITY_CONTROL
    )


def _execute_ai(session: Session, node: TaskNode, planner: Planner) -> SessionEvent:
    _mark(session, node.id, Status.IN_PROGRESS)
    try:
        output = planner.execute_ai_node(node, _context_for(session, node))
    except PlannerError as exc:
        _mark(session, node.id, Status.FAILED)
        _fire(session, StageEvent.MISUNDERSTANDING_DETECTED)
        if session.mode is Mode.HUMAN_TOOL:
            _issue_call(
                session,
                planner,
                Stage.ERROR_HANDLING,
                Behavior.EXPLAIN,
                node,
                None,
                CallPurpose.REPAIR,
                origin=RepairOrigin.AI_FAILURE,
            )
        else:
            # No human to repair with: note the failure and move on.
            _fire(session, StageEvent.REPAIR_ABANDONED)
        return SessionEvent(kind="ai_node_failed", node_id=node.id, detail=str(exc))
    _mark(session, node.id, Status.DONE)
    _record_ai_executed(session, node, output)
    return SessionEvent(kind="ai_executed", node_id=node.id)


def _apply_timeout_fallback(session: Session, node: TaskNode, planner: Planner) -> SessionEvent:
    """Authority nodes are never auto-approved; everything else goes to the AI."""
    if _is_authority_node(node):
        _mark(session, node.id, Status.FAILED)
        return SessionEvent(kind="node_failed_authority_timeout", node_id=node.id)
    return _execute_ai(session, node, planner)


def _refusal_flow(session: Session, node: TaskNode, planner: Planner) -> SessionEvent:
    """Shared handling once an outcome is treated as a refusal of `node`."""
    if _is_authority_node(node):
        # Authority refusals are final for the session: no retry, no repair.
        _mark(session, node.id, Status.FAILED)
        return SessionEvent(kind="node_failed_authority_refused", node_id=node.id)
    count = session._refusals.get(node.id, 0) + 1
    session._refusals[node.id] = count
    if count >= MAX_REFUSALS_PER_NODE:
        if node.status in (Status.PENDING, Status.IN_PROGRESS):
            _mark(session, node.id, Status.SKIPPED)
        _fire(session, StageEvent.REPAIR_ABANDONED)
        return SessionEvent(kind="node_skipped_after_refusals", node_id=node.id)
    _fire(session, StageEvent.REFUSAL_RECEIVED)
    _issue_call(
        session,
        planner,
        Stage.ERROR_HANDLING,
        Behavior.EXPLAIN,
        node,
        None,
        CallPurpose.REPAIR,
        origin=RepairOrigin.REFUSAL,
    )
    return SessionEvent(kind="repair_call_issued", call=session.pending_call, node_id=node.id)


def _try_replan(session: Session, node: TaskNode, proposal: str, planner: Planner) -> bool:
    """Bounded subtree negotiation; returns True when the splice succeeded."""
    rounds = session._negotiations.get(node.id, 0)
    if rounds >= session.max_negotiation_rounds:
        return False
    session._negotiations[node.id] = rounds + 1
    try:
        replacement = planner.replan_subtree(node, proposal, session.profile_prompt)
        for replacement_node in replacement:
            replacement_node.status = Status.PENDING
            replacement_node.allocation = None
        replace_subtree(session.tree, node.id, replacement)
        for leaf_node in session.tree.walk(node.id):
            if leaf_node.is_leaf:
                leaf_node.allocation = allocate(leaf_node, session.profile, session.policy)
        session.log(
            EventKind.TREE_MUTATION,
            {
                "action": "replace_subtree",
                "node_id": node.id,
                "nodes": [n.to_dict() for n in session.tree.walk(node.id)],
            },
        )
        return True
    except (PlannerError, TreeError) as exc:
        logger.warning("replan of %s failed: %s", node.id, exc)
        return False


def _log_wire_error(session: Session, code: int, message: str, call_id: str | None = None) -> None:
    session.log(EventKind.WIRE_ERROR, {"code": code, "message": message, "call_id": call_id})


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def start_session(
    profile: HumanToolProfile,
    goal: str,
    planner: Planner,
    mode: Mode = Mode.HUMAN_TOOL,
    policy: AllocationPolicy | None = None,
    *,
    session_id: str | None = None,
    clock: Clock | None = None,
    timeout_default: float = DEFAULT_TIMEOUT_SECONDS,
    max_negotiation_rounds: int = DEFAULT_NEGOTIATION_ROUNDS,
    log_sink: Callable[[EventLogEntry], None] | None = None,
) -> Session:
    """Decompose the goal, allocate every leaf, and open the session.

    In human_tool mode the opening prime call is issued immediately; in
    ai_only mode the session moves straight to the during stage.
    """
    validation = validate_profile(profile)
    if not validation.ok:
        raise ValueError("invalid profile: " + "; ".join(str(v) for v in validation.violations))
    if not goal or not goal.strip():
        raise ValueError("goal must be non-empty")
    policy = policy or AllocationPolicy()
    clock = clock or SimClock()

    tree = planner.decompose(goal, render_profile_prompt(profile))
    result = validate_tree(list(tree.nodes.values()))
    if not result.ok:
        raise PlannerError("planner returned an invalid tree: " + "; ".join(str(v) for v in result.violations))
    allocate_leaves(tree, profile, policy)

    session = Session(
        session_id=session_id or f"s-{uuid.uuid4().hex[:8]}",
        goal=goal,
        profile=profile,
        tree=tree,
        stage=Stage.INITIAL,
        mode=mode,
        policy=policy,
        clock=clock,
        timeout_default=timeout_default,
        max_negotiation_rounds=max_negotiation_rounds,
        log_sink=log_sink,
    )
    session.log(
        EventKind.SESSION_START,
        {
            "session_id": session.session_id,
            "goal": goal,
            "mode": mode.value,
            "policy": policy.to_dict(),
            "profile": profile.to_dict(),
            "tree": tree.to_dict(),
            "timeout_default": timeout_default,
            "max_negotiation_rounds": max_negotiation_rounds,
            "started_at": isoformat_utc(session.now()),
        },
    )
    if mode is Mode.HUMAN_TOOL:
        _issue_call(session, planner, Stage.INITIAL, Behavior.PRIME, tree.root, None, CallPurpose.OPENING)
    else:
        _fire(session, StageEvent.CONTEXT_ESTABLISHED)
    check_invariants(session)
    return session


def step(session: Session, planner: Planner) -> SessionEvent:
    """Advance by one unit of work: execute or dispatch the next leaf, or
    close out when nothing executable remains."""
    if session.pending_call is not None:
        raise IllegalStateError("cannot step while a call is pending")
    if session.stage is not Stage.DURING:
        raise IllegalStateError(f"step requires the during stage, session is in {session.stage.value}")

    leaf_id = next_executable(session.tree)
    if leaf_id is None:
        _fire(session, StageEvent.ALL_NODES_TERMINAL)
        if session.mode is Mode.HUMAN_TOOL:
            call = _issue_call(
                session, planner, Stage.ENDING, Behavior.REFLECT, session.tree.root, None, CallPurpose.CLOSING
            )
            event = SessionEvent(kind="closing_call_issued", call=call)
        else:
            event = SessionEvent(kind="session_complete")
        check_invariants(session)
        return event

    node = session.tree.node(leaf_id)
    if node.allocation is None:
        raise IllegalStateError(f"leaf {leaf_id!r} was never allocated")

    if session.mode is Mode.AI_ONLY or node.allocation.actor is Actor.AI:
        event = _execute_ai(session, node, planner)
    else:
        reason = node.allocation.primary_reason
        assert reason is not None
        behavior = _behavior_for(node, reason)
        call = _issue_call(session, planner, Stage.DURING, behavior, node, reason, CallPurpose.WORK)
        event = SessionEvent(kind="call_issued", call=call, node_id=node.id)
    check_invariants(session)
    return event


def deliver_response(session: Session, response: HumanToolResponse, planner: Planner) -> SessionEvent:
    """Integrate one human response into the session.

    Late, duplicate, unknown, or malformed responses raise without touching
    session state (beyond a wire_error log line).
    """
    pending = session.pending_call
    if pending is None or response.call_id != pending.call_id:
        state = session._call_registry.get(response.call_id)
        if state is None:
            _log_wire_error(session, 40404, "unknown call", response.call_id)
            raise UnknownCallError(f"no call with id {response.call_id!r}")
        if state == RecordOutcome.TIMED_OUT.value:
            _log_wire_error(session, 40801, "response after deadline", response.call_id)
            raise PastDeadlineError(f"call {response.call_id!r} already timed out")
        _log_wire_error(session, 40901, "duplicate response", response.call_id)
        raise DuplicateResponseError(f"call {response.call_id!r} already completed; first response stands")

    if isinstance(response.outcome, TimedOut):
        _log_wire_error(session, INVALID_MESSAGE, "timed_out is orchestrator-declared", response.call_id)
        raise ProtocolError(INVALID_MESSAGE, "timed_out outcomes are declared by the orchestrator clock only")

    now = session.now()
    if now > pending.deadline:
        _log_wire_error(session, 40801, "response after deadline", response.call_id)
        raise PastDeadlineError(
            f"response for {response.call_id!r} arrived at {isoformat_utc(now)}, "
            f"after deadline {isoformat_utc(pending.deadline)}"
        )
    try:
        validate_response_against_call(pending, response)
    except ProtocolError as exc:
        _log_wire_error(session, exc.code, exc.message, response.call_id)
        raise

    meta = session._pending_meta
    assert meta is not None
    node = session.tree.node(pending.node_id)
    received = response.received_at
    outcome = response.outcome

    if meta.purpose is CallPurpose.CLOSING:
        kind_map = {
            Answered: RecordOutcome.ANSWERED,
            Refused: RecordOutcome.REFUSED,
            CounterProposal: RecordOutcome.COUNTER_PROPOSAL,
        }
        record_kind = kind_map[type(outcome)]
        payload = outcome.value if isinstance(outcome, Answered) else None
        _record_outcome(session, pending, meta, record_kind, received, payload=payload)
        event = SessionEvent(kind="session_complete", node_id=node.id)

    elif meta.purpose is CallPurpose.OPENING:
        if isinstance(outcome, Answered):
            _record_outcome(
                session, pending, meta, RecordOutcome.ANSWERED, received,
                payload=outcome.value, context_append=str(outcome.value),
            )
            _fire(session, StageEvent.CONTEXT_ESTABLISHED)
            event = SessionEvent(kind="context_established", node_id=node.id)
        elif isinstance(outcome, CounterProposal):
            _record_outcome(
                session, pending, meta, RecordOutcome.COUNTER_PROPOSAL, received,
                detail=outcome.proposal_text,
            )
            if _try_replan(session, session.tree.root, outcome.proposal_text, planner):
                call = _issue_call(
                    session, planner, Stage.INITIAL, Behavior.PRIME, session.tree.root, None, CallPurpose.OPENING
                )
                event = SessionEvent(kind="goal_renegotiated", call=call)
            else:
                _fire(session, StageEvent.CONTEXT_ESTABLISHED)
                event = _refusal_flow(session, session.tree.root, planner)
        else:  # Refused
            _record_outcome(
                session, pending, meta, RecordOutcome.REFUSED, received, detail=outcome.reason_text
            )
            _fire(session, StageEvent.CONTEXT_ESTABLISHED)
            _fire(session, StageEvent.REFUSAL_RECEIVED)
            _issue_call(
                session, planner, Stage.ERROR_HANDLING, Behavior.EXPLAIN, session.tree.root, None,
                CallPurpose.REPAIR, origin=RepairOrigin.OPENING,
            )
            event = SessionEvent(kind="repair_call_issued", call=session.pending_call, node_id=node.id)

    elif meta.purpose is CallPurpose.REPAIR:
        origin = meta.origin or RepairOrigin.REFUSAL
        if isinstance(outcome, Answered):
            _record_outcome(
                session, pending, meta, RecordOutcome.ANSWERED, received,
                payload=outcome.value, context_append=str(outcome.value),
            )
            _fire(session, StageEvent.REPAIRED)
            event = SessionEvent(kind="repaired", node_id=node.id)
        elif isinstance(outcome, CounterProposal):
            _record_outcome(
                session, pending, meta, RecordOutcome.COUNTER_PROPOSAL, received,
                detail=outcome.proposal_text,
            )
            if origin is RepairOrigin.REFUSAL and _try_replan(session, node, outcome.proposal_text, planner):
                _fire(session, StageEvent.REPAIRED)
                event = SessionEvent(kind="subtree_replanned", node_id=node.id)
            else:
                event = _after_failed_repair(session, node, origin)
        else:  # Refused
            _record_outcome(
                session, pending, meta, RecordOutcome.REFUSED, received, detail=outcome.reason_text
            )
            event = _after_failed_repair(session, node, origin)

    else:  # CallPurpose.WORK
        if isinstance(outcome, Answered):
            event = _integrate_work_answer(session, pending, meta, node, outcome, received)
        elif isinstance(outcome, Refused):
            _record_outcome(
                session, pending, meta, RecordOutcome.REFUSED, received, detail=outcome.reason_text
            )
            event = _refusal_flow(session, node, planner)
        else:  # CounterProposal
            _record_outcome(
                session, pending, meta, RecordOutcome.COUNTER_PROPOSAL, received,
                detail=outcome.proposal_text,
            )
            if _try_replan(session, node, outcome.proposal_text, planner):
                event = SessionEvent(kind="subtree_replanned", node_id=node.id)
            else:
                event = _refusal_flow(session, node, planner)

    check_invariants(session)
    return event


def _after_failed_repair(session: Session, node: TaskNode, origin: RepairOrigin) -> SessionEvent:
    """The repair exchange did not repair: abandon it, skipping the node when
    the refusal path says so."""
    if origin is RepairOrigin.REFUSAL:
        session._refusals[node.id] = session._refusals.get(node.id, 0) + 1
        if node.status in (Status.PENDING, Status.IN_PROGRESS):
            _mark(session, node.id, Status.SKIPPED)
        _fire(session, StageEvent.REPAIR_ABANDONED)
        return SessionEvent(kind="node_skipped_after_refusals", node_id=node.id)
    _fire(session, StageEvent.REPAIR_ABANDONED)
    return SessionEvent(kind="repair_abandoned", node_id=node.id)


def _integrate_work_answer(
    session: Session,
    pending: HumanToolCall,
    meta: PendingMeta,
    node: TaskNode,
    outcome: Answered,
    received: datetime,
) -> SessionEvent:
    value = outcome.value
    if pending.behavior is Behavior.APPROVE and value is False:
        # An explicit rejection denies authorization: the node fails and is
        # never retried within the session.
        _record_outcome(session, pending, meta, RecordOutcome.ANSWERED, received, payload=value)
        _mark(session, node.id, Status.FAILED)
        return SessionEvent(kind="approval_denied", node_id=node.id)

    if value is True:
        text = "approved"
    elif isinstance(value, int) and not isinstance(value, bool):
        text = pending.options[value] if pending.options else str(value)
    else:
        text = str(value)
    preferences = None
    if pending.behavior is Behavior.CONFIGURE or (
        pending.behavior is Behavior.ELICIT and RequirementFlag.NEEDS_PREFERENCES in node.requirement_flags
    ):
        preferences = text
    _record_outcome(
        session, pending, meta, RecordOutcome.ANSWERED, received,
        payload=value, context_append=text, preferences_append=preferences,
    )
    _mark(session, node.id, Status.DONE)
    _fire(session, StageEvent.RESPONSE_INTEGRATED)
    return SessionEvent(kind="answer_integrated", node_id=node.id)


def handle_timeout(session: Session, planner: Planner) -> SessionEvent:
    """Declare the pending call timed out. Only the engine's clock may do
    this; the deadline must actually have passed."""
    pending = session.pending_call
    if pending is None:
        raise IllegalStateError("no call is pending")
    if session.now() < pending.deadline:
        raise IllegalStateError("deadline has not passed")
    meta = session._pending_meta
    assert meta is not None
    node = session.tree.node(pending.node_id)
    _record_outcome(session, pending, meta, RecordOutcome.TIMED_OUT, None)

    if meta.purpose is CallPurpose.WORK:
        event = _apply_timeout_fallback(session, node, planner)
    elif meta.purpose is CallPurpose.REPAIR:
        origin = meta.origin or RepairOrigin.REFUSAL
        _fire(session, StageEvent.REPAIR_ABANDONED)
        if origin is RepairOrigin.REFUSAL:
            event = _apply_timeout_fallback(session, node, planner)
        else:
            event = SessionEvent(kind="repair_abandoned", node_id=node.id)
    elif meta.purpose is CallPurpose.OPENING:
        _fire(session, StageEvent.CONTEXT_ESTABLISHED)
        event = SessionEvent(kind="context_established", node_id=node.id, detail="opening call timed out")
    else:  # CLOSING
        event = SessionEvent(kind="session_complete", node_id=node.id, detail="closing call timed out")
    check_invariants(session)
    return event


def abort_session(session: Session) -> SessionEvent:
    """Cut the session short: resolve any open call as timed out (the abort
    forces the clock of record) and jump to the ending stage."""
    pending = session.pending_call
    if pending is not None:
        meta = session._pending_meta
        assert meta is not None
        _record_outcome(session, pending, meta, RecordOutcome.TIMED_OUT, None, detail="session aborted")
    _fire(session, StageEvent.SESSION_ABORTED)
    check_invariants(session)
    return SessionEvent(kind="session_aborted")


# ---------------------------------------------------------------------------
# Scripted responders and the run loop
# ---------------------------------------------------------------------------

ResponseSource = Callable[[HumanToolCall], HumanToolResponse | None]


@dataclass(frozen=True)
class ResponseDirective:
    """One scripted reaction: answer / refuse / counter / none (let it time out)."""

    action: str = "answer"
    payload: Any = None
    reason_text: str = "declined"
    proposal_text: str = "let's do this differently"
    latency_s: float = 5.0

    def __post_init__(self) -> None:
        if self.action not in ("answer", "refuse", "counter", "none"):
            raise ValueError(f"unknown directive action {self.action!r}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ResponseDirective":
        return cls(
            action=data.get("action", "answer"),
            payload=data.get("payload"),
            reason_text=data.get("reason_text", "declined"),
            proposal_text=data.get("proposal_text", "let's do this differently"),
            latency_s=data.get("latency_s", 5.0),
        )


class ScriptedResponder:
    """Plays back directives in call order; after the script runs out every
    call is answered affirmatively."""

    def __init__(self, directives: list[ResponseDirective], clock: SimClock):
        self.directives = list(directives)
        self.clock = clock
        self._cursor = 0

    def __call__(self, call: HumanToolCall) -> HumanToolResponse | None:
        if self._cursor < len(self.directives):
            directive = self.directives[self._cursor]
            self._cursor += 1
        else:
            directive = ResponseDirective()
        if directive.action == "none":
            return None
        self.clock.advance(directive.latency_s)
        now = self.clock.now()
        if directive.action == "refuse":
            return HumanToolResponse(call.call_id, Refused(directive.reason_text), now)
        if directive.action == "counter":
            return HumanToolResponse(call.call_id, CounterProposal(directive.proposal_text), now)
        value = directive.payload
        from .interaction import ResponseKind

        if call.response_kind is ResponseKind.APPROVAL:
            value = True if value is None else bool(value)
        elif call.response_kind is ResponseKind.CHOICE:
            value = 0 if value is None else int(value)
        else:
            value = "ok" if value is None else str(value)
        return HumanToolResponse(call.call_id, Answered(value), now)


@dataclass(frozen=True)
class SessionSummary:
    session_id: str
    stage: str
    census: dict[str, int]
    outcome_counts: dict[str, int]
    human_calls: int
    ai_executed: int
    failed_authority_nodes: int
    tree_hash: str
    state_hash: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "session_id": self.session_id,
            "stage": self.stage,
            "census": dict(self.census),
            "outcome_counts": dict(self.outcome_counts),
            "human_calls": self.human_calls,
            "ai_executed": self.ai_executed,
            "failed_authority_nodes": self.failed_authority_nodes,
            "tree_hash": self.tree_hash,
            "state_hash": self.state_hash,
        }


def summarize(session: Session) -> SessionSummary:
    from .store import session_state_hash, tree_state_hash

    outcome_counts = {o.value: 0 for o in RecordOutcome}
    for record in session.records():
        outcome_counts[record["outcome"]] += 1
    failed_authority = sum(
        1
        for leaf in session.tree.leaves()
        if leaf.status is Status.FAILED and _is_authority_node(leaf)
    )
    return SessionSummary(
        session_id=session.session_id,
        stage=session.stage.value,
        census=status_census(session.tree),
        outcome_counts=outcome_counts,
        human_calls=session.calls_issued,
        ai_executed=outcome_counts[RecordOutcome.AI_EXECUTED.value],
        failed_authority_nodes=failed_authority,
        tree_hash=tree_state_hash(session.tree),
        state_hash=session_state_hash(session),
    )


MAX_RUN_ITERATIONS = 100_000


def run_to_completion(session: Session, planner: Planner, response_source: ResponseSource) -> SessionSummary:
    """Drive the session to its terminal state with a scripted or transport
    response source. A source returning None means nobody answered: the
    engine advances its (simulated) clock to the deadline and times out."""
    for _ in range(MAX_RUN_ITERATIONS):
        if session.is_terminal:
            break
        if session.pending_call is not None:
            response = response_source(session.pending_call)
            if response is None:
                clock = session.clock
                if not isinstance(clock, SimClock):
                    raise IllegalStateError("a no-response script step requires a simulated clock")
                clock.advance_to(session.pending_call.deadline)
                handle_timeout(session, planner)
            else:
                try:
                    deliver_response(session, response, planner)
                except PastDeadlineError:
                    # The scripted reply landed late; the clock has already
                    # passed the deadline, so the timeout path applies.
                    handle_timeout(session, planner)
        elif session.stage is Stage.DURING:
            step(session, planner)
        else:
            raise IllegalStateError(f"session stuck in {session.stage.value} with no pending call")
    else:
        raise OrchestrationError("session did not terminate within the iteration budget")
    return summarize(session)
