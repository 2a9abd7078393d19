"""Communication stages, interaction behaviors, and guideline checks.

A collaboration session moves through four stages -- initial, during,
error_handling, ending -- and each stage permits a fixed set of the twelve
interaction behaviors. Stage transitions are a total function over
(stage, event); undefined pairs leave the stage unchanged, and nothing
leaves `ending`.

Five message guidelines are tracked. Two are mechanically checkable and may
hard-fail a message: transparency (the opening message must disclose what
the system can and cannot do) and avoidance (near-duplicate messages are
flagged by trigram overlap). The other three -- naturalness, emotionality,
relationship building -- are qualities of generated text enforced upstream
in the prompt templates, so the report always labels them advisory.

The behavior and transition tables are exported as a versioned JSON document
so other surfaces (e.g. the operator console) can render legality without
re-encoding it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .taskgraph import InvocationReason, TaskNode


class Stage(str, Enum):
    INITIAL = "initial"
    DURING = "during"
    ERROR_HANDLING = "error_handling"
    ENDING = "ending"


class Behavior(str, Enum):
    PRIME = "prime"
    CONFIGURE = "configure"
    PROBE = "probe"
    CUE = "cue"
    ELICIT = "elicit"
    AUGMENT = "augment"
    GUIDE = "guide"
    EXPLAIN = "explain"
    CORRECT = "correct"
    CRITIQUE = "critique"
    REFLECT = "reflect"
    APPROVE = "approve"


class StageEvent(str, Enum):
    CONTEXT_ESTABLISHED = "context_established"
    NODE_DISPATCHED = "node_dispatched"
    RESPONSE_INTEGRATED = "response_integrated"
    REFUSAL_RECEIVED = "refusal_received"
    MISUNDERSTANDING_DETECTED = "misunderstanding_detected"
    REPAIRED = "repaired"
    REPAIR_ABANDONED = "repair_abandoned"
    ALL_NODES_TERMINAL = "all_nodes_terminal"
    SESSION_ABORTED = "session_aborted"


class ResponseKind(str, Enum):
    FREE_TEXT = "free_text"
    APPROVAL = "approval"
    CHOICE = "choice"


TABLES_VERSION = "interaction-tables/1"

ALLOWED_BEHAVIORS: dict[Stage, frozenset[Behavior]] = {
    Stage.INITIAL: frozenset({Behavior.PRIME, Behavior.CONFIGURE}),
    Stage.DURING: frozenset(
        {
            Behavior.PROBE,
            Behavior.CUE,
            Behavior.ELICIT,
            Behavior.AUGMENT,
            Behavior.GUIDE,
            Behavior.CRITIQUE,
            Behavior.REFLECT,
            Behavior.APPROVE,
        }
    ),
    Stage.ERROR_HANDLING: frozenset({Behavior.EXPLAIN, Behavior.CORRECT}),
    Stage.ENDING: frozenset({Behavior.APPROVE, Behavior.REFLECT, Behavior.EXPLAIN}),
}

_TRANSITIONS: dict[tuple[Stage, StageEvent], Stage] = {
    (Stage.INITIAL, StageEvent.CONTEXT_ESTABLISHED): Stage.DURING,
    (Stage.DURING, StageEvent.REFUSAL_RECEIVED): Stage.ERROR_HANDLING,
    (Stage.DURING, StageEvent.MISUNDERSTANDING_DETECTED): Stage.ERROR_HANDLING,
    (Stage.ERROR_HANDLING, StageEvent.REPAIRED): Stage.DURING,
    (Stage.ERROR_HANDLING, StageEvent.REPAIR_ABANDONED): Stage.DURING,
    (Stage.DURING, StageEvent.ALL_NODES_TERMINAL): Stage.ENDING,
    (Stage.INITIAL, StageEvent.SESSION_ABORTED): Stage.ENDING,
    (Stage.DURING, StageEvent.SESSION_ABORTED): Stage.ENDING,
    (Stage.ERROR_HANDLING, StageEvent.SESSION_ABORTED): Stage.ENDING,
    (Stage.ENDING, StageEvent.SESSION_ABORTED): Stage.ENDING,
}

RESPONSE_KINDS: dict[Behavior, ResponseKind] = {
    Behavior.APPROVE: ResponseKind.APPROVAL,
    Behavior.CONFIGURE: ResponseKind.FREE_TEXT,
    Behavior.ELICIT: ResponseKind.FREE_TEXT,
    Behavior.PROBE: ResponseKind.FREE_TEXT,
    Behavior.PRIME: ResponseKind.FREE_TEXT,
    Behavior.CUE: ResponseKind.FREE_TEXT,
    Behavior.GUIDE: ResponseKind.FREE_TEXT,
    Behavior.AUGMENT: ResponseKind.FREE_TEXT,
    Behavior.EXPLAIN: ResponseKind.FREE_TEXT,
    Behavior.CORRECT: ResponseKind.FREE_TEXT,
    Behavior.CRITIQUE: ResponseKind.FREE_TEXT,
    Behavior.REFLECT: ResponseKind.FREE_TEXT,
}

# Behaviors whose free-text reply may be a bare acknowledgment ("ok") rather
# than substantive content. Questions that exist to pull information out of
# the human (configure/elicit/probe) are excluded.
ACK_BEHAVIORS: frozenset[Behavior] = frozenset(
    {
        Behavior.PRIME,
        Behavior.CUE,
        Behavior.GUIDE,
        Behavior.AUGMENT,
        Behavior.EXPLAIN,
        Behavior.CORRECT,
        Behavior.CRITIQUE,
        Behavior.REFLECT,
    }
)

BEHAVIOR_LABELS: dict[Behavior, str] = {
    Behavior.PRIME: "Set the scene",
    Behavior.CONFIGURE: "Capture preferences",
    Behavior.PROBE: "Exploratory question",
    Behavior.CUE: "Timely hint",
    Behavior.ELICIT: "Draw out your thinking",
    Behavior.AUGMENT: "Decision support",
    Behavior.GUIDE: "Step-by-step guidance",
    Behavior.EXPLAIN: "Clarify what happened",
    Behavior.CORRECT: "Fix a misunderstanding",
    Behavior.CRITIQUE: "Challenge an idea",
    Behavior.REFLECT: "Revise with your input",
    Behavior.APPROVE: "Approval request",
}


def allowed_behaviors(stage: Stage) -> frozenset[Behavior]:
    return ALLOWED_BEHAVIORS[stage]


def advance_stage(current: Stage, event: StageEvent) -> Stage:
    """Total transition function; undefined pairs are the identity."""
    return _TRANSITIONS.get((current, event), current)


class IllegalBehaviorError(ValueError):
    """Raised when a behavior is composed for a stage that does not allow it."""


@dataclass(frozen=True)
class CallPayload:
    """Stage-checked core of an outgoing human tool call.

    The wire layer adds identity and timing (call id, session id, deadline).
    """

    stage: Stage
    behavior: Behavior
    reason: InvocationReason | None
    prompt_text: str
    response_kind: ResponseKind
    node_id: str

    @property
    def ack_allowed(self) -> bool:
        return self.behavior in ACK_BEHAVIORS


def compose_call(
    behavior: Behavior,
    stage: Stage,
    node: TaskNode,
    reason: InvocationReason | None,
    prompt_text: str,
) -> CallPayload:
    if behavior not in ALLOWED_BEHAVIORS[stage]:
        raise IllegalBehaviorError(f"behavior {behavior.value!r} is not allowed in stage {stage.value!r}")
    if not prompt_text or not prompt_text.strip():
        raise ValueError("prompt_text must be non-empty")
    return CallPayload(
        stage=stage,
        behavior=behavior,
        reason=reason,
        prompt_text=prompt_text,
        response_kind=RESPONSE_KINDS[behavior],
        node_id=node.id,
    )


# ---------------------------------------------------------------------------
# Guidelines
# ---------------------------------------------------------------------------


class Guideline(str, Enum):
    NATURALNESS = "naturalness"
    EMOTIONALITY = "emotionality"
    RELATIONSHIP_BUILDING = "relationship_building"
    TRANSPARENCY = "transparency"
    AVOIDANCE = "avoidance"


class Verdict(str, Enum):
    PASS = "pass"
    ADVISORY = "advisory"
    VIOLATION = "violation"


# Only these guidelines are machine-judged and may hard-fail a message.
ENFORCEABLE_GUIDELINES = frozenset({Guideline.TRANSPARENCY, Guideline.AVOIDANCE})

_ADVISORY_NOTE = "prompt-template concern; not machine-judged"

CAPABILITY_DISCLOSURE_MARKER = "What I can and cannot do"

REPETITION_THRESHOLD = 0.8
DEFAULT_HISTORY_WINDOW = 10


@dataclass(frozen=True)
class GuidelineFinding:
    verdict: Verdict
    note: str = ""


@dataclass(frozen=True)
class GuidelineReport:
    findings: dict[Guideline, GuidelineFinding]

    def __post_init__(self) -> None:
        if set(self.findings) != set(Guideline):
            raise ValueError("report must carry exactly one finding per guideline")
        for guideline, finding in self.findings.items():
            if finding.verdict is Verdict.VIOLATION and guideline not in ENFORCEABLE_GUIDELINES:
                raise ValueError(f"{guideline.value} may not be a violation")

    @property
    def violations(self) -> list[Guideline]:
        return [g for g, f in self.findings.items() if f.verdict is Verdict.VIOLATION]

    def to_dict(self) -> dict[str, Any]:
        return {
            g.value: {"verdict": f.verdict.value, "note": f.note}
            for g, f in sorted(self.findings.items(), key=lambda kv: kv[0].value)
        }


_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)


def _normalize(text: str) -> list[str]:
    return _PUNCT_RE.sub(" ", text.lower()).split()


def _trigrams(tokens: list[str]) -> set[tuple[str, str, str]]:
    return {tuple(tokens[i : i + 3]) for i in range(len(tokens) - 2)}


def repetition_overlap(candidate: str, other: str) -> float:
    """Word-trigram overlap coefficient between two normalized messages.

    Messages too short to form a trigram fall back to exact normalized
    comparison (1.0 on equality, else 0.0).
    """
    a, b = _normalize(candidate), _normalize(other)
    ta, tb = _trigrams(a), _trigrams(b)
    if not ta or not tb:
        return 1.0 if a == b else 0.0
    return len(ta & tb) / min(len(ta), len(tb))


def check_guidelines(
    candidate_message: str,
    recent_history: list[str],
    *,
    stage: Stage | None = None,
    behavior: Behavior | None = None,
    window: int = DEFAULT_HISTORY_WINDOW,
) -> GuidelineReport:
    """Mechanically check an outgoing message against the five guidelines.

    `stage` and `behavior` identify the message's slot so the transparency
    check can target the opening prime message; without them transparency
    passes vacuously.
    """
    findings: dict[Guideline, GuidelineFinding] = {
        Guideline.NATURALNESS: GuidelineFinding(Verdict.ADVISORY, _ADVISORY_NOTE),
        Guideline.EMOTIONALITY: GuidelineFinding(Verdict.ADVISORY, _ADVISORY_NOTE),
        Guideline.RELATIONSHIP_BUILDING: GuidelineFinding(Verdict.ADVISORY, _ADVISORY_NOTE),
    }

    if stage is Stage.INITIAL and behavior is Behavior.PRIME:
        if CAPABILITY_DISCLOSURE_MARKER in candidate_message:
            findings[Guideline.TRANSPARENCY] = GuidelineFinding(Verdict.PASS)
        else:
            findings[Guideline.TRANSPARENCY] = GuidelineFinding(
                Verdict.VIOLATION, "opening message lacks the capability disclosure"
            )
    else:
        findings[Guideline.TRANSPARENCY] = GuidelineFinding(Verdict.PASS)

    worst = 0.0
    for previous in recent_history[-window:]:
        worst = max(worst, repetition_overlap(candidate_message, previous))
        if worst > REPETITION_THRESHOLD:
            break
    if worst > REPETITION_THRESHOLD:
        findings[Guideline.AVOIDANCE] = GuidelineFinding(
            Verdict.VIOLATION, f"trigram overlap {worst:.2f} with a recent message exceeds {REPETITION_THRESHOLD}"
        )
    else:
        findings[Guideline.AVOIDANCE] = GuidelineFinding(Verdict.PASS)

    return GuidelineReport(findings)


def export_tables() -> dict[str, Any]:
    """Versioned JSON document of the behavior/stage/transition tables."""
    return {
        "version": TABLES_VERSION,
        "stages": [s.value for s in Stage],
        "events": [e.value for e in StageEvent],
        "behaviors": [b.value for b in Behavior],
        "allowed_behaviors": {
            stage.value: sorted(b.value for b in behaviors) for stage, behaviors in ALLOWED_BEHAVIORS.items()
        },
        "transitions": [
            {"stage": stage.value, "event": event.value, "next": target.value}
            for (stage, event), target in sorted(_TRANSITIONS.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value))
        ],
        "response_kinds": {b.value: k.value for b, k in RESPONSE_KINDS.items()},
        "ack_behaviors": sorted(b.value for b in ACK_BEHAVIORS),
        "behavior_labels": {b.value: label for b, label in BEHAVIOR_LABELS.items()},
        "guidelines": [g.value for g in Guideline],
        "enforceable_guidelines": sorted(g.value for g in ENFORCEABLE_GUIDELINES),
        "capability_disclosure_marker": CAPABILITY_DISCLOSURE_MARKER,
    }
