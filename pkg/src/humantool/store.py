"""Persistence and replay: append-only session logs, state hashing, and the
activation report.

Each session writes one newline-delimited JSON log
(``sessions/{session_id}/events.ndjson``) plus a terminal ``snapshot.json``.
Log entries carry dense sequence numbers from 1; a partially written final
line (crash) is recoverable by dropping it.

State hashes are SHA-256 over canonical JSON (sorted keys, compact
separators, UTF-8). Two hashes exist: the tree hash covers decomposition
structure, flags, allocations, and statuses; the session hash additionally
covers stage, mode, identity, the (possibly accumulated) profile, and
per-node context. Replaying a log must reproduce the live session hash.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable

from .interaction import Behavior, Guideline, Stage, Verdict
from .protocol import canonical_json
from .taskgraph import InvocationReason, Status, TaskNode, TaskTree, mark_status, replace_subtree

if TYPE_CHECKING:  # pragma: no cover
    from .orchestrator import Session

STATE_HASH_ALGORITHM = "sha256"


class EventKind(str, Enum):
    # session_start is the genesis entry: it carries everything replay needs
    # to reconstruct the starting state.
    SESSION_START = "session_start"
    INVOCATION = "invocation"
    STAGE_CHANGE = "stage_change"
    TREE_MUTATION = "tree_mutation"
    WIRE_ERROR = "wire_error"


class LogError(Exception):
    """Sequence gaps, malformed entries, or unusable log files."""


@dataclass(frozen=True)
class EventLogEntry:
    sequence_number: int
    kind: EventKind
    body: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {"sequence_number": self.sequence_number, "kind": self.kind.value, "body": self.body}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "EventLogEntry":
        try:
            return cls(
                sequence_number=int(data["sequence_number"]),
                kind=EventKind(data["kind"]),
                body=dict(data["body"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LogError(f"malformed log entry: {exc}") from exc


def hash_canonical(data: Any) -> str:
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def tree_state_hash(tree: TaskTree) -> str:
    return hash_canonical(tree.to_dict())


def session_state_dict(session: "Session") -> dict[str, Any]:
    return {
        "session_id": session.session_id,
        "mode": session.mode.value,
        "stage": session.stage.value,
        "tree": session.tree.to_dict(),
        "profile": session.profile.to_dict(),
        "node_context": {k: list(v) for k, v in session.node_context.items() if v},
    }


def session_state_hash(session: "Session") -> str:
    return hash_canonical(session_state_dict(session))


# ---------------------------------------------------------------------------
# Log files
# ---------------------------------------------------------------------------


class EventLogWriter:
    """Single-writer append-only NDJSON log with dense sequence numbers."""

    def __init__(self, path: Path | str, fsync: bool = False):
        self.path = Path(path)
        self.fsync = fsync
        self.path.parent.mkdir(parents=True, exist_ok=True)
        existing: list[EventLogEntry] = []
        if self.path.exists():
            raw = self.path.read_bytes()
            existing = read_log(self.path, recover=True)
            valid = b"".join(canonical_json(e.to_dict()).encode("utf-8") + b"\n" for e in existing)
            if raw != valid:
                # Drop a truncated tail left by a crash before appending.
                self.path.write_bytes(valid)
        self._last_sequence = existing[-1].sequence_number if existing else 0
        self._handle = open(self.path, "ab")

    def append(self, entry: EventLogEntry) -> None:
        expected = self._last_sequence + 1
        if entry.sequence_number != expected:
            raise LogError(f"sequence gap: expected {expected}, got {entry.sequence_number}")
        line = canonical_json(entry.to_dict()) + "\n"
        self._handle.write(line.encode("utf-8"))
        self._handle.flush()
        if self.fsync:
            os.fsync(self._handle.fileno())
        self._last_sequence = entry.sequence_number

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "EventLogWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def read_log(path: Path | str, recover: bool = False) -> list[EventLogEntry]:
    """Load a log file. With recover=True a truncated final line is dropped;
    otherwise any malformed line or sequence gap raises LogError."""
    entries: list[EventLogEntry] = []
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    for i, line in enumerate(lines):
        if not line:
            continue
        is_last = i >= len(lines) - 2  # final content line, possibly unterminated
        try:
            entries.append(EventLogEntry.from_dict(json.loads(line.decode("utf-8"))))
        except (json.JSONDecodeError, UnicodeDecodeError, LogError) as exc:
            if recover and is_last:
                break
            raise LogError(f"{path}:{i + 1}: unreadable entry: {exc}") from exc
    verify_dense(entries)
    return entries


def verify_dense(entries: Iterable[EventLogEntry]) -> None:
    for i, entry in enumerate(entries, start=1):
        if entry.sequence_number != i:
            raise LogError(f"sequence gap: expected {i}, got {entry.sequence_number}")


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


def replay(entries: list[EventLogEntry]) -> "Session | None":
    """Fold a log back into the terminal session state it recorded.

    Returns None for an empty log. The fold applies recorded effects only --
    it never re-runs planner or allocation logic -- so the result is
    deterministic given the log.
    """
    from .orchestrator import Mode, Session, SimClock

    verify_dense(entries)
    if not entries:
        return None
    genesis = entries[0]
    if genesis.kind is not EventKind.SESSION_START:
        raise LogError(f"log must begin with session_start, found {genesis.kind.value}")

    from .schema import HumanToolProfile
    from .taskgraph import AllocationPolicy

    body = genesis.body
    try:
        session = Session(
            session_id=body["session_id"],
            goal=body.get("goal", ""),
            profile=HumanToolProfile.from_dict(body["profile"]),
            tree=TaskTree.from_dict(body["tree"]),
            stage=Stage.INITIAL,
            mode=Mode(body["mode"]),
            policy=AllocationPolicy.from_dict(body["policy"]),
            timeout_default=body.get("timeout_default", 300.0),
            max_negotiation_rounds=body.get("max_negotiation_rounds", 2),
            clock=SimClock(),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise LogError(f"unusable session_start entry: {exc}") from exc

    for entry in entries[1:]:
        body = entry.body
        try:
            if entry.kind is EventKind.STAGE_CHANGE:
                session.stage = Stage(body["to"])
            elif entry.kind is EventKind.TREE_MUTATION:
                action = body["action"]
                if action == "set_status":
                    mark_status(session.tree, body["node_id"], Status(body["status"]))
                elif action == "replace_subtree":
                    replacement = [TaskNode.from_dict(n) for n in body["nodes"]]
                    replace_subtree(session.tree, body["node_id"], replacement)
                else:
                    raise LogError(f"unknown tree mutation {action!r}")
            elif entry.kind is EventKind.INVOCATION:
                appended = body.get("context_append")
                if appended is not None:
                    session.node_context.setdefault(body["record"]["node_id"], []).append(appended)
                preferences = body.get("preferences_append")
                if preferences is not None:
                    session.profile = session.profile.with_appended_notes(preferences)
            elif entry.kind is EventKind.WIRE_ERROR:
                pass
            elif entry.kind is EventKind.SESSION_START:
                raise LogError("duplicate session_start entry")
        except LogError:
            raise
        except Exception as exc:
            raise LogError(f"entry {entry.sequence_number}: cannot apply: {exc}") from exc

    session.event_log = list(entries)
    return session


# ---------------------------------------------------------------------------
# Activation report
# ---------------------------------------------------------------------------

_HUMAN_OUTCOMES = frozenset({"answered", "refused", "counter_proposal", "timed_out"})


@dataclass
class ActivationReport:
    """Per-category counts of how and why the human tool was activated."""

    why_need_human: dict[str, int] = field(
        default_factory=lambda: {r.value: 0 for r in InvocationReason}
    )
    when_need_human: dict[str, int] = field(default_factory=lambda: {s.value: 0 for s in Stage})
    communication_principles: dict[str, dict[str, int]] = field(
        default_factory=lambda: {g.value: {v.value: 0 for v in Verdict} for g in Guideline}
    )
    interaction_behaviors: dict[str, int] = field(default_factory=lambda: {b.value: 0 for b in Behavior})
    totals: dict[str, int] = field(
        default_factory=lambda: {"human_calls": 0, "reason_carrying_calls": 0, "ai_executed": 0}
    )

    def to_dict(self) -> dict[str, Any]:
        return {
            "why_need_human": dict(self.why_need_human),
            "when_need_human": dict(self.when_need_human),
            "communication_principles": {g: dict(v) for g, v in self.communication_principles.items()},
            "interaction_behaviors": dict(self.interaction_behaviors),
            "totals": dict(self.totals),
        }

    def merge(self, other: "ActivationReport") -> "ActivationReport":
        merged = ActivationReport()
        for key in merged.why_need_human:
            merged.why_need_human[key] = self.why_need_human[key] + other.why_need_human[key]
        for key in merged.when_need_human:
            merged.when_need_human[key] = self.when_need_human[key] + other.when_need_human[key]
        for g in merged.communication_principles:
            for v in merged.communication_principles[g]:
                merged.communication_principles[g][v] = (
                    self.communication_principles[g][v] + other.communication_principles[g][v]
                )
        for key in merged.interaction_behaviors:
            merged.interaction_behaviors[key] = self.interaction_behaviors[key] + other.interaction_behaviors[key]
        for key in merged.totals:
            merged.totals[key] = self.totals[key] + other.totals[key]
        return merged


def activation_report(logs: list[EventLogEntry] | list[list[EventLogEntry]]) -> ActivationReport:
    """Tally one or many session logs into a single report."""
    if logs and isinstance(logs[0], EventLogEntry):
        log_sets: list[list[EventLogEntry]] = [logs]  # type: ignore[list-item]
    else:
        log_sets = list(logs)  # type: ignore[arg-type]

    report = ActivationReport()
    for entries in log_sets:
        for entry in entries:
            if entry.kind is not EventKind.INVOCATION:
                continue
            try:
                record = entry.body["record"]
                outcome = record["outcome"]
            except (KeyError, TypeError) as exc:
                raise LogError(f"entry {entry.sequence_number}: malformed invocation body: {exc}") from exc
            if outcome == "ai_executed":
                report.totals["ai_executed"] += 1
                continue
            if outcome not in _HUMAN_OUTCOMES:
                raise LogError(f"entry {entry.sequence_number}: unknown outcome {outcome!r}")
            report.totals["human_calls"] += 1
            behavior = record.get("behavior")
            if behavior in report.interaction_behaviors:
                report.interaction_behaviors[behavior] += 1
            report.when_need_human[record["stage"]] += 1
            reason = record.get("reason")
            if reason:
                report.why_need_human[reason] += 1
                report.totals["reason_carrying_calls"] += 1
            guidelines = entry.body.get("guidelines") or {}
            for guideline, finding in guidelines.items():
                if guideline in report.communication_principles:
                    report.communication_principles[guideline][finding["verdict"]] += 1
    return report


# ---------------------------------------------------------------------------
# Session store layout
# ---------------------------------------------------------------------------


class SessionStore:
    """Filesystem layout: ``{root}/sessions/{session_id}/events.ndjson`` and
    ``snapshot.json``."""

    def __init__(self, root: Path | str, fsync: bool = False):
        self.root = Path(root)
        self.fsync = fsync

    def session_dir(self, session_id: str) -> Path:
        return self.root / "sessions" / session_id

    def log_path(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "events.ndjson"

    def snapshot_path(self, session_id: str) -> Path:
        return self.session_dir(session_id) / "snapshot.json"

    def open_writer(self, session_id: str) -> EventLogWriter:
        return EventLogWriter(self.log_path(session_id), fsync=self.fsync)

    def read_entries(self, session_id: str) -> list[EventLogEntry]:
        return read_log(self.log_path(session_id))

    def write_snapshot(self, session: "Session") -> Path:
        path = self.snapshot_path(session.session_id)
        path.parent.mkdir(parents=True, exist_ok=True)
        snapshot = {
            "state": session_state_dict(session),
            "state_hash": session_state_hash(session),
            "tree_hash": tree_state_hash(session.tree),
        }
        path.write_text(canonical_json(snapshot) + "\n", encoding="utf-8")
        return path

    def list_sessions(self) -> list[str]:
        base = self.root / "sessions"
        if not base.exists():
            return []
        return sorted(p.name for p in base.iterdir() if (p / "events.ndjson").exists())
