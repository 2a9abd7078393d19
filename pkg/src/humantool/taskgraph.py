"""Hierarchical task decomposition and per-node allocation.

A goal is decomposed into a tree of nodes; leaves are the executable units.
For each leaf an allocation decides whether the AI acts alone or the human
is called in, and for which reasons:

- authority control: the node is safety-critical, or requires authorization
  the human has not delegated;
- information exchange: the node needs expertise, private information, or
  personal preferences only the human holds;
- capability complementarity: the node needs creativity or complex judgment
  and the human scores well there, or needs physical interaction with the
  world, which no score can substitute for.

Reasons are reported in a fixed precedence order (authority first) so the
primary reason is stable and auditable.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from .schema import HumanToolProfile, ValidationResult, Violation, validate_profile


class RequirementFlag(str, Enum):
    NEEDS_CREATIVITY = "needs_creativity"
    NEEDS_COMPLEX_JUDGMENT = "needs_complex_judgment"
    NEEDS_PHYSICAL_INTERACTION = "needs_physical_interaction"
    NEEDS_DOMAIN_EXPERTISE = "needs_domain_expertise"
    NEEDS_PRIVATE_INFO = "needs_private_info"
    NEEDS_PREFERENCES = "needs_preferences"
    SAFETY_CRITICAL = "safety_critical"
    REQUIRES_AUTHORIZATION = "requires_authorization"


class Status(str, Enum):
    PENDING = "pending"
    IN_PROGRESS = "in_progress"
    DONE = "done"
    FAILED = "failed"
    SKIPPED = "skipped"


TERMINAL_STATUSES = frozenset({Status.DONE, Status.FAILED, Status.SKIPPED})

# Statuses that unblock the siblings to the right of a node.
_CLEARED = frozenset({Status.DONE, Status.SKIPPED})

_LEGAL_TRANSITIONS: dict[Status, frozenset[Status]] = {
    Status.PENDING: frozenset({Status.IN_PROGRESS, Status.DONE, Status.FAILED, Status.SKIPPED}),
    Status.IN_PROGRESS: frozenset({Status.DONE, Status.FAILED, Status.SKIPPED}),
    Status.FAILED: frozenset({Status.IN_PROGRESS}),
    Status.DONE: frozenset(),
    Status.SKIPPED: frozenset(),
}


class Actor(str, Enum):
    AI = "AI"
    HUMAN = "Human"


class InvocationReason(str, Enum):
    CAPABILITY_COMPLEMENTARITY = "capability_complementarity"
    INFORMATION_EXCHANGE = "information_exchange"
    AUTHORITY_CONTROL = "authority_control"


REASON_PRECEDENCE = (
    InvocationReason.AUTHORITY_CONTROL,
    InvocationReason.INFORMATION_EXCHANGE,
    InvocationReason.CAPABILITY_COMPLEMENTARITY,
)


class TreeError(ValueError):
    """Raised for structurally unusable trees or illegal operations on them."""


@dataclass(frozen=True)
class Allocation:
    actor: Actor
    reasons: tuple[InvocationReason, ...] = ()

    def __post_init__(self) -> None:
        if self.actor is Actor.AI and self.reasons:
            raise TreeError("AI allocation must carry no reasons")
        if self.actor is Actor.HUMAN:
            if not self.reasons:
                raise TreeError("Human allocation must carry at least one reason")
            if len(set(self.reasons)) != len(self.reasons):
                raise TreeError("allocation reasons must not repeat")

    @property
    def primary_reason(self) -> InvocationReason | None:
        return self.reasons[0] if self.reasons else None

    def to_dict(self) -> dict[str, Any]:
        data: dict[str, Any] = {"actor": self.actor.value, "reasons": [r.value for r in self.reasons]}
        if self.primary_reason is not None:
            data["primary_reason"] = self.primary_reason.value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Allocation":
        return cls(
            actor=Actor(data["actor"]),
            reasons=tuple(InvocationReason(r) for r in data.get("reasons", [])),
        )


@dataclass
class TaskNode:
    id: str
    description: str
    children: list[str] = field(default_factory=list)
    requirement_flags: frozenset[RequirementFlag] = frozenset()
    status: Status = Status.PENDING
    allocation: Allocation | None = None

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "description": self.description,
            "children": list(self.children),
            "requirement_flags": sorted(f.value for f in self.requirement_flags),
            "status": self.status.value,
            "allocation": self.allocation.to_dict() if self.allocation else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TaskNode":
        allocation = data.get("allocation")
        return cls(
            id=data["id"],
            description=data.get("description", ""),
            children=list(data.get("children", [])),
            requirement_flags=frozenset(RequirementFlag(f) for f in data.get("requirement_flags", [])),
            status=Status(data.get("status", "pending")),
            allocation=Allocation.from_dict(allocation) if allocation else None,
        )


@dataclass
class TaskTree:
    """A validated single-root tree, indexed by node id."""

    nodes: dict[str, TaskNode]
    root_id: str

    @classmethod
    def from_nodes(cls, nodes: Iterable[TaskNode]) -> "TaskTree":
        node_list = list(nodes)
        result = validate_tree(node_list)
        if not result.ok:
            raise TreeError("invalid tree: " + "; ".join(str(v) for v in result.violations))
        index = {n.id: n for n in node_list}
        root = _find_roots(node_list)[0]
        return cls(nodes=index, root_id=root)

    @property
    def root(self) -> TaskNode:
        return self.nodes[self.root_id]

    def node(self, node_id: str) -> TaskNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise TreeError(f"unknown node id: {node_id!r}") from None

    def leaves(self) -> list[TaskNode]:
        return [n for n in self.walk() if n.is_leaf]

    def walk(self, start: str | None = None) -> list[TaskNode]:
        """Nodes in depth-first, left-to-right order."""
        out: list[TaskNode] = []
        stack = [start or self.root_id]
        while stack:
            node = self.node(stack.pop())
            out.append(node)
            stack.extend(reversed(node.children))
        return out

    def parent_of(self, node_id: str) -> str | None:
        for node in self.nodes.values():
            if node_id in node.children:
                return node.id
        return None

    def deep_copy(self) -> "TaskTree":
        return copy.deepcopy(self)

    def to_dict(self) -> dict[str, Any]:
        return {"nodes": [n.to_dict() for n in self.walk()]}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TaskTree":
        return cls.from_nodes(TaskNode.from_dict(d) for d in data["nodes"])


def _find_roots(nodes: list[TaskNode]) -> list[str]:
    referenced = {child for node in nodes for child in node.children}
    return [n.id for n in nodes if n.id not in referenced]


def validate_tree(nodes: Iterable[TaskNode]) -> ValidationResult:
    """Structural checks; violations are data, not exceptions."""
    node_list = list(nodes)
    violations: list[Violation] = []
    seen: set[str] = set()
    for node in node_list:
        if node.id in seen:
            violations.append(Violation(node.id, "duplicate node id"))
        seen.add(node.id)
    index = {n.id: n for n in node_list}

    parent_count: dict[str, int] = {}
    for node in node_list:
        for child in node.children:
            if child not in index:
                violations.append(Violation(node.id, f"child reference does not resolve: {child!r}"))
            parent_count[child] = parent_count.get(child, 0) + 1
    for child, count in parent_count.items():
        if count > 1:
            violations.append(Violation(child, f"node has {count} parents"))

    # Cycle detection over the child graph (white/grey/black colouring).
    WHITE, GREY, BLACK = 0, 1, 2
    color = dict.fromkeys(index, WHITE)
    cycle_nodes: set[str] = set()

    def visit(node_id: str, path: list[str]) -> None:
        color[node_id] = GREY
        path.append(node_id)
        for child in index[node_id].children:
            if child not in index:
                continue
            if color[child] == GREY:
                cycle_nodes.add(child)
            elif color[child] == WHITE:
                visit(child, path)
        path.pop()
        color[node_id] = BLACK

    for node_id in index:
        if color[node_id] == WHITE:
            visit(node_id, [])
    for node_id in sorted(cycle_nodes):
        violations.append(Violation(node_id, "node participates in a cycle"))

    roots = _find_roots(node_list)
    if not node_list:
        violations.append(Violation("<tree>", "tree has no nodes"))
    elif len(roots) != 1:
        violations.append(Violation("<tree>", f"tree must have exactly one root, found {len(roots)}"))
    elif not cycle_nodes:
        reachable = {n.id for n in _walk_index(index, roots[0])}
        for node in node_list:
            if node.id not in reachable:
                violations.append(Violation(node.id, "orphan node unreachable from root"))

    for node in node_list:
        if node.children and node.allocation is not None:
            violations.append(Violation(node.id, "allocation set on non-leaf node"))

    return ValidationResult(tuple(violations))


def _walk_index(index: dict[str, TaskNode], root: str) -> list[TaskNode]:
    out: list[TaskNode] = []
    stack = [root]
    seen: set[str] = set()
    while stack:
        node_id = stack.pop()
        if node_id in seen or node_id not in index:
            continue
        seen.add(node_id)
        node = index[node_id]
        out.append(node)
        stack.extend(reversed(node.children))
    return out


@dataclass(frozen=True)
class AllocationPolicy:
    capability_threshold: int = 3
    authority_delegation_cutoff: int = 4
    reason_precedence: tuple[InvocationReason, ...] = REASON_PRECEDENCE

    def __post_init__(self) -> None:
        if not 1 <= self.capability_threshold <= 5:
            raise ValueError("capability_threshold must be in [1,5]")
        if not 1 <= self.authority_delegation_cutoff <= 5:
            raise ValueError("authority_delegation_cutoff must be in [1,5]")
        if sorted(r.value for r in self.reason_precedence) != sorted(r.value for r in InvocationReason):
            raise ValueError("reason_precedence must list each reason exactly once")

    def to_dict(self) -> dict[str, Any]:
        return {
            "capability_threshold": self.capability_threshold,
            "authority_delegation_cutoff": self.authority_delegation_cutoff,
            "reason_precedence": [r.value for r in self.reason_precedence],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AllocationPolicy":
        return cls(
            capability_threshold=data.get("capability_threshold", 3),
            authority_delegation_cutoff=data.get("authority_delegation_cutoff", 4),
            reason_precedence=tuple(
                InvocationReason(r) for r in data.get("reason_precedence", [r.value for r in REASON_PRECEDENCE])
            ),
        )


_INFORMATION_FLAGS = frozenset(
    {
        RequirementFlag.NEEDS_DOMAIN_EXPERTISE,
        RequirementFlag.NEEDS_PRIVATE_INFO,
        RequirementFlag.NEEDS_PREFERENCES,
    }
)


def allocate(node: TaskNode, profile: HumanToolProfile, policy: AllocationPolicy) -> Allocation:
    """Decide who acts on a leaf and why. Pure; same inputs, same answer."""
    if not node.is_leaf:
        raise TreeError(f"cannot allocate non-leaf node {node.id!r}")
    result = validate_profile(profile)
    if not result.ok:
        raise TreeError("cannot allocate with invalid profile: " + "; ".join(str(v) for v in result.violations))

    flags = node.requirement_flags
    holding: list[InvocationReason] = []

    if RequirementFlag.SAFETY_CRITICAL in flags or (
        RequirementFlag.REQUIRES_AUTHORIZATION in flags
        and profile.authority.delegation_level < policy.authority_delegation_cutoff
    ):
        holding.append(InvocationReason.AUTHORITY_CONTROL)

    if flags & _INFORMATION_FLAGS:
        holding.append(InvocationReason.INFORMATION_EXCHANGE)

    capability = False
    if (
        RequirementFlag.NEEDS_CREATIVITY in flags or RequirementFlag.NEEDS_COMPLEX_JUDGMENT in flags
    ) and profile.capabilities.cognitive_creativity >= policy.capability_threshold:
        capability = True
    # Physical interaction always routes to the human: the AI has no body.
    if RequirementFlag.NEEDS_PHYSICAL_INTERACTION in flags:
        capability = True
    if capability:
        holding.append(InvocationReason.CAPABILITY_COMPLEMENTARITY)

    if not holding:
        return Allocation(actor=Actor.AI)
    ordered = tuple(r for r in policy.reason_precedence if r in holding)
    return Allocation(actor=Actor.HUMAN, reasons=ordered)


def allocate_leaves(tree: TaskTree, profile: HumanToolProfile, policy: AllocationPolicy) -> None:
    for leaf in tree.leaves():
        leaf.allocation = allocate(leaf, profile, policy)


def next_executable(tree: TaskTree) -> str | None:
    """First pending leaf in depth-first order whose ancestor-path left
    siblings are all done or skipped."""

    def walk(node_id: str) -> str | None:
        node = tree.node(node_id)
        if node.is_leaf:
            return node.id if node.status is Status.PENDING else None
        for i, child in enumerate(node.children):
            if i > 0 and tree.node(node.children[i - 1]).status not in _CLEARED:
                break
            found = walk(child)
            if found is not None:
                return found
        return None

    return walk(tree.root_id)


def mark_status(tree: TaskTree, node_id: str, status: Status) -> None:
    """Set a leaf's status and recompute ancestor statuses in place."""
    node = tree.node(node_id)
    if not node.is_leaf:
        raise TreeError(f"only leaves can be marked directly, {node_id!r} has children")
    if status not in _LEGAL_TRANSITIONS[node.status]:
        raise TreeError(f"illegal transition {node.status.value} -> {status.value} on {node_id!r}")
    node.status = status
    _recompute_ancestors(tree, node_id)


def _recompute_ancestors(tree: TaskTree, node_id: str) -> None:
    parent = tree.parent_of(node_id)
    while parent is not None:
        node = tree.node(parent)
        node.status = _derive_status(tree, node)
        parent = tree.parent_of(parent)


def _derive_status(tree: TaskTree, node: TaskNode) -> Status:
    child_statuses = [tree.node(c).status for c in node.children]
    if all(s in _CLEARED for s in child_statuses):
        return Status.DONE
    if all(s in TERMINAL_STATUSES for s in child_statuses):
        return Status.FAILED
    if any(s is not Status.PENDING for s in child_statuses):
        return Status.IN_PROGRESS
    return Status.PENDING


def replace_subtree(tree: TaskTree, node_id: str, replacement: list[TaskNode]) -> None:
    """Swap out the subtree rooted at node_id wholesale.

    The replacement's root must reuse node_id so parent links and per-node
    bookkeeping stay stable; all other replacement ids must be new to the
    tree. The spliced tree is re-validated.
    """
    tree.node(node_id)
    if not replacement:
        raise TreeError("replacement subtree is empty")
    roots = _find_roots(replacement)
    if len(roots) != 1 or roots[0] != node_id:
        raise TreeError(f"replacement subtree must be rooted at {node_id!r}")
    old_ids = {n.id for n in tree.walk(node_id)}
    surviving = set(tree.nodes) - old_ids
    clashes = {n.id for n in replacement} & surviving
    if clashes:
        raise TreeError(f"replacement ids clash with existing nodes: {sorted(clashes)}")

    # Validate the spliced result before committing so a bad replacement
    # cannot corrupt the live tree.
    candidate = {nid: n for nid, n in tree.nodes.items() if nid not in old_ids}
    for node in replacement:
        candidate[node.id] = node
    result = validate_tree(list(candidate.values()))
    if not result.ok:
        raise TreeError("replacement produced an invalid tree: " + "; ".join(str(v) for v in result.violations))

    tree.nodes = candidate
    _recompute_ancestors(tree, node_id)


def status_census(tree: TaskTree) -> dict[str, int]:
    census = {s.value: 0 for s in Status}
    for leaf in tree.leaves():
        census[leaf.status.value] += 1
    return census
