"""Shared builders for profiles, trees, and scripted plans."""

from __future__ import annotations

import pytest

from humantool.interaction import Behavior, Stage
from humantool.planner import ScriptedPlan
from humantool.schema import Authority, Capabilities, Domain, HumanToolProfile, Information
from humantool.taskgraph import RequirementFlag, TaskNode, TaskTree


def make_profile(
    cc: int = 3,
    skill: int = 3,
    ei: int = 3,
    expertise: int = 3,
    private: int = 3,
    pref: int = 3,
    delegation: int = 3,
    auth: int = 3,
    domain: Domain = Domain.GENERIC,
    human_id: str = "pat",
    notes: str = "",
) -> HumanToolProfile:
    return HumanToolProfile(
        human_id=human_id,
        domain=domain,
        capabilities=Capabilities(cc, skill, ei),
        information=Information(expertise, private, pref),
        authority=Authority(delegation, auth),
        preference_notes=notes,
    )


def leaf(node_id: str, flags: set[RequirementFlag] | None = None, description: str = "") -> TaskNode:
    return TaskNode(
        id=node_id,
        description=description or f"do {node_id}",
        requirement_flags=frozenset(flags or set()),
    )


def tree_of(*nodes: TaskNode) -> TaskTree:
    return TaskTree.from_nodes(nodes)


def two_leaf_tree() -> TaskTree:
    return tree_of(
        TaskNode(id="root", description="the goal", children=["a", "b"]),
        leaf("a"),
        leaf("b"),
    )


DEFAULT_TEMPLATES = {
    "initial:prime": "Hello! We are working on {description}. What I can and cannot do: I plan and execute; you decide.",
    "during:elicit": "Your thoughts on {node_id}: {description}?",
    "during:probe": "What do you know about {node_id}?",
    "during:guide": "Please handle {node_id} in the real world: {description}",
    "during:approve": "Approve {node_id}? ({description})",
    "error_handling:explain": "About {node_id}: here is what happened and why I asked.",
    "ending:reflect": "All done. Here is a summary of what we produced together.",
}


def scripted_plan(
    tree: TaskTree,
    goal: str = "the goal",
    node_outputs: dict[str, str] | None = None,
    templates: dict[str, str] | None = None,
    replacements=None,
    failing: set[str] | None = None,
) -> ScriptedPlan:
    outputs = node_outputs
    if outputs is None:
        outputs = {n.id: f"output-{n.id}" for n in tree.leaves()}
    return ScriptedPlan(
        goal_pattern=goal,
        tree=tree,
        node_outputs=outputs,
        message_templates=dict(templates or DEFAULT_TEMPLATES),
        replacements=replacements or {},
        failing_nodes=frozenset(failing or set()),
    )


@pytest.fixture
def profile() -> HumanToolProfile:
    return make_profile()


STAGES = list(Stage)
BEHAVIORS = list(Behavior)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion."""
    lines: list[tuple[str, str]] = []
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid and "::" in nodeid:
                lines.append((nodeid.split("::")[-1], label))
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for name, label in sorted(lines):
            terminalreporter.write_line(f"{label}  {name}")
