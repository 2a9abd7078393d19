"""The intelligence boundary: decomposition, AI-node execution, and message
composition.

Two implementations share one interface. ScriptedPlanner replays fixture
data and is what every test uses; LLMPlanner talks to an HTTP
chat-completion endpoint for live runs. Planners return values and never
touch session state; the orchestrator does all mutation.
"""

from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Any, Protocol

import httpx

from .interaction import (
    Behavior,
    Guideline,
    Stage,
    Verdict,
    allowed_behaviors,
    check_guidelines,
)
from .taskgraph import TaskNode, TaskTree, validate_tree

logger = logging.getLogger(__name__)


class PlannerError(Exception):
    """Decomposition, execution, or composition could not produce a result."""


def _load_template(name: str) -> str:
    return resources.files("humantool.templates").joinpath(name).read_text(encoding="utf-8")


class Planner(Protocol):
    def decompose(self, goal: str, profile_prompt: str) -> TaskTree: ...

    def execute_ai_node(self, node: TaskNode, context: dict[str, Any]) -> str: ...

    def compose_message(
        self,
        stage: Stage,
        behavior: Behavior,
        node: TaskNode,
        profile_prompt: str,
        context: dict[str, Any],
    ) -> str: ...

    def replan_subtree(self, node: TaskNode, proposal_text: str, profile_prompt: str) -> list[TaskNode]: ...


# ---------------------------------------------------------------------------
# Scripted planner (deterministic test double and offline runner)
# ---------------------------------------------------------------------------


def _template_key(stage: Stage, behavior: Behavior) -> str:
    return f"{stage.value}:{behavior.value}"


@dataclass
class ScriptedPlan:
    """Everything a deterministic run needs, as plain data.

    message_templates is keyed "stage:behavior"; templates may reference
    {node_id} and {description} which are filled per call. replacements maps
    a node id to successive replacement subtrees consumed one per
    negotiation round.
    """

    goal_pattern: str
    tree: TaskTree
    node_outputs: dict[str, str] = field(default_factory=dict)
    message_templates: dict[str, str] = field(default_factory=dict)
    replacements: dict[str, list[list[TaskNode]]] = field(default_factory=dict)
    failing_nodes: frozenset[str] = frozenset()

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScriptedPlan":
        return cls(
            goal_pattern=data["goal"],
            tree=TaskTree.from_dict(data["tree"]),
            node_outputs=dict(data.get("node_outputs", {})),
            message_templates=dict(data.get("message_templates", {})),
            replacements={
                node_id: [[TaskNode.from_dict(n) for n in subtree["nodes"]] for subtree in subtrees]
                for node_id, subtrees in data.get("replacements", {}).items()
            },
            failing_nodes=frozenset(data.get("failing_nodes", [])),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "goal": self.goal_pattern,
            "tree": self.tree.to_dict(),
            "node_outputs": dict(self.node_outputs),
            "message_templates": dict(self.message_templates),
            "replacements": {
                node_id: [{"nodes": [n.to_dict() for n in subtree]} for subtree in subtrees]
                for node_id, subtrees in self.replacements.items()
            },
            "failing_nodes": sorted(self.failing_nodes),
        }


class ScriptedPlanner:
    def __init__(self, plan: ScriptedPlan):
        self.plan = plan
        self._rounds_served: dict[str, int] = {}

    def decompose(self, goal: str, profile_prompt: str) -> TaskTree:
        if goal != self.plan.goal_pattern:
            raise PlannerError(f"scripted plan does not cover goal {goal!r}")
        tree = self.plan.tree.deep_copy()
        result = validate_tree(list(tree.nodes.values()))
        if not result.ok:
            raise PlannerError("scripted tree is invalid: " + "; ".join(str(v) for v in result.violations))
        return tree

    def execute_ai_node(self, node: TaskNode, context: dict[str, Any]) -> str:
        if node.id in self.plan.failing_nodes:
            raise PlannerError(f"scripted failure for node {node.id!r}")
        try:
            return self.plan.node_outputs[node.id]
        except KeyError:
            raise PlannerError(f"no scripted output for node {node.id!r}") from None

    def compose_message(
        self,
        stage: Stage,
        behavior: Behavior,
        node: TaskNode,
        profile_prompt: str,
        context: dict[str, Any],
    ) -> str:
        if behavior not in allowed_behaviors(stage):
            raise PlannerError(f"behavior {behavior.value!r} is illegal in stage {stage.value!r}")
        key = _template_key(stage, behavior)
        try:
            template = self.plan.message_templates[key]
        except KeyError:
            raise PlannerError(f"no scripted template for {key!r}") from None
        try:
            return template.format(node_id=node.id, description=node.description)
        except (KeyError, IndexError, ValueError) as exc:
            raise PlannerError(f"template {key!r} has an unusable placeholder: {exc}") from exc

    def replan_subtree(self, node: TaskNode, proposal_text: str, profile_prompt: str) -> list[TaskNode]:
        variants = self.plan.replacements.get(node.id, [])
        served = self._rounds_served.get(node.id, 0)
        if served >= len(variants):
            raise PlannerError(f"no scripted replacement left for node {node.id!r}")
        self._rounds_served[node.id] = served + 1
        return [copy.deepcopy(n) for n in variants[served]]


# ---------------------------------------------------------------------------
# HTTP chat-completion planner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LLMEndpointConfig:
    base_url: str
    model_name: str
    api_key_env_var: str = ""
    temperature: float = 0.0
    max_retries: int = 2
    request_timeout: float = 30.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0,2]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LLMEndpointConfig":
        return cls(
            base_url=data["base_url"],
            model_name=data["model_name"],
            api_key_env_var=data.get("api_key_env_var", ""),
            temperature=data.get("temperature", 0.0),
            max_retries=data.get("max_retries", 2),
            request_timeout=data.get("request_timeout", 30.0),
        )


class LLMPlanner:
    """Planner backed by a chat-completion HTTP endpoint.

    Tree elicitation demands strict JSON and retries with the validator's
    error text when the model's output does not parse or validate. A custom
    transport can be injected for tests; no test talks to a network.
    """

    def __init__(self, config: LLMEndpointConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {}
        key_var = config.api_key_env_var
        if key_var and os.environ.get(key_var):
            headers["Authorization"] = f"Bearer {os.environ[key_var]}"
        self._client = httpx.Client(
            base_url=config.base_url,
            timeout=config.request_timeout,
            headers=headers,
            transport=transport,
        )
        self._decompose_template = _load_template("decompose_system.txt")
        self._communicate_template = _load_template("communicate_system.txt")
        self._profile_context = _load_template("profile_context.txt")

    def abort(self) -> None:
        """Cancel in-flight work by closing the underlying client."""
        self._client.close()

    def close(self) -> None:
        self._client.close()

    def _chat(self, messages: list[dict[str, str]]) -> str:
        try:
            reply = self._client.post(
                "/chat/completions",
                json={
                    "model": self.config.model_name,
                    "messages": messages,
                    "temperature": self.config.temperature,
                },
            )
            reply.raise_for_status()
            body = reply.json()
            return body["choices"][0]["message"]["content"]
        except httpx.HTTPError as exc:
            raise PlannerError(f"endpoint request failed: {exc}") from exc
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise PlannerError(f"endpoint returned an unusable body: {exc}") from exc

    def _system_with_profile(self, template: str, profile_prompt: str) -> str:
        return f"{template}\n{self._profile_context}\n{profile_prompt}"

    def decompose(self, goal: str, profile_prompt: str) -> TaskTree:
        messages = [
            {"role": "system", "content": self._system_with_profile(self._decompose_template, profile_prompt)},
            {"role": "user", "content": goal},
        ]
        last_error = "no attempt made"
        for _ in range(self.config.max_retries + 1):
            content = self._chat(messages)
            try:
                data = json.loads(content)
                tree = TaskTree.from_dict(data)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                last_error = str(exc)
            else:
                for node in tree.nodes.values():
                    node.allocation = None  # allocation is the engine's job
                return tree
            messages = messages + [
                {"role": "assistant", "content": content},
                {
                    "role": "user",
                    "content": f"That output was invalid: {last_error}. Reply with only the corrected JSON tree.",
                },
            ]
        raise PlannerError(f"decomposition failed after {self.config.max_retries + 1} attempts: {last_error}")

    def execute_ai_node(self, node: TaskNode, context: dict[str, Any]) -> str:
        prior = "\n".join(context.get("node_context", []))
        messages = [
            {
                "role": "system",
                "content": "Carry out the subtask below and reply with the work product only.",
            },
            {"role": "user", "content": f"Subtask: {node.description}\n\nPrior results:\n{prior}"},
        ]
        return self._chat(messages)

    def compose_message(
        self,
        stage: Stage,
        behavior: Behavior,
        node: TaskNode,
        profile_prompt: str,
        context: dict[str, Any],
    ) -> str:
        if behavior not in allowed_behaviors(stage):
            raise PlannerError(f"behavior {behavior.value!r} is illegal in stage {stage.value!r}")
        recent: list[str] = list(context.get("recent_messages", []))
        user = (
            f"Stage: {stage.value}\nBehavior: {behavior.value}\n"
            f"Subtask: {node.description}\n"
            f"Already told the collaborator:\n" + "\n".join(f"- {m}" for m in recent[-3:])
        )
        messages = [
            {"role": "system", "content": self._system_with_profile(self._communicate_template, profile_prompt)},
            {"role": "user", "content": user},
        ]
        text = self._chat(messages)
        report = check_guidelines(text, recent, stage=stage, behavior=behavior)
        if report.findings[Guideline.AVOIDANCE].verdict is Verdict.VIOLATION:
            messages = messages + [
                {"role": "assistant", "content": text},
                {"role": "user", "content": "That repeats an earlier message almost verbatim. Say it differently."},
            ]
            text = self._chat(messages)
            report = check_guidelines(text, recent, stage=stage, behavior=behavior)
            if report.findings[Guideline.AVOIDANCE].verdict is Verdict.VIOLATION:
                logger.warning("message for %s/%s still repetitive after regeneration", stage.value, behavior.value)
        if not text.strip():
            raise PlannerError("endpoint returned an empty message")
        return text

    def replan_subtree(self, node: TaskNode, proposal_text: str, profile_prompt: str) -> list[TaskNode]:
        system = (
            self._system_with_profile(self._decompose_template, profile_prompt)
            + f'\n\nRevise ONLY the subtree for subtask "{node.description}". '
            + f'The root of your JSON tree must keep the id "{node.id}".'
        )
        messages = [
            {"role": "system", "content": system},
            {"role": "user", "content": f"The collaborator proposes instead: {proposal_text}"},
        ]
        last_error = "no attempt made"
        for _ in range(self.config.max_retries + 1):
            content = self._chat(messages)
            try:
                data = json.loads(content)
                nodes = [TaskNode.from_dict(n) for n in data["nodes"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                last_error = str(exc)
            else:
                for parsed in nodes:
                    parsed.allocation = None
                return nodes
            messages = messages + [
                {"role": "assistant", "content": content},
                {
                    "role": "user",
                    "content": f"That output was invalid: {last_error}. Reply with only the corrected JSON tree.",
                },
            ]
        raise PlannerError(f"replanning failed after {self.config.max_retries + 1} attempts: {last_error}")
