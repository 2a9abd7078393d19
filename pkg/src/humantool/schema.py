"""Human tool schema: profiles, validation, and rendering.

A human collaborator is described along three dimensions -- capabilities,
information, and authority -- each scored on a 1..5 ordinal scale (5 is the
strongest). Profiles are ingested from an eight-item self-assessment
questionnaire, validated, and rendered two ways: as a tool descriptor an
agent can list and invoke, and as a plain-text profile block for use inside
model prompts.

All templates in this module are fixed strings so renders are deterministic
and testable byte-for-byte.
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any

SCORE_MIN = 1
SCORE_MAX = 5

DEFAULT_MAX_PREFERENCE_NOTES = 4096

QUESTION_COUNT = 8

# Questionnaire items where option 1 is the strongest self-assessment and
# therefore maps to score 5 (reversed). The delegation item (Q7) reads in the
# opposite direction: option 1 is "makes every decision personally".
_REVERSED_QUESTIONS = (1, 2, 3, 4, 5, 6, 8)
_DIRECT_QUESTIONS = (7,)


class Domain(str, Enum):
    TRAVEL_PLANNING = "travel_planning"
    STORY_WRITING = "story_writing"
    GENERIC = "generic"


@dataclass(frozen=True)
class Capabilities:
    """What the human can do that the agent may want to borrow."""

    cognitive_creativity: int
    specialized_skill: int
    external_interaction: int


@dataclass(frozen=True)
class Information:
    """What the human knows: expertise, private context, and preferences."""

    domain_expertise: int
    private_information: int
    preference_clarity: int


@dataclass(frozen=True)
class Authority:
    """Decision boundaries: how much is delegated, how much may be shared.

    delegation_level 5 means the human hands most decisions to the agent;
    authorization_level 5 means the human authorizes full information sharing.
    """

    delegation_level: int
    authorization_level: int


@dataclass(frozen=True)
class HumanToolProfile:
    human_id: str
    domain: Domain
    capabilities: Capabilities
    information: Information
    authority: Authority
    preference_notes: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "human_id": self.human_id,
            "domain": self.domain.value,
            "capabilities": {
                "cognitive_creativity": self.capabilities.cognitive_creativity,
                "specialized_skill": self.capabilities.specialized_skill,
                "external_interaction": self.capabilities.external_interaction,
            },
            "information": {
                "domain_expertise": self.information.domain_expertise,
                "private_information": self.information.private_information,
                "preference_clarity": self.information.preference_clarity,
            },
            "authority": {
                "delegation_level": self.authority.delegation_level,
                "authorization_level": self.authority.authorization_level,
            },
            "preference_notes": self.preference_notes,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "HumanToolProfile":
        try:
            return cls(
                human_id=data["human_id"],
                domain=Domain(data["domain"]),
                capabilities=Capabilities(**data["capabilities"]),
                information=Information(**data["information"]),
                authority=Authority(**data["authority"]),
                preference_notes=data.get("preference_notes", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ProfileError(f"malformed profile document: {exc}") from exc

    def with_appended_notes(self, text: str, max_len: int = DEFAULT_MAX_PREFERENCE_NOTES) -> "HumanToolProfile":
        """Accumulate elicited preference text, clamped to the notes limit."""
        if not text:
            return self
        joined = f"{self.preference_notes}\n{text}" if self.preference_notes else text
        return replace(self, preference_notes=joined[:max_len])


class ProfileError(ValueError):
    """Raised for unusable questionnaire input or malformed profile documents."""


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class ValidationResult:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def profile_from_questionnaire(
    answers: list[int],
    domain: Domain | str,
    human_id: str | None = None,
) -> HumanToolProfile:
    """Build a profile from the eight-item questionnaire.

    Each answer is the 1-based index of the chosen option. For every item
    except the delegation question the first option is the strongest
    self-assessment, so index i maps to score 6 - i; the delegation question
    reads low-to-high and maps directly.
    """
    if isinstance(domain, str):
        try:
            domain = Domain(domain)
        except ValueError:
            raise ProfileError(f"unknown domain: {domain!r}") from None
    if len(answers) != QUESTION_COUNT:
        raise ProfileError(f"expected {QUESTION_COUNT} answers, got {len(answers)}")
    for i, answer in enumerate(answers, start=1):
        if not isinstance(answer, int) or isinstance(answer, bool):
            raise ProfileError(f"answer {i} is not an integer: {answer!r}")
        if not SCORE_MIN <= answer <= SCORE_MAX:
            raise ProfileError(f"answer {i} out of range [1,5]: {answer}")

    def score(question: int) -> int:
        answer = answers[question - 1]
        return answer if question in _DIRECT_QUESTIONS else SCORE_MAX + SCORE_MIN - answer

    return HumanToolProfile(
        human_id=human_id or f"human-{uuid.uuid4().hex[:8]}",
        domain=domain,
        capabilities=Capabilities(
            cognitive_creativity=score(1),
            specialized_skill=score(2),
            external_interaction=score(3),
        ),
        information=Information(
            domain_expertise=score(4),
            private_information=score(5),
            preference_clarity=score(6),
        ),
        authority=Authority(
            delegation_level=score(7),
            authorization_level=score(8),
        ),
    )


def answers_from_profile(profile: HumanToolProfile) -> list[int]:
    """Invert the questionnaire mapping: recover the option indices."""
    scores = [
        profile.capabilities.cognitive_creativity,
        profile.capabilities.specialized_skill,
        profile.capabilities.external_interaction,
        profile.information.domain_expertise,
        profile.information.private_information,
        profile.information.preference_clarity,
        profile.authority.delegation_level,
        profile.authority.authorization_level,
    ]
    return [
        s if q in _DIRECT_QUESTIONS else SCORE_MAX + SCORE_MIN - s
        for q, s in enumerate(scores, start=1)
    ]


_SCORE_PATHS = (
    ("capabilities.cognitive_creativity", lambda p: p.capabilities.cognitive_creativity),
    ("capabilities.specialized_skill", lambda p: p.capabilities.specialized_skill),
    ("capabilities.external_interaction", lambda p: p.capabilities.external_interaction),
    ("information.domain_expertise", lambda p: p.information.domain_expertise),
    ("information.private_information", lambda p: p.information.private_information),
    ("information.preference_clarity", lambda p: p.information.preference_clarity),
    ("authority.delegation_level", lambda p: p.authority.delegation_level),
    ("authority.authorization_level", lambda p: p.authority.authorization_level),
)


def validate_profile(
    profile: HumanToolProfile,
    max_preference_notes: int = DEFAULT_MAX_PREFERENCE_NOTES,
) -> ValidationResult:
    """Check profile invariants. Violations are returned as data, not raised."""
    violations: list[Violation] = []
    if not profile.human_id:
        violations.append(Violation("human_id", "must be non-empty"))
    if not isinstance(profile.domain, Domain):
        violations.append(Violation("domain", f"not a declared domain: {profile.domain!r}"))
    for path, get in _SCORE_PATHS:
        value = get(profile)
        if not isinstance(value, int) or isinstance(value, bool) or not SCORE_MIN <= value <= SCORE_MAX:
            violations.append(Violation(path, f"score must be an integer in [1,5], got {value!r}"))
    if len(profile.preference_notes) > max_preference_notes:
        violations.append(
            Violation(
                "preference_notes",
                f"length {len(profile.preference_notes)} exceeds maximum {max_preference_notes}",
            )
        )
    return ValidationResult(tuple(violations))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

# Strength wording shared by the capability and information dimensions.
_LEVEL_WORDS = {5: "very strong", 4: "strong", 3: "moderate", 2: "limited", 1: "minimal"}

_CAPABILITY_GLOSSES = {
    "cognitive_creativity": "creative judgment and original thinking",
    "specialized_skill": "hands-on skill in this domain",
    "external_interaction": "ability to act on and gather from the outside world",
}

_INFORMATION_GLOSSES = {
    "domain_expertise": "domain knowledge",
    "private_information": "access to private or exclusive information",
    "preference_clarity": "clarity about personal preferences and constraints",
}

_DELEGATION_GLOSSES = {
    1: "keeps every decision in their own hands",
    2: "keeps most decisions, delegating only routine steps",
    3: "shares decisions with the AI case by case",
    4: "delegates most decisions, keeping only the important calls",
    5: "delegates most decisions to the AI outright",
}

_AUTHORIZATION_GLOSSES = {
    1: "authorizes almost no personal information for sharing",
    2: "authorizes only strictly necessary information",
    3: "authorizes basic information, cautious beyond that",
    4: "authorizes most useful information, holding back sensitive details",
    5: "authorizes full information sharing",
}

LOW_AUTHORIZATION_NOTICE = (
    "NOTE: this human has authorized almost no information sharing; "
    "request only what is strictly necessary."
)

TOOL_NAME_PREFIX = "human"

FIXED_ANNOTATIONS = {
    "nondeterministic": True,
    "may_refuse": True,
    "may_negotiate": True,
    "latency": "variable",
}


@dataclass(frozen=True)
class ToolDescriptor:
    name: str
    description: str
    input_schema: dict[str, Any]
    annotations: dict[str, Any] = field(default_factory=lambda: dict(FIXED_ANNOTATIONS))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "description": self.description,
            "input_schema": self.input_schema,
            "annotations": dict(self.annotations),
        }


def validate_descriptor(descriptor: ToolDescriptor) -> ValidationResult:
    violations: list[Violation] = []
    if not descriptor.name:
        violations.append(Violation("name", "must be non-empty"))
    for key, expected in FIXED_ANNOTATIONS.items():
        if key not in descriptor.annotations:
            violations.append(Violation(f"annotations.{key}", "missing required annotation"))
        elif descriptor.annotations[key] != expected:
            violations.append(
                Violation(f"annotations.{key}", f"must be {expected!r}, got {descriptor.annotations[key]!r}")
            )
    return ValidationResult(tuple(violations))


def _require_valid(profile: HumanToolProfile) -> None:
    result = validate_profile(profile)
    if not result.ok:
        raise ProfileError("invalid profile: " + "; ".join(str(v) for v in result.violations))


def render_tool_descriptor(profile: HumanToolProfile) -> ToolDescriptor:
    """Render the profile as an invocable tool descriptor.

    Deterministic: equal profiles produce byte-identical descriptors.
    """
    _require_valid(profile)
    c, i, a = profile.capabilities, profile.information, profile.authority
    lines = [
        f"Human collaborator for {profile.domain.value.replace('_', ' ')} tasks.",
        (
            f"Capabilities: creativity {c.cognitive_creativity}/5, "
            f"skill {c.specialized_skill}/5, external interaction {c.external_interaction}/5."
        ),
        (
            f"Information: expertise {i.domain_expertise}/5, "
            f"private information {i.private_information}/5, "
            f"preference clarity {i.preference_clarity}/5."
        ),
        (
            f"Authority: delegation {a.delegation_level}/5, "
            f"authorization {a.authorization_level}/5."
        ),
    ]
    if a.authorization_level == SCORE_MIN:
        lines.append(LOW_AUTHORIZATION_NOTICE)
    input_schema = {
        "type": "object",
        "properties": {
            "behavior": {
                "type": "string",
                "description": "interaction behavior for this call",
            },
            "prompt_text": {
                "type": "string",
                "description": "message shown to the human",
            },
            "response_kind": {
                "type": "string",
                "enum": ["free_text", "approval", "choice"],
                "description": "shape of the expected reply",
            },
        },
        "required": ["behavior", "prompt_text", "response_kind"],
    }
    return ToolDescriptor(
        name=f"{TOOL_NAME_PREFIX}:{profile.human_id}",
        description=" ".join(lines),
        input_schema=input_schema,
    )


def render_profile_prompt(profile: HumanToolProfile) -> str:
    """Render the profile as the in-context text block handed to the planner."""
    _require_valid(profile)
    c, i, a = profile.capabilities, profile.information, profile.authority
    lines = [
        f"Collaborator profile ({profile.domain.value.replace('_', ' ')}):",
        "",
        "Capabilities:",
    ]
    for name, value in (
        ("cognitive_creativity", c.cognitive_creativity),
        ("specialized_skill", c.specialized_skill),
        ("external_interaction", c.external_interaction),
    ):
        lines.append(f"- {name}: {value}/5 ({_LEVEL_WORDS[value]} {_CAPABILITY_GLOSSES[name]})")
    lines.append("")
    lines.append("Information:")
    for name, value in (
        ("domain_expertise", i.domain_expertise),
        ("private_information", i.private_information),
        ("preference_clarity", i.preference_clarity),
    ):
        lines.append(f"- {name}: {value}/5 ({_LEVEL_WORDS[value]} {_INFORMATION_GLOSSES[name]})")
    lines.append("")
    lines.append("Authority:")
    lines.append(f"- delegation_level: {a.delegation_level}/5 ({_DELEGATION_GLOSSES[a.delegation_level]})")
    lines.append(
        f"- authorization_level: {a.authorization_level}/5 ({_AUTHORIZATION_GLOSSES[a.authorization_level]})"
    )
    if profile.preference_notes:
        lines.append("")
        lines.append("Stated preferences and constraints:")
        lines.append(profile.preference_notes)
    return "\n".join(lines) + "\n"
