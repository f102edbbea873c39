"""Prompt assembly and output parsing for the Planner, Coder, and Grapher roles.

Prompt templates are data: UTF-8 files with ``{{slot}}`` placeholders under
``templates/``, so prompt iteration needs no code change.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources

from .backend import ChatMessage, ImagePart, TextPart
from .conversation import (
    DIRECTIVE_GRAMMAR,
    Actor,
    AnalyticsQuery,
    ConversationState,
    Directive,
    Mode,
    Target,
)
from .errors import (
    EmptyCode,
    MissingArtifact,
    MissingBootstrap,
    RepairBudgetExceeded,
    UndecodableImage,
)

MAX_REPAIR_ATTEMPTS = 2
PROMPT_OUTPUT_LIMIT = 8 * 1024  # stdout/stderr fed back to the planner

_SLOT_RE = re.compile(r"\{\{(\w+)\}\}")
_FENCE_RE = re.compile(r"```[^\n`]*\n?(.*?)```", re.DOTALL)
_QA_RE = re.compile(r"^Q:\s*(.+?)\s*\nA:\s*(.+?)\s*(?=\nQ:|\Z)", re.MULTILINE | re.DOTALL)

_IMAGE_MAGIC = [
    (b"\x89PNG\r\n\x1a\n", "image/png"),
    (b"\xff\xd8\xff", "image/jpeg"),
    (b"GIF87a", "image/gif"),
    (b"GIF89a", "image/gif"),
]


@dataclass(frozen=True)
class PromptBundle:
    system: str
    messages: tuple[ChatMessage, ...]
    model_role: str  # planner | coder | grapher

    def __post_init__(self):
        if not self.system.strip():
            raise ValueError("system prompt must be non-empty")
        if self.model_role == "grapher" and not any(
            m.has_image() for m in self.messages
        ):
            raise ValueError("grapher bundles must carry an image part")

    def chat_messages(self) -> tuple[ChatMessage, ...]:
        return (ChatMessage.text("system", self.system),) + self.messages


@dataclass(frozen=True)
class Insight:
    """Structured Q&A pairs extracted from a Grapher reply."""

    qa_pairs: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.qa_pairs:
            raise ValueError("insight needs at least one Q&A pair")
        for q, a in self.qa_pairs:
            if not q.strip() or not a.strip():
                raise ValueError("questions and answers must be non-empty")

    def render(self) -> str:
        return "\n".join(f"Q: {q}\nA: {a}" for q, a in self.qa_pairs)


def render_template(name: str, **slots: str) -> str:
    text = (
        resources.files("insightloop").joinpath("templates", f"{name}.txt").read_text("utf-8")
    )

    used = set()

    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in slots:
            raise KeyError(f"template {name!r} uses unknown slot {key!r}")
        used.add(key)
        return slots[key]

    rendered = _SLOT_RE.sub(sub, text)
    unused = set(slots) - used
    if unused:
        raise KeyError(f"template {name!r} has no slot(s) {sorted(unused)}")
    return rendered


def truncate_for_prompt(text: str, limit: int = PROMPT_OUTPUT_LIMIT) -> str:
    if len(text) <= limit:
        return text
    return text[:limit] + "\n[truncated]"


def _bootstrap_preview(state: ConversationState) -> str:
    for turn in state.transcript:
        if turn.actor is Actor.EXECUTOR:
            return turn.content
    raise MissingBootstrap("no execution result in transcript yet")


def _render_history(state: ConversationState) -> str:
    lines = []
    for turn in state.transcript:
        if turn.actor is Actor.USER:
            continue
        lines.append(f"[{turn.actor.value}] {turn.content}")
    return "\n".join(lines)


def assemble_planner_context(
    query: AnalyticsQuery, state: ConversationState
) -> PromptBundle:
    """Planner bundle: question, dataset preview, full history, grammar."""
    preview = _bootstrap_preview(state)
    template = (
        "planner_system_single_step"
        if query.mode is Mode.SINGLE_STEP
        else "planner_system"
    )
    system = render_template(template, grammar=DIRECTIVE_GRAMMAR)
    user = render_template(
        "planner_user",
        question=query.question,
        schema_preview=preview,
        history=_render_history(state),
        grammar=DIRECTIVE_GRAMMAR,
    )
    return PromptBundle(system, (ChatMessage.text("user", user),), "planner")


@dataclass(frozen=True)
class CodeExtraction:
    code: str
    fenced: bool  # False when no fenced block existed and the raw text was used


def extract_code(coder_text: str) -> CodeExtraction:
    """Concatenate all fenced code blocks; fall back to the verbatim message."""
    if not coder_text.strip():
        raise ValueError("coder message is empty")
    blocks = _FENCE_RE.findall(coder_text)
    if not blocks:
        return CodeExtraction(coder_text, fenced=False)
    parts = []
    for block in blocks:
        body = block.strip("\n")
        if body:
            parts.append(body if body.endswith("\n") else body + "\n")
    if not parts:
        raise EmptyCode("all fenced code blocks are empty")
    return CodeExtraction("".join(parts), fenced=True)


def assemble_coder_prompt(directive: Directive, schema_preview: str) -> PromptBundle:
    system = render_template("coder_system")
    user = render_template(
        "coder_user", instruction=directive.instruction, schema_preview=schema_preview
    )
    return PromptBundle(system, (ChatMessage.text("user", user),), "coder")


def sniff_image(data: bytes) -> str:
    """Return the media type for known image magic bytes."""
    for magic, mime in _IMAGE_MAGIC:
        if data.startswith(magic):
            return mime
    if len(data) >= 12 and data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return "image/webp"
    raise UndecodableImage(f"unrecognized image data ({len(data)} bytes)")


def assemble_grapher_prompt(
    directive: Directive, artifact_bytes: bytes | None
) -> PromptBundle:
    """Grapher bundle: instruction plus the figure as a vision content part."""
    if directive.target is not Target.GRAPHER:
        raise ValueError("directive is not addressed to the Grapher")
    if artifact_bytes is None:
        raise MissingArtifact(
            f"artifact(s) {list(directive.artifact_refs)} not found"
        )
    media_type = sniff_image(artifact_bytes)
    system = render_template("grapher_system")
    user = ChatMessage(
        "user",
        (TextPart(directive.instruction), ImagePart(media_type, artifact_bytes)),
    )
    return PromptBundle(system, (user,), "grapher")


def parse_insights(grapher_text: str, fallback_question: str = "") -> Insight:
    """Extract Q:/A: pairs; total by wrapping free prose as one pair."""
    pairs = [(q.strip(), a.strip()) for q, a in _QA_RE.findall(grapher_text)]
    pairs = [(q, a) for q, a in pairs if q and a]
    if pairs:
        return Insight(tuple(pairs))
    question = fallback_question.strip() or "What does the figure show?"
    answer = grapher_text.strip() or "(no analysis returned)"
    return Insight(((question, answer),))


def repair_coder_step(
    code: str,
    error_output: str,
    attempt: int,
    instruction: str = "",
    max_repair_attempts: int = MAX_REPAIR_ATTEMPTS,
) -> PromptBundle:
    """Bundle asking the Coder to fix its own failing code (bounded attempts)."""
    if attempt > max_repair_attempts:
        raise RepairBudgetExceeded(
            f"attempt {attempt} exceeds max_repair_attempts={max_repair_attempts}"
        )
    system = render_template("coder_system")
    user = render_template(
        "repair",
        instruction=instruction,
        code=code,
        error=truncate_for_prompt(error_output),
    )
    return PromptBundle(system, (ChatMessage.text("user", user),), "coder")
