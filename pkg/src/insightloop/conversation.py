"""Domain types and the phase machine driving one analytics conversation.

A run walks bootstrap -> plan -> execute/analyze -> feedback -> finalize.
Every planner instruction is parsed into a :class:`Directive` routed to
exactly one of the Coder, the Grapher, or finalization.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import IllegalTransition, UnparseableDirective

DONE_TAG = "</done>"

#: Grammar the planner is instructed to follow, one directive per message.
DIRECTIVE_GRAMMAR = (
    "Reply with exactly one directive per message, on its own line:\n"
    "  CODER: <instruction for Python analysis code>\n"
    "  GRAPHER: <question about a generated figure> [fig:<artifact-name>]\n"
    f"  FINAL: <final answer to the user> {DONE_TAG}\n"
    f"Use FINAL with the literal {DONE_TAG} tag only when the analysis is complete."
)

_DIRECTIVE_RE = re.compile(r"^\s*(CODER|GRAPHER|FINAL)\s*:", re.MULTILINE)
_FIG_REF_RE = re.compile(r"\[fig:([A-Za-z0-9_.\-]+)\]")


class Mode(str, Enum):
    MULTI_STEP = "multi_step"
    SINGLE_STEP = "single_step"


class Phase(str, Enum):
    INIT = "Init"
    BOOTSTRAPPING = "Bootstrapping"
    PLANNING = "Planning"
    EXECUTING_CODE = "ExecutingCode"
    ANALYZING_GRAPH = "AnalyzingGraph"
    FINALIZED = "Finalized"
    BUDGET_EXHAUSTED = "BudgetExhausted"


TERMINAL_PHASES = {Phase.FINALIZED, Phase.BUDGET_EXHAUSTED}


class Actor(str, Enum):
    USER = "User"
    PLANNER = "Planner"
    CODER = "Coder"
    GRAPHER = "Grapher"
    EXECUTOR = "Executor"
    SYSTEM = "System"


class Target(str, Enum):
    CODER = "Coder"
    GRAPHER = "Grapher"
    FINAL = "Final"


class Event(str, Enum):
    DIRECTIVE_PARSED = "DirectiveParsed"
    EXECUTION_RETURNED = "ExecutionReturned"
    INSIGHT_RETURNED = "InsightReturned"
    TERMINATION_SEEN = "TerminationSeen"
    BUDGET_HIT = "BudgetHit"


@dataclass(frozen=True)
class AnalyticsQuery:
    """One user request: tabular file(s) plus a natural-language question."""

    dataset_paths: list[str]
    question: str
    mode: Mode = Mode.MULTI_STEP

    def __post_init__(self):
        if not self.question.strip():
            raise ValueError("question must be non-empty")


@dataclass(frozen=True)
class Directive:
    """A parsed planner instruction routed to Coder, Grapher, or finalization."""

    target: Target
    instruction: str
    artifact_refs: tuple[str, ...] = ()
    terminal: bool = False

    def __post_init__(self):
        if self.target is Target.GRAPHER and not self.artifact_refs:
            raise ValueError("grapher directive requires artifact refs")
        if self.terminal and self.target is not Target.FINAL:
            raise ValueError("only Final directives may be terminal")


@dataclass(frozen=True)
class Turn:
    """One transcript entry. Timestamp is a logical sequence number so replayed
    runs serialize byte-identically."""

    actor: Actor
    content: str
    attachments: tuple[str, ...] = ()
    timestamp: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "actor": self.actor.value,
                "content": self.content,
                "attachments": list(self.attachments),
                "timestamp": self.timestamp,
            },
            ensure_ascii=False,
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "Turn":
        d = json.loads(line)
        return cls(
            actor=Actor(d["actor"]),
            content=d["content"],
            attachments=tuple(d["attachments"]),
            timestamp=d["timestamp"],
        )


@dataclass
class ConversationState:
    """Phase machine, transcript, artifacts, and step budget for one query."""

    step_budget: int = 15
    phase: Phase = Phase.INIT
    transcript: list[Turn] = field(default_factory=list)
    step_count: int = 0
    artifacts: dict[str, str] = field(default_factory=dict)
    final_answer: str | None = None

    def __post_init__(self):
        if self.step_budget < 1:
            raise ValueError("step_budget must be positive")

    def append_turn(self, actor: Actor, content: str, attachments=()) -> Turn:
        for name in attachments:
            if name not in self.artifacts:
                raise ValueError(f"attachment references unknown artifact {name!r}")
        turn = Turn(actor, content, tuple(attachments), timestamp=len(self.transcript))
        self.transcript.append(turn)
        return turn

    def register_artifact(self, name: str, path: str) -> None:
        if name in self.artifacts and self.artifacts[name] != path:
            raise ValueError(f"artifact name {name!r} already registered")
        self.artifacts[name] = path

    def resolve_artifact(self, ref: str) -> str | None:
        """Resolve a directive's [fig:...] ref to a path, by name or by stem."""
        if ref in self.artifacts:
            return self.artifacts[ref]
        for name, path in self.artifacts.items():
            if Path(name).stem == ref:
                return path
        return None

    def write_transcript(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for turn in self.transcript:
                fh.write(turn.to_json() + "\n")


def load_transcript(path: str | Path) -> list[Turn]:
    with open(path, encoding="utf-8") as fh:
        return [Turn.from_json(line) for line in fh if line.strip()]


def detect_termination(text: str) -> bool:
    """True iff the literal termination tag occurs in the text."""
    return DONE_TAG in text


def split_directive_blocks(planner_text: str) -> list[tuple[str, str]]:
    """All (keyword, body) directive blocks in message order.

    A block's body runs from its keyword to the next directive keyword or the
    end of the message. Only the first block is honored by the engine; the
    count lets the engine log discarded extras.
    """
    matches = list(_DIRECTIVE_RE.finditer(planner_text))
    blocks = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(planner_text)
        blocks.append((m.group(1), planner_text[m.end():end]))
    return blocks


def _clean_instruction(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def parse_directive(planner_text: str) -> Directive:
    """Parse the first well-formed directive out of a planner message."""
    if not planner_text.strip():
        raise UnparseableDirective("empty planner message")
    blocks = split_directive_blocks(planner_text)
    if not blocks:
        raise UnparseableDirective(
            "no CODER:/GRAPHER:/FINAL: directive keyword found"
        )
    keyword, body = blocks[0]
    if keyword == "CODER":
        instruction = _clean_instruction(body)
        if not instruction:
            raise UnparseableDirective("CODER directive with empty instruction")
        return Directive(Target.CODER, instruction)
    if keyword == "GRAPHER":
        refs = tuple(_FIG_REF_RE.findall(body))
        if not refs:
            raise UnparseableDirective(
                "GRAPHER directive must reference a figure via [fig:<name>]"
            )
        instruction = _clean_instruction(_FIG_REF_RE.sub("", body))
        return Directive(Target.GRAPHER, instruction, artifact_refs=refs)
    # FINAL: terminal only when the literal tag is present
    terminal = DONE_TAG in planner_text
    instruction = _clean_instruction(body.replace(DONE_TAG, ""))
    return Directive(Target.FINAL, instruction, terminal=terminal)


def format_directive(directive: Directive) -> str:
    """Render a directive in the canonical grammar (inverse of parse_directive)."""
    if directive.target is Target.CODER:
        return f"CODER: {directive.instruction}"
    if directive.target is Target.GRAPHER:
        refs = " ".join(f"[fig:{r}]" for r in directive.artifact_refs)
        body = f"{directive.instruction} {refs}".strip()
        return f"GRAPHER: {body}"
    tag = f" {DONE_TAG}" if directive.terminal else ""
    return f"FINAL: {directive.instruction}{tag}"


def bootstrap_directive(query: AnalyticsQuery) -> Directive:
    """The fixed first Coder directive: load each dataset, show schema and head."""
    if not query.dataset_paths:
        raise ValueError("bootstrap requires at least one dataset path")
    names = ", ".join(Path(p).name for p in query.dataset_paths)
    instruction = (
        f"Load the dataset file(s) {names} with pandas. For each one, print "
        "the column names and dtypes (df.info()) and the first five rows "
        "(df.head())."
    )
    return Directive(Target.CODER, instruction)


# Transition table: (phase, event) -> next phase. DirectiveParsed from Planning
# picks ExecutingCode/AnalyzingGraph off the directive target.
_TRANSITIONS: dict[tuple[Phase, Event], Phase] = {
    (Phase.INIT, Event.DIRECTIVE_PARSED): Phase.BOOTSTRAPPING,
    (Phase.INIT, Event.EXECUTION_RETURNED): Phase.PLANNING,  # engine-made preview
    (Phase.BOOTSTRAPPING, Event.EXECUTION_RETURNED): Phase.PLANNING,
    (Phase.EXECUTING_CODE, Event.EXECUTION_RETURNED): Phase.PLANNING,
    (Phase.ANALYZING_GRAPH, Event.INSIGHT_RETURNED): Phase.PLANNING,
    (Phase.PLANNING, Event.TERMINATION_SEEN): Phase.FINALIZED,
}


def advance(
    state: ConversationState,
    event: Event,
    directive: Directive | None = None,
) -> ConversationState:
    """Apply one event to the phase machine; exactly one phase transition."""
    if state.phase in TERMINAL_PHASES:
        raise IllegalTransition(f"{state.phase.value} is terminal")

    if event is Event.BUDGET_HIT:
        state.phase = Phase.BUDGET_EXHAUSTED
        return state

    if event is Event.DIRECTIVE_PARSED and state.phase is Phase.PLANNING:
        if directive is None or directive.target is Target.FINAL:
            raise IllegalTransition(
                "DirectiveParsed in Planning requires a Coder or Grapher directive"
            )
        if state.step_count >= state.step_budget:
            raise IllegalTransition("step budget already exhausted")
        state.step_count += 1
        state.phase = (
            Phase.EXECUTING_CODE
            if directive.target is Target.CODER
            else Phase.ANALYZING_GRAPH
        )
        return state

    nxt = _TRANSITIONS.get((state.phase, event))
    if nxt is None:
        raise IllegalTransition(f"{event.value} not valid in phase {state.phase.value}")
    if event is Event.DIRECTIVE_PARSED:
        if state.step_count >= state.step_budget:
            raise IllegalTransition("step budget already exhausted")
        state.step_count += 1
    state.phase = nxt
    return state
