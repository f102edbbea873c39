"""The orchestration loop: bootstrap, plan, execute/analyze, feedback, finalize.

One engine run drives a single query end to end: it stages the dataset files
into a fresh execution session, has the Coder load and preview them, then
alternates planner directives with Coder executions and Grapher analyses
until the planner finalizes or the step budget runs out.
"""

from __future__ import annotations

import io
import shutil
from dataclasses import dataclass
from pathlib import Path

from . import agents
from .backend import Backend, CompletionRequest
from .conversation import (
    DIRECTIVE_GRAMMAR,
    DONE_TAG,
    Actor,
    AnalyticsQuery,
    ConversationState,
    Directive,
    Event,
    Mode,
    Phase,
    Target,
    advance,
    bootstrap_directive,
    format_directive,
    parse_directive,
    split_directive_blocks,
)
from .errors import EmptyCode, InsightLoopError, UnparseableDirective
from .executor import ExecStatus, ExecutionResult, Executor, SessionHandle


@dataclass
class EngineSettings:
    text_model: str = "text-model"
    vision_model: str = "vision-model"
    temperature: float = 0.0
    max_tokens: int = 2048
    step_budget: int = 15
    timeout_s: float = 60.0
    max_repair_attempts: int = agents.MAX_REPAIR_ATTEMPTS


@dataclass
class RunResult:
    state: ConversationState
    final_answer: str | None
    workdir: Path | None

    @property
    def finalized(self) -> bool:
        return self.state.phase is Phase.FINALIZED


def render_execution_result(result: ExecutionResult) -> str:
    """Human/LLM-readable execution summary, bounded for prompt safety."""
    parts = [f"status: {result.status.value}"]
    if result.stdout:
        parts.append("stdout:\n" + agents.truncate_for_prompt(result.stdout))
    if result.stderr:
        parts.append("stderr:\n" + agents.truncate_for_prompt(result.stderr))
    if result.artifacts:
        listing = ", ".join(
            f"{a.name} ({a.media_type}, {a.byte_length} bytes)" for a in result.artifacts
        )
        parts.append(f"new artifacts: {listing}")
    return "\n".join(parts)


def dataset_preview(paths: list[str], rows: int = 5) -> str:
    """Engine-side schema + head preview (used in single-step mode, where no
    Coder call is allowed)."""
    import pandas as pd

    chunks = []
    for p in paths:
        df = pd.read_csv(p)
        buf = io.StringIO()
        df.info(buf=buf)
        chunks.append(f"== {Path(p).name} ==\n{buf.getvalue()}\n{df.head(rows)}")
    return "\n\n".join(chunks)


class Engine:
    def __init__(
        self,
        backend: Backend,
        executor: Executor | None,
        settings: EngineSettings | None = None,
    ):
        self.backend = backend
        self.executor = executor
        self.settings = settings or EngineSettings()

    # --- LLM plumbing -------------------------------------------------------

    def _call(self, bundle: agents.PromptBundle) -> str:
        model = (
            self.settings.vision_model
            if bundle.model_role == "grapher"
            else self.settings.text_model
        )
        request = CompletionRequest(
            model=model,
            messages=bundle.chat_messages(),
            temperature=self.settings.temperature,
            max_tokens=self.settings.max_tokens,
        )
        if bundle.model_role == "grapher":
            return self.backend.complete_vision(request)
        return self.backend.complete(request)

    # --- run ----------------------------------------------------------------

    def run(self, query: AnalyticsQuery) -> RunResult:
        if not query.dataset_paths:
            raise ValueError("a run requires at least one dataset path")
        if query.mode is Mode.SINGLE_STEP:
            return self._run_single_step(query)
        return self._run_multi_step(query)

    def _run_single_step(self, query: AnalyticsQuery) -> RunResult:
        state = ConversationState(step_budget=1)
        state.append_turn(Actor.USER, query.question)
        preview = dataset_preview(query.dataset_paths)
        state.append_turn(Actor.EXECUTOR, preview)
        advance(state, Event.EXECUTION_RETURNED)

        directive = self._planner_step(query, state, require_final=True)
        if directive is None:
            return RunResult(state, None, None)
        advance(state, Event.TERMINATION_SEEN)
        state.final_answer = directive.instruction
        return RunResult(state, state.final_answer, None)

    def _run_multi_step(self, query: AnalyticsQuery) -> RunResult:
        assert self.executor is not None, "multi-step runs require an executor"
        state = ConversationState(step_budget=self.settings.step_budget)
        state.append_turn(Actor.USER, query.question)
        handle = self.executor.start_session()
        try:
            self._stage_datasets(query, handle)
            self._bootstrap(query, state, handle)
            while state.phase not in (Phase.FINALIZED, Phase.BUDGET_EXHAUSTED):
                if state.step_count >= state.step_budget:
                    advance(state, Event.BUDGET_HIT)
                    state.append_turn(Actor.SYSTEM, "step budget exhausted")
                    break
                directive = self._planner_step(query, state)
                if directive is None:
                    break  # aborted inside _planner_step
                if directive.terminal:
                    advance(state, Event.TERMINATION_SEEN)
                    state.final_answer = directive.instruction
                    break
                advance(state, Event.DIRECTIVE_PARSED, directive)
                if directive.target is Target.CODER:
                    self._coder_step(query, state, handle, directive)
                else:
                    self._grapher_step(state, handle, directive)
        finally:
            self.executor.shutdown(handle)
        return RunResult(state, state.final_answer, handle.workdir)

    # --- workflow steps -----------------------------------------------------

    @staticmethod
    def _stage_datasets(query: AnalyticsQuery, handle: SessionHandle) -> None:
        seen = set()
        for p in query.dataset_paths:
            name = Path(p).name
            if name in seen:
                raise ValueError(f"duplicate dataset basename {name!r}")
            seen.add(name)
            shutil.copy(p, handle.workdir / name)

    def _bootstrap(
        self, query: AnalyticsQuery, state: ConversationState, handle: SessionHandle
    ) -> None:
        directive = bootstrap_directive(query)
        advance(state, Event.DIRECTIVE_PARSED, directive)
        state.append_turn(Actor.SYSTEM, format_directive(directive))
        self._coder_execute(state, handle, directive, schema_preview="(first load)")
        advance(state, Event.EXECUTION_RETURNED)

    def _schema_preview(self, state: ConversationState) -> str:
        for turn in state.transcript:
            if turn.actor is Actor.EXECUTOR:
                return turn.content
        return "(no preview available)"

    def _planner_step(
        self,
        query: AnalyticsQuery,
        state: ConversationState,
        require_final: bool = False,
    ) -> Directive | None:
        """One planner turn with at most one corrective re-prompt.

        Returns None when the planner failed twice; the state is then moved to
        BudgetExhausted (incomplete run).
        """
        for attempt in range(2):
            bundle = agents.assemble_planner_context(query, state)
            text = self._call(bundle)
            state.append_turn(Actor.PLANNER, text)
            problem = None
            try:
                directive = parse_directive(text)
            except UnparseableDirective as exc:
                problem = str(exc)
            else:
                if directive.target is Target.FINAL and not directive.terminal:
                    problem = f"FINAL directive must end with the literal {DONE_TAG} tag"
                elif require_final and not directive.terminal:
                    problem = "only a FINAL: ... </done> reply is allowed in this mode"
            if problem is None:
                extras = len(split_directive_blocks(text)) - 1
                if extras > 0:
                    state.append_turn(
                        Actor.SYSTEM,
                        f"discarded {extras} extra directive(s); only the first is honored",
                    )
                return directive
            if attempt == 0:
                state.append_turn(
                    Actor.SYSTEM,
                    "Your reply could not be used: "
                    + problem
                    + "\nFollow the grammar exactly:\n"
                    + DIRECTIVE_GRAMMAR,
                )
        state.append_turn(Actor.SYSTEM, "planner output unusable twice; aborting run")
        advance(state, Event.BUDGET_HIT)
        return None

    def _coder_execute(
        self,
        state: ConversationState,
        handle: SessionHandle,
        directive: Directive,
        schema_preview: str,
    ) -> ExecutionResult:
        """Coder call + execution with the bounded auto-repair loop."""
        bundle = agents.assemble_coder_prompt(directive, schema_preview)
        result = None
        code = ""
        for attempt in range(self.settings.max_repair_attempts + 1):
            coder_text = self._call(bundle)
            state.append_turn(Actor.CODER, coder_text)
            try:
                code = agents.extract_code(coder_text).code
            except EmptyCode as exc:
                result = ExecutionResult(ExecStatus.ERROR, "", str(exc))
            else:
                result = self.executor.execute(handle, code, self.settings.timeout_s)
            if result.status is ExecStatus.OK:
                break
            if attempt == self.settings.max_repair_attempts:
                break
            bundle = agents.repair_coder_step(
                code,
                result.stderr or result.status.value,
                attempt=attempt + 1,
                instruction=directive.instruction,
                max_repair_attempts=self.settings.max_repair_attempts,
            )
        for info in result.artifacts:
            state.register_artifact(info.name, str(handle.artifacts_dir / info.name))
        state.append_turn(
            Actor.EXECUTOR,
            render_execution_result(result),
            attachments=[a.name for a in result.artifacts],
        )
        return result

    def _coder_step(
        self,
        query: AnalyticsQuery,
        state: ConversationState,
        handle: SessionHandle,
        directive: Directive,
    ) -> None:
        self._coder_execute(state, handle, directive, self._schema_preview(state))
        advance(state, Event.EXECUTION_RETURNED)

    def _grapher_step(
        self, state: ConversationState, handle: SessionHandle, directive: Directive
    ) -> None:
        resolved: list[tuple[str, str]] = []  # (registered name, path)
        for ref in directive.artifact_refs:
            path = state.resolve_artifact(ref)
            if path is not None:
                resolved.append((ref if ref in state.artifacts else Path(path).name, path))
        try:
            artifact_bytes = Path(resolved[0][1]).read_bytes() if resolved else None
            bundle = agents.assemble_grapher_prompt(directive, artifact_bytes)
        except InsightLoopError as exc:
            state.append_turn(Actor.SYSTEM, f"grapher step failed: {exc}")
            advance(state, Event.INSIGHT_RETURNED)
            return
        text = self._call(bundle)
        insight = agents.parse_insights(text, fallback_question=directive.instruction)
        state.append_turn(
            Actor.GRAPHER, insight.render(), attachments=[name for name, _ in resolved[:1]]
        )
        advance(state, Event.INSIGHT_RETURNED)
