"""Exception hierarchy shared across the engine."""


class InsightLoopError(Exception):
    """Base class for all engine errors."""


# --- conversation / parsing -------------------------------------------------

class UnparseableDirective(InsightLoopError):
    """Planner output contained no recognized directive keyword."""


class IllegalTransition(InsightLoopError):
    """Conversation event is not valid in the current phase."""


# --- agents -----------------------------------------------------------------

class MissingBootstrap(InsightLoopError):
    """Planner context requested before the bootstrap execution result exists."""


class EmptyCode(InsightLoopError):
    """Coder message contained fenced blocks, but all of them were empty."""


class MissingArtifact(InsightLoopError):
    """Directive references an artifact the conversation does not have."""


class UndecodableImage(InsightLoopError):
    """Artifact bytes are not a decodable image."""


class RepairBudgetExceeded(InsightLoopError):
    """Coder auto-repair attempts exhausted; escalate to the Planner."""


# --- executor ---------------------------------------------------------------

class ExecutorError(InsightLoopError):
    """Base class for execution-session errors."""


class KernelStartFailure(ExecutorError):
    pass


class HandshakeTimeout(ExecutorError):
    pass


class ProtocolViolation(ExecutorError):
    pass


class SessionDead(ExecutorError):
    pass


# --- llm backend ------------------------------------------------------------

class BackendError(InsightLoopError):
    """Base class for chat-completion backend errors."""


class EndpointUnreachable(BackendError):
    pass


class HttpStatusError(BackendError):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(f"HTTP {code}: {message}" if message else f"HTTP {code}")


class MalformedResponse(BackendError):
    pass


class NoImagePart(BackendError):
    pass


class FixtureMiss(BackendError):
    """Replay fixture has no entry for the request (digest named in message)."""


class FixtureWriteError(BackendError):
    pass


# --- metrics ----------------------------------------------------------------

class LengthMismatch(InsightLoopError):
    pass


class EmptyCorpus(InsightLoopError):
    pass


# --- benchmark --------------------------------------------------------------

class DatasetError(InsightLoopError):
    """Base class for dataset-loading errors; aborts a benchmark run."""


class MissingFile(DatasetError):
    pass


class MalformedRow(DatasetError):
    def __init__(self, line_number: int, message: str):
        self.line_number = line_number
        super().__init__(f"line {line_number}: {message}")


class MalformedEntry(DatasetError):
    pass


# --- config -----------------------------------------------------------------

class ConfigError(InsightLoopError):
    pass
