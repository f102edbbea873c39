"""insightloop: planner/coder/grapher orchestration for tabular analytics."""

__version__ = "0.1.0"

from .conversation import AnalyticsQuery, ConversationState, Directive, Mode, Phase  # noqa: F401
from .engine import Engine, EngineSettings, RunResult  # noqa: F401
