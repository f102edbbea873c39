"""Engine configuration: a small TOML file plus one env var for the secret.

Unknown keys are rejected so typos fail loudly. The bearer token is never read
from the file, only from ``INSIGHTLOOP_API_TOKEN``.
"""

from __future__ import annotations

import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path

from .backend import Backend, OpenAICompatibleBackend, RecordingBackend, ReplayBackend
from .conversation import Mode
from .engine import Engine, EngineSettings
from .errors import ConfigError
from .executor import Executor, ExecutorConfig, create_executor

TOKEN_ENV_VAR = "INSIGHTLOOP_API_TOKEN"

_TOP_KEYS = {"step_budget", "mode", "transcript_out", "backend", "executor"}
_BACKEND_KEYS = {
    "text_endpoint_url",
    "vision_endpoint_url",
    "text_model",
    "vision_model",
    "temperature",
    "max_tokens",
}
_EXECUTOR_KEYS = {
    "kernel_cmd",
    "workdir_root",
    "timeout_s",
    "ephemeral_workdir",
    "stub_fixture",
}


@dataclass
class BackendSettings:
    text_endpoint_url: str = ""
    vision_endpoint_url: str = ""
    text_model: str = "text-model"
    vision_model: str = "vision-model"
    temperature: float = 0.0
    max_tokens: int = 2048


@dataclass
class EngineConfig:
    backend: BackendSettings = field(default_factory=BackendSettings)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    step_budget: int = 15
    mode: Mode = Mode.MULTI_STEP
    transcript_out: str | None = None


def _reject_unknown(d: dict, allowed: set[str], where: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def load_config(path: str | Path) -> EngineConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    _reject_unknown(raw, _TOP_KEYS, str(path))

    cfg = EngineConfig()
    if "step_budget" in raw:
        cfg.step_budget = int(raw["step_budget"])
        if cfg.step_budget < 1:
            raise ConfigError("step_budget must be positive")
    if "mode" in raw:
        try:
            cfg.mode = Mode(raw["mode"])
        except ValueError:
            raise ConfigError(f"mode must be one of {[m.value for m in Mode]}")
    if "transcript_out" in raw:
        cfg.transcript_out = str(raw["transcript_out"])

    b = raw.get("backend", {})
    _reject_unknown(b, _BACKEND_KEYS, "[backend]")
    for key, value in b.items():
        setattr(cfg.backend, key, value)

    e = raw.get("executor", {})
    _reject_unknown(e, _EXECUTOR_KEYS, "[executor]")
    if "kernel_cmd" in e:
        cmd = e["kernel_cmd"]
        cfg.executor.kernel_cmd = cmd.split() if isinstance(cmd, str) else [str(c) for c in cmd]
    if "workdir_root" in e:
        cfg.executor.workdir_root = str(e["workdir_root"])
    if "timeout_s" in e:
        cfg.executor.timeout_s = float(e["timeout_s"])
    if "ephemeral_workdir" in e:
        cfg.executor.ephemeral_workdir = bool(e["ephemeral_workdir"])
    if "stub_fixture" in e:
        cfg.executor.stub_fixture = str(e["stub_fixture"])
        if not Path(cfg.executor.stub_fixture).exists():
            raise ConfigError(f"stub_fixture does not exist: {cfg.executor.stub_fixture}")
    return cfg


def make_backend(
    cfg: EngineConfig,
    replay_fixture: str | None = None,
    record_fixture: str | None = None,
) -> Backend:
    if replay_fixture:
        backend: Backend = ReplayBackend(replay_fixture)
    else:
        if not cfg.backend.text_endpoint_url:
            raise ConfigError(
                "backend.text_endpoint_url is required unless --replay is used"
            )
        backend = OpenAICompatibleBackend(
            text_endpoint_url=cfg.backend.text_endpoint_url,
            vision_endpoint_url=cfg.backend.vision_endpoint_url or None,
            api_token=os.environ.get(TOKEN_ENV_VAR),
        )
    if record_fixture:
        backend = RecordingBackend(backend, record_fixture)
    return backend


def make_executor(cfg: EngineConfig) -> Executor:
    return create_executor(cfg.executor)


def make_engine(
    cfg: EngineConfig,
    replay_fixture: str | None = None,
    record_fixture: str | None = None,
    executor: Executor | None = None,
) -> Engine:
    settings = EngineSettings(
        text_model=cfg.backend.text_model,
        vision_model=cfg.backend.vision_model,
        temperature=cfg.backend.temperature,
        max_tokens=cfg.backend.max_tokens,
        step_budget=cfg.step_budget,
        timeout_s=cfg.executor.timeout_s,
    )
    if executor is None and cfg.mode is not Mode.SINGLE_STEP:
        executor = make_executor(cfg)
    return Engine(
        make_backend(cfg, replay_fixture, record_fixture), executor, settings
    )
