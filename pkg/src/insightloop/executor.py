"""Client side of the persistent code-execution session.

Two implementations share one interface: ``KernelClient`` supervises a kernel
subprocess speaking newline-delimited JSON over stdio, and ``StubExecutor``
replays canned results from a fixture file (zero subprocesses) for offline
tests and kernel-free operation.

Wire protocol (stdout frames only):
  handshake  {"op": "hello", "protocol": 1}            (both directions)
  request    {"id": n, "op": "exec", "code": s, "timeout_s": t}
  response   {"id": n, "status": s, "stdout": s, "stderr": s,
              "artifacts": [{"name":..., "mime":..., "bytes_b64":...}],
              "duration_ms": n}
"""

from __future__ import annotations

import base64
import json
import mimetypes
import queue
import shutil
import subprocess
import tempfile
import threading
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .errors import (
    ConfigError,
    HandshakeTimeout,
    KernelStartFailure,
    ProtocolViolation,
    SessionDead,
)

PROTOCOL_VERSION = 1
HANDSHAKE_TIMEOUT_S = 20.0
RESPONSE_GRACE_S = 5.0


class ExecStatus(str, Enum):
    OK = "Ok"
    ERROR = "Error"
    TIMEOUT = "Timeout"
    KILLED = "Killed"


@dataclass(frozen=True)
class ArtifactInfo:
    name: str
    media_type: str
    byte_length: int


@dataclass(frozen=True)
class ExecutionResult:
    status: ExecStatus
    stdout: str
    stderr: str
    artifacts: tuple[ArtifactInfo, ...] = ()
    duration_ms: int = 0


@dataclass
class SessionHandle:
    session_id: str
    workdir: Path
    alive: bool = True

    @property
    def artifacts_dir(self) -> Path:
        return self.workdir / "artifacts"


@dataclass
class ExecutorConfig:
    kernel_cmd: list[str] | None = None
    workdir_root: str | None = None
    timeout_s: float = 60.0
    ephemeral_workdir: bool = False
    stub_fixture: str | None = None


class Executor:
    """Session lifecycle interface shared by the stub and the kernel client."""

    def start_session(self) -> SessionHandle:
        raise NotImplementedError

    def execute(self, handle: SessionHandle, code: str, timeout_s: float) -> ExecutionResult:
        raise NotImplementedError

    def shutdown(self, handle: SessionHandle) -> None:
        raise NotImplementedError


def create_executor(config: ExecutorConfig) -> Executor:
    if config.stub_fixture:
        return StubExecutor(config)
    if config.kernel_cmd:
        return KernelClient(config)
    raise ConfigError("executor config needs either kernel_cmd or stub_fixture")


def _new_workdir(config: ExecutorConfig) -> Path:
    root = Path(config.workdir_root) if config.workdir_root else Path(tempfile.gettempdir())
    root.mkdir(parents=True, exist_ok=True)
    workdir = Path(tempfile.mkdtemp(prefix="session-", dir=root))
    (workdir / "artifacts").mkdir()
    return workdir


def _write_artifacts(handle: SessionHandle, frames: list[dict]) -> tuple[ArtifactInfo, ...]:
    """Materialize artifact frames into the session artifacts dir."""
    infos = []
    seen = set()
    for frame in frames:
        name = frame["name"]
        if name in seen:
            raise ProtocolViolation(f"duplicate artifact name {name!r} in one result")
        seen.add(name)
        data = base64.b64decode(frame.get("bytes_b64", ""))
        mime = frame.get("mime") or mimetypes.guess_type(name)[0] or "application/octet-stream"
        path = handle.artifacts_dir / name
        path.write_bytes(data)
        infos.append(ArtifactInfo(name, mime, len(data)))
    return tuple(infos)


class StubExecutor(Executor):
    """Canned-result executor: serves fixture entries in order, per session."""

    def __init__(self, config: ExecutorConfig):
        self.config = config
        if not config.stub_fixture:
            raise ConfigError("StubExecutor requires stub_fixture")
        self._entries: list[dict] = []
        with open(config.stub_fixture, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    self._entries.append(json.loads(line))
        self._cursors: dict[str, int] = {}

    def start_session(self) -> SessionHandle:
        handle = SessionHandle(session_id=uuid.uuid4().hex, workdir=_new_workdir(self.config))
        self._cursors[handle.session_id] = 0
        return handle

    def execute(self, handle: SessionHandle, code: str, timeout_s: float) -> ExecutionResult:
        if not handle.alive:
            raise SessionDead(handle.session_id)
        cursor = self._cursors[handle.session_id]
        if cursor >= len(self._entries):
            raise ProtocolViolation("stub fixture exhausted")
        self._cursors[handle.session_id] = cursor + 1
        entry = self._entries[cursor]
        artifacts = _write_artifacts(handle, entry.get("artifacts", []))
        return ExecutionResult(
            status=ExecStatus(entry.get("status", "Ok")),
            stdout=entry.get("stdout", ""),
            stderr=entry.get("stderr", ""),
            artifacts=artifacts,
            duration_ms=int(entry.get("duration_ms", 0)),
        )

    def shutdown(self, handle: SessionHandle) -> None:
        handle.alive = False
        if self.config.ephemeral_workdir:
            shutil.rmtree(handle.workdir, ignore_errors=True)


class _KernelProcess:
    """One kernel subprocess plus a reader thread feeding stdout frames."""

    def __init__(self, cmd: list[str], workdir: Path):
        try:
            self.proc = subprocess.Popen(
                cmd,
                cwd=workdir,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=open(workdir / "kernel.stderr.log", "wb"),
                text=False,
            )
        except OSError as exc:
            raise KernelStartFailure(f"{cmd}: {exc}") from exc
        self.lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        for raw in self.proc.stdout:  # type: ignore[union-attr]
            self.lines.put(raw)
        self.lines.put(None)  # EOF sentinel

    def send(self, frame: dict) -> None:
        data = (json.dumps(frame) + "\n").encode("utf-8")
        try:
            self.proc.stdin.write(data)  # type: ignore[union-attr]
            self.proc.stdin.flush()  # type: ignore[union-attr]
        except (BrokenPipeError, OSError) as exc:
            raise SessionDead(f"kernel stdin closed: {exc}") from exc

    def recv(self, timeout_s: float) -> dict | None:
        """Next frame, None on EOF; raises queue.Empty on timeout."""
        raw = self.lines.get(timeout=timeout_s)
        if raw is None:
            return None
        try:
            frame = json.loads(raw.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ProtocolViolation(f"non-JSON frame on kernel stdout: {raw[:200]!r}") from exc
        if not isinstance(frame, dict):
            raise ProtocolViolation(f"frame is not an object: {frame!r}")
        return frame

    def kill(self) -> None:
        if self.proc.poll() is None:
            self.proc.kill()
        self.proc.wait(timeout=5)

    def close(self) -> None:
        try:
            if self.proc.stdin and not self.proc.stdin.closed:
                self.proc.stdin.close()
            self.proc.wait(timeout=3)
        except (OSError, subprocess.TimeoutExpired):
            self.kill()


class KernelClient(Executor):
    """Supervises kernel subprocesses; strict one-in-flight request/response."""

    def __init__(self, config: ExecutorConfig):
        if not config.kernel_cmd:
            raise ConfigError("KernelClient requires kernel_cmd")
        self.config = config
        self._procs: dict[str, _KernelProcess] = {}
        self._next_id: dict[str, int] = {}
        self._locks: dict[str, threading.Lock] = {}

    def start_session(self) -> SessionHandle:
        workdir = _new_workdir(self.config)
        handle = SessionHandle(session_id=uuid.uuid4().hex, workdir=workdir)
        cmd = list(self.config.kernel_cmd) + ["--artifacts-dir", str(handle.artifacts_dir)]
        proc = _KernelProcess(cmd, workdir)
        proc.send({"op": "hello", "protocol": PROTOCOL_VERSION})
        try:
            frame = proc.recv(HANDSHAKE_TIMEOUT_S)
        except queue.Empty:
            proc.kill()
            raise HandshakeTimeout(f"no hello frame within {HANDSHAKE_TIMEOUT_S}s")
        if frame is None:
            proc.kill()
            raise KernelStartFailure("kernel exited before handshake")
        if frame.get("op") != "hello" or frame.get("protocol") != PROTOCOL_VERSION:
            proc.kill()
            raise ProtocolViolation(f"bad handshake frame: {frame!r}")
        self._procs[handle.session_id] = proc
        self._next_id[handle.session_id] = 1
        self._locks[handle.session_id] = threading.Lock()
        return handle

    def _mark_dead(self, handle: SessionHandle) -> None:
        handle.alive = False
        proc = self._procs.pop(handle.session_id, None)
        if proc is not None:
            proc.kill()

    def execute(self, handle: SessionHandle, code: str, timeout_s: float) -> ExecutionResult:
        if not handle.alive or handle.session_id not in self._procs:
            raise SessionDead(handle.session_id)
        proc = self._procs[handle.session_id]
        with self._locks[handle.session_id]:
            req_id = self._next_id[handle.session_id]
            self._next_id[handle.session_id] = req_id + 1
            try:
                proc.send({"id": req_id, "op": "exec", "code": code, "timeout_s": timeout_s})
            except SessionDead:
                self._mark_dead(handle)
                return ExecutionResult(ExecStatus.KILLED, "", "kernel process died", ())
            deadline = timeout_s + RESPONSE_GRACE_S
            try:
                frame = proc.recv(deadline)
            except queue.Empty:
                # Unresponsive past the grace period: hard kill, session dead.
                self._mark_dead(handle)
                return ExecutionResult(
                    ExecStatus.TIMEOUT,
                    "",
                    f"kernel unresponsive after {deadline}s; killed",
                    (),
                    duration_ms=int(deadline * 1000),
                )
            if frame is None:
                self._mark_dead(handle)
                return ExecutionResult(ExecStatus.KILLED, "", "kernel process died", ())
            if frame.get("id") != req_id:
                self._mark_dead(handle)
                raise ProtocolViolation(
                    f"response id {frame.get('id')!r} does not match request {req_id}"
                )
            artifacts = _write_artifacts(handle, frame.get("artifacts", []))
            return ExecutionResult(
                status=ExecStatus(frame["status"]),
                stdout=frame.get("stdout", ""),
                stderr=frame.get("stderr", ""),
                artifacts=artifacts,
                duration_ms=int(frame.get("duration_ms", 0)),
            )

    def shutdown(self, handle: SessionHandle) -> None:
        proc = self._procs.pop(handle.session_id, None)
        if proc is not None:
            proc.close()
        handle.alive = False
        if self.config.ephemeral_workdir:
            shutil.rmtree(handle.workdir, ignore_errors=True)
