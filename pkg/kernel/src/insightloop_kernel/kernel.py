"""The kernel process.

Protocol (stdout carries frames only; diagnostics go to stderr):
  out  {"op": "hello", "protocol": 1}                       on startup
  in   {"id": n, "op": "exec", "code": s, "timeout_s": t}
  out  {"id": n, "status": "Ok"|"Error"|"Timeout", "stdout": s, "stderr": s,
        "artifacts": [{"name":..., "mime":..., "bytes_b64":...}],
        "duration_ms": n}

Snippets share one namespace for the lifetime of the process. Files that
appear in the artifacts directory during a request are reported back inline,
lexicographically by name. Plotting is forced headless at startup.

Preloaded names (pinned): pd (pandas), np (numpy), plt (matplotlib.pyplot).
Anything else importable in the environment can be imported by snippets.
"""

from __future__ import annotations

import argparse
import base64
import io
import json
import mimetypes
import os
import signal
import sys
import time
import traceback
from contextlib import redirect_stderr, redirect_stdout
from pathlib import Path

PROTOCOL_VERSION = 1
OUTPUT_CAP = 64 * 1024
TRUNCATION_MARK = "\n[truncated]"


class _ExecTimeout(Exception):
    pass


def _cap(text: str) -> str:
    if len(text) <= OUTPUT_CAP:
        return text
    return text[:OUTPUT_CAP] + TRUNCATION_MARK


def _build_namespace() -> dict:
    ns: dict = {"__name__": "__main__"}
    try:
        import numpy as np

        ns["np"] = np
    except ImportError:
        pass
    try:
        import pandas as pd

        ns["pd"] = pd
    except ImportError:
        pass
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        ns["plt"] = plt
    except ImportError:
        pass
    return ns


class KernelSession:
    def __init__(self, artifacts_dir: Path):
        self.artifacts_dir = artifacts_dir
        self.artifacts_dir.mkdir(parents=True, exist_ok=True)
        self.namespace = _build_namespace()
        self.request_counter = 0

    def _artifact_names(self) -> set[str]:
        return {p.name for p in self.artifacts_dir.iterdir() if p.is_file()}

    def capture_exec(self, code: str, timeout_s: float) -> tuple[str, str, str, list[dict]]:
        """Run one snippet; returns (status, stdout, stderr, new_artifacts)."""
        self.request_counter += 1
        before = self._artifact_names()
        out, err = io.StringIO(), io.StringIO()
        status = "Ok"

        def on_alarm(signum, frame):
            raise _ExecTimeout()

        old_handler = signal.signal(signal.SIGALRM, on_alarm)
        signal.setitimer(signal.ITIMER_REAL, max(timeout_s, 0.001))
        try:
            with redirect_stdout(out), redirect_stderr(err):
                exec(code, self.namespace)
        except _ExecTimeout:
            status = "Timeout"
            err.write(f"\nexecution exceeded {timeout_s}s and was interrupted\n")
        except BaseException:
            status = "Error"
            err.write(traceback.format_exc())
        finally:
            signal.setitimer(signal.ITIMER_REAL, 0)
            signal.signal(signal.SIGALRM, old_handler)

        new_artifacts = []
        for name in sorted(self._artifact_names() - before):
            path = self.artifacts_dir / name
            data = path.read_bytes()
            new_artifacts.append(
                {
                    "name": name,
                    "mime": mimetypes.guess_type(name)[0] or "application/octet-stream",
                    "bytes_b64": base64.b64encode(data).decode("ascii"),
                }
            )
        return status, _cap(out.getvalue()), _cap(err.getvalue()), new_artifacts


def _emit(frame: dict) -> None:
    sys.stdout.write(json.dumps(frame) + "\n")
    sys.stdout.flush()


def serve(session: KernelSession, stdin=None) -> None:
    """Frame loop: hello, then one response per request, until stdin closes."""
    stdin = stdin or sys.stdin
    _emit({"op": "hello", "protocol": PROTOCOL_VERSION})
    for line in stdin:
        if not line.strip():
            continue
        try:
            frame = json.loads(line)
            if not isinstance(frame, dict):
                raise ValueError("frame is not an object")
        except ValueError as exc:
            _emit(
                {
                    "id": None,
                    "status": "Error",
                    "stdout": "",
                    "stderr": f"ProtocolViolation: malformed frame: {exc}",
                    "artifacts": [],
                    "duration_ms": 0,
                }
            )
            continue
        if frame.get("op") == "hello":
            continue
        req_id = frame.get("id")
        if frame.get("op") != "exec" or not isinstance(frame.get("code"), str):
            _emit(
                {
                    "id": req_id,
                    "status": "Error",
                    "stdout": "",
                    "stderr": f"ProtocolViolation: unsupported frame: {frame.get('op')!r}",
                    "artifacts": [],
                    "duration_ms": 0,
                }
            )
            continue
        timeout_s = float(frame.get("timeout_s", 60))
        started = time.monotonic()
        status, stdout, stderr, artifacts = session.capture_exec(frame["code"], timeout_s)
        duration_ms = int((time.monotonic() - started) * 1000)
        if status == "Timeout":
            # report at least the configured limit
            duration_ms = max(duration_ms, int(timeout_s * 1000))
        _emit(
            {
                "id": req_id,
                "status": status,
                "stdout": stdout,
                "stderr": stderr,
                "artifacts": artifacts,
                "duration_ms": duration_ms,
            }
        )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="insightloop-kernel")
    parser.add_argument("--artifacts-dir", required=True)
    args = parser.parse_args(argv)
    os.environ.setdefault("MPLBACKEND", "Agg")
    session = KernelSession(Path(args.artifacts_dir))
    serve(session)
    return 0


if __name__ == "__main__":
    sys.exit(main())
