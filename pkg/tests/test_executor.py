import json
import sys
import textwrap

import pytest

from insightloop.errors import (
    ConfigError,
    KernelStartFailure,
    ProtocolViolation,
    SessionDead,
)
from insightloop.executor import (
    ExecStatus,
    ExecutorConfig,
    KernelClient,
    StubExecutor,
    create_executor,
)

from conftest import PNG_B64, PNG_BYTES, write_stub_fixture


class TestFactory:
    def test_stub_wins(self, tmp_path):
        fixture = write_stub_fixture(tmp_path / "s.ndjson", [])
        cfg = ExecutorConfig(stub_fixture=str(fixture), kernel_cmd=["whatever"])
        assert isinstance(create_executor(cfg), StubExecutor)

    def test_kernel_cmd(self):
        assert isinstance(create_executor(ExecutorConfig(kernel_cmd=["x"])), KernelClient)

    def test_neither(self):
        with pytest.raises(ConfigError):
            create_executor(ExecutorConfig())


class TestStubExecutor:
    def fixture(self, tmp_path):
        return write_stub_fixture(
            tmp_path / "s.ndjson",
            [
                {"status": "Ok", "stdout": "one\n"},
                {
                    "status": "Ok",
                    "artifacts": [{"name": "a.png", "mime": "image/png", "bytes_b64": PNG_B64}],
                },
                {"status": "Error", "stderr": "boom"},
            ],
        )

    def test_serves_in_order(self, tmp_path):
        ex = StubExecutor(ExecutorConfig(stub_fixture=str(self.fixture(tmp_path)),
                                         workdir_root=str(tmp_path)))
        h = ex.start_session()
        assert ex.execute(h, "print(1)", 10).stdout == "one\n"
        r = ex.execute(h, "plot", 10)
        assert [a.name for a in r.artifacts] == ["a.png"]
        assert (h.artifacts_dir / "a.png").read_bytes() == PNG_BYTES
        r = ex.execute(h, "bad", 10)
        assert r.status is ExecStatus.ERROR and r.stderr == "boom"

    def test_per_session_cursor(self, tmp_path):
        ex = StubExecutor(ExecutorConfig(stub_fixture=str(self.fixture(tmp_path)),
                                         workdir_root=str(tmp_path)))
        h1, h2 = ex.start_session(), ex.start_session()
        assert ex.execute(h1, "x", 10).stdout == "one\n"
        assert ex.execute(h2, "x", 10).stdout == "one\n"

    def test_exhausted(self, tmp_path):
        fixture = write_stub_fixture(tmp_path / "s.ndjson", [{"status": "Ok"}])
        ex = StubExecutor(ExecutorConfig(stub_fixture=str(fixture), workdir_root=str(tmp_path)))
        h = ex.start_session()
        ex.execute(h, "x", 10)
        with pytest.raises(ProtocolViolation):
            ex.execute(h, "x", 10)

    def test_shutdown_marks_dead(self, tmp_path):
        ex = StubExecutor(ExecutorConfig(stub_fixture=str(self.fixture(tmp_path)),
                                         workdir_root=str(tmp_path)))
        h = ex.start_session()
        ex.shutdown(h)
        with pytest.raises(SessionDead):
            ex.execute(h, "x", 10)

    def test_ephemeral_workdir_removed(self, tmp_path):
        ex = StubExecutor(
            ExecutorConfig(stub_fixture=str(self.fixture(tmp_path)),
                           workdir_root=str(tmp_path), ephemeral_workdir=True)
        )
        h = ex.start_session()
        assert h.workdir.exists()
        ex.shutdown(h)
        assert not h.workdir.exists()

    def test_duplicate_artifact_names_rejected(self, tmp_path):
        fixture = write_stub_fixture(
            tmp_path / "s.ndjson",
            [{"status": "Ok", "artifacts": [
                {"name": "a.png", "bytes_b64": PNG_B64},
                {"name": "a.png", "bytes_b64": PNG_B64},
            ]}],
        )
        ex = StubExecutor(ExecutorConfig(stub_fixture=str(fixture), workdir_root=str(tmp_path)))
        h = ex.start_session()
        with pytest.raises(ProtocolViolation):
            ex.execute(h, "x", 10)


def fake_kernel_cmd(body: str) -> list[str]:
    """A kernel stand-in: argv[-2:] carry --artifacts-dir, `body` is the loop."""
    script = textwrap.dedent(
        """
        import json, sys
        """
    ) + textwrap.dedent(body)
    return [sys.executable, "-u", "-c", script, "--artifacts-dir-placeholder"]


def make_client(body: str, tmp_path) -> KernelClient:
    return KernelClient(
        ExecutorConfig(kernel_cmd=fake_kernel_cmd(body), workdir_root=str(tmp_path))
    )


WELL_BEHAVED = """
    print(json.dumps({"op": "hello", "protocol": 1}), flush=True)
    for line in sys.stdin:
        frame = json.loads(line)
        if frame.get("op") != "exec":
            continue
        print(json.dumps({"id": frame["id"], "status": "Ok",
                          "stdout": "ran\\n", "stderr": "",
                          "artifacts": [], "duration_ms": 1}), flush=True)
"""


class TestKernelClient:
    def test_handshake_and_roundtrip(self, tmp_path):
        client = make_client(WELL_BEHAVED, tmp_path)
        h = client.start_session()
        r = client.execute(h, "whatever", 10)
        assert r.status is ExecStatus.OK and r.stdout == "ran\n"
        client.shutdown(h)
        assert not h.alive

    def test_kernel_exits_before_handshake(self, tmp_path):
        client = make_client("pass", tmp_path)
        with pytest.raises(KernelStartFailure):
            client.start_session()

    def test_bad_handshake_frame(self, tmp_path):
        body = """
            print(json.dumps({"op": "hello", "protocol": 99}), flush=True)
            sys.stdin.read()
        """
        with pytest.raises(ProtocolViolation):
            make_client(body, tmp_path).start_session()

    def test_unlaunchable_command(self, tmp_path):
        client = KernelClient(
            ExecutorConfig(kernel_cmd=["/nonexistent/kernel"], workdir_root=str(tmp_path))
        )
        with pytest.raises(KernelStartFailure):
            client.start_session()

    def test_mid_run_death_reports_killed(self, tmp_path):
        body = """
            print(json.dumps({"op": "hello", "protocol": 1}), flush=True)
            sys.stdin.readline()
            sys.exit(1)
        """
        client = make_client(body, tmp_path)
        h = client.start_session()
        r = client.execute(h, "x", 10)
        assert r.status is ExecStatus.KILLED
        assert not h.alive
        with pytest.raises(SessionDead):
            client.execute(h, "x", 10)

    def test_id_mismatch_is_protocol_violation(self, tmp_path):
        body = """
            print(json.dumps({"op": "hello", "protocol": 1}), flush=True)
            for line in sys.stdin:
                frame = json.loads(line)
                if frame.get("op") != "exec":
                    continue
                print(json.dumps({"id": 777, "status": "Ok", "stdout": "",
                                  "stderr": "", "artifacts": [],
                                  "duration_ms": 0}), flush=True)
        """
        client = make_client(body, tmp_path)
        h = client.start_session()
        with pytest.raises(ProtocolViolation):
            client.execute(h, "x", 10)
        assert not h.alive

    def test_non_json_frame(self, tmp_path):
        body = """
            print(json.dumps({"op": "hello", "protocol": 1}), flush=True)
            for line in sys.stdin:
                print("garbage not json", flush=True)
        """
        client = make_client(body, tmp_path)
        h = client.start_session()
        with pytest.raises(ProtocolViolation):
            client.execute(h, "x", 10)

    def test_unresponsive_kernel_killed_as_timeout(self, tmp_path):
        body = """
            import time
            print(json.dumps({"op": "hello", "protocol": 1}), flush=True)
            sys.stdin.readline()
            sys.stdin.readline()
            time.sleep(600)
        """
        client = make_client(body, tmp_path)
        h = client.start_session()
        r = client.execute(h, "x", 0.2)
        assert r.status is ExecStatus.TIMEOUT
        assert r.duration_ms >= 200
        assert not h.alive
        assert client._procs == {}

    def test_artifacts_materialized(self, tmp_path):
        body = f"""
            print(json.dumps({{"op": "hello", "protocol": 1}}), flush=True)
            for line in sys.stdin:
                frame = json.loads(line)
                if frame.get("op") != "exec":
                    continue
                print(json.dumps({{"id": frame["id"], "status": "Ok", "stdout": "",
                                  "stderr": "", "duration_ms": 2, "artifacts": [
                                      {{"name": "fig.png", "mime": "image/png",
                                       "bytes_b64": {PNG_B64!r}}}]}}), flush=True)
        """
        client = make_client(body, tmp_path)
        h = client.start_session()
        r = client.execute(h, "plot", 10)
        assert r.artifacts[0].name == "fig.png"
        assert r.artifacts[0].byte_length == len(PNG_BYTES)
        assert (h.artifacts_dir / "fig.png").read_bytes() == PNG_BYTES
        client.shutdown(h)
