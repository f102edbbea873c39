"""Operator entry points: run one query, run benchmarks, check kernel health.

Exit codes are a stable contract: 0 success (Finalized / report written),
1 configuration or infrastructure error, 2 run ended BudgetExhausted.
"""

from __future__ import annotations

import base64
import datetime
import json
import shutil
import sys
import uuid
from pathlib import Path

import click

from .benchmark import DATASETS, run_benchmark
from .config import load_config, make_engine, make_executor
from .conversation import AnalyticsQuery, Mode
from .errors import DatasetError, InsightLoopError
from .executor import ExecStatus

# 1x1 red pixel; used by the artifact-capture kernel probe
_PROBE_PNG_B64 = (
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR4nGP4z8DwHwAFAAH/"
    "q842iQAAAABJRU5ErkJggg=="
)


def _new_run_dir(out_root: str) -> Path:
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
    run_dir = Path(out_root) / f"{stamp}-{uuid.uuid4().hex[:8]}"
    run_dir.mkdir(parents=True)
    return run_dir


@click.group()
def main() -> None:
    """Natural-language analytics over tabular files, planner/coder/grapher style."""


@main.command()
@click.option("--data", "data_paths", multiple=True, required=True, type=click.Path())
@click.option("--query", required=True)
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--single-step", is_flag=True, help="Answer in one planner turn, no tool calls.")
@click.option("--replay", "replay_fixture", type=click.Path(), default=None)
@click.option("--record", "record_fixture", type=click.Path(), default=None)
@click.option("--out", "out_root", default="runs", show_default=True)
def run(data_paths, query, config_path, single_step, replay_fixture, record_fixture, out_root):
    """Run one analytics query over the given tabular file(s)."""
    try:
        cfg = load_config(config_path)
        if single_step:
            cfg.mode = Mode.SINGLE_STEP
        for p in data_paths:
            if not Path(p).exists():
                raise InsightLoopError(f"data file not found: {p}")
        engine = make_engine(cfg, replay_fixture, record_fixture)
    except InsightLoopError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)

    run_dir = _new_run_dir(out_root)
    shutil.copy(config_path, run_dir / "config.toml")
    try:
        result = engine.run(AnalyticsQuery(list(data_paths), query, cfg.mode))
    except InsightLoopError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)

    transcript_path = Path(cfg.transcript_out) if cfg.transcript_out else run_dir / "transcript.ndjson"
    result.state.write_transcript(transcript_path)
    artifacts_dir = run_dir / "artifacts"
    artifacts_dir.mkdir()
    for name, path in result.state.artifacts.items():
        if Path(path).exists():
            shutil.copy(path, artifacts_dir / name)
    click.echo(f"run directory: {run_dir}", err=True)

    if result.finalized:
        click.echo(result.final_answer)
        sys.exit(0)
    click.echo("run ended without a final answer (budget exhausted)", err=True)
    sys.exit(2)


@main.command()
@click.option("--dataset", required=True, type=click.Choice(DATASETS))
@click.option("--root", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--limit", type=int, default=None)
@click.option("--parallelism", type=int, default=1, show_default=True)
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--single-step", is_flag=True)
@click.option("--replay", "replay_fixture", type=click.Path(), default=None)
@click.option("--record", "record_fixture", type=click.Path(), default=None)
@click.option("--no-judge", is_flag=True, help="Skip the LLM-judge denotation column.")
@click.option("--out", "out_root", default="runs", show_default=True)
def bench(dataset, root, limit, parallelism, config_path, single_step,
          replay_fixture, record_fixture, no_judge, out_root):
    """Score the engine on a benchmark dataset and write a comparison report."""
    try:
        cfg = load_config(config_path)
        if single_step:
            cfg.mode = Mode.SINGLE_STEP
        engine = make_engine(cfg, replay_fixture, record_fixture)
        report = run_benchmark(
            dataset,
            root,
            engine,
            mode=cfg.mode,
            limit=limit,
            parallelism=parallelism,
            judge=not no_judge,
        )
    except DatasetError as exc:
        click.echo(f"dataset error: {exc}", err=True)
        sys.exit(1)
    except InsightLoopError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)

    run_dir = _new_run_dir(out_root)
    shutil.copy(config_path, run_dir / "config.toml")
    (run_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8"
    )
    (run_dir / "report.txt").write_text(report.to_text_table() + "\n", encoding="utf-8")
    click.echo(report.to_text_table())
    click.echo(f"report written to {run_dir}", err=True)
    sys.exit(0)


def _kernel_probes(executor) -> list[tuple[str, bool, str]]:
    handle = executor.start_session()
    results = []
    try:
        executor.execute(handle, "x = 1", 10)
        r = executor.execute(handle, "print(x)", 10)
        results.append(("persistence", r.stdout == "1\n", f"stdout={r.stdout!r}"))

        code = (
            "import base64, pathlib\n"
            "pathlib.Path('artifacts').mkdir(exist_ok=True)\n"
            f"pathlib.Path('artifacts/probe.png').write_bytes(base64.b64decode({_PROBE_PNG_B64!r}))\n"
        )
        r = executor.execute(handle, code, 10)
        ok = any(a.name == "probe.png" and a.byte_length > 0 for a in r.artifacts)
        results.append(("artifact-capture", ok, f"artifacts={[a.name for a in r.artifacts]}"))

        r = executor.execute(handle, "while True: pass", 1)
        ok = r.status is ExecStatus.TIMEOUT
        results.append(("timeout", ok, f"status={r.status.value}"))
    finally:
        executor.shutdown(handle)
    return results


@main.command("kernel-check")
@click.option("--config", "config_path", required=True, type=click.Path())
def kernel_check(config_path):
    """Probe the execution session: persistence, artifact capture, timeout."""
    try:
        cfg = load_config(config_path)
        probes = _kernel_probes(make_executor(cfg))
    except InsightLoopError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    failed = 0
    for name, ok, detail in probes:
        click.echo(f"{'PASS' if ok else 'FAIL'} {name} ({detail})")
        failed += not ok
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
