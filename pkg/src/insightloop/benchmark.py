"""Benchmark harness: dataset loaders, engine driving, scoring, reporting.

Supported datasets (official release layouts, user-supplied, never fetched):

  wtq      WikiTableQuestions test split: ``data/pristine-unseen-tables.tsv``
           (tab-separated id/utterance/context/targetValue) plus ``csv/`` tables.
  tabfact  test-small split: ``small_test_id.json`` + ``total_examples.json``
           + ``all_csv/`` ('#'-delimited tables).
  fetaqa   test split: ``fetaQA-v1_test.jsonl`` with inline table arrays.

Tables are materialized to plain comma CSV in a scratch directory so the
engine sees one uniform tabular-file format.
"""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .conversation import AnalyticsQuery, Mode
from .engine import Engine
from .errors import DatasetError, MalformedEntry, MalformedRow, MissingFile
from .metrics import bleu_corpus, denotation_match, llm_judge_match, sacrebleu_corpus

DATASETS = ("wtq", "tabfact", "fetaqa")

OFFICIAL_COUNTS = {"wtq": 4344, "tabfact": 2024, "fetaqa": 2003}
OFFICIAL_TABFACT_TABLES = 298

TABFACT_QUESTION = (
    'Is the following statement about the table true or false? Statement: "{statement}" '
    "Answer with exactly True or False."
)


@dataclass(frozen=True)
class GoldAnswers:
    answers: tuple[str, ...]


@dataclass(frozen=True)
class GoldLabel:
    label: bool


@dataclass(frozen=True)
class BenchmarkSample:
    id: str
    table_paths: tuple[str, ...]
    question: str
    gold: GoldAnswers | GoldLabel
    dataset: str

    def __post_init__(self):
        if self.dataset == "tabfact" and not isinstance(self.gold, GoldLabel):
            raise ValueError("tabfact gold must be a label")
        if self.dataset in ("wtq", "fetaqa") and not isinstance(self.gold, GoldAnswers):
            raise ValueError(f"{self.dataset} gold must be answers")


@dataclass
class MetricReport:
    dataset: str
    n_samples: int
    scores: dict[str, float]
    published_scores: dict[str, float]
    per_sample: list[dict] = field(default_factory=list)

    @property
    def deltas(self) -> dict[str, float]:
        return {
            k: self.scores[k] - v
            for k, v in self.published_scores.items()
            if k in self.scores
        }

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "n_samples": self.n_samples,
            "scores": self.scores,
            "published_scores": self.published_scores,
            "deltas": self.deltas,
            "per_sample": self.per_sample,
        }

    def to_text_table(self) -> str:
        lines = [
            f"dataset: {self.dataset}   n={self.n_samples}",
            f"{'metric':<28}{'score':>10}{'reference':>12}{'delta':>10}",
        ]
        def cell(value: float | None, width: int) -> str:
            return f"{value:>{width}.2f}" if value is not None else "-".rjust(width)

        for name in sorted(set(self.scores) | set(self.published_scores)):
            score = self.scores.get(name)
            ref = self.published_scores.get(name)
            delta = score - ref if score is not None and ref is not None else None
            lines.append(f"{name:<28}{cell(score, 10)}{cell(ref, 12)}{cell(delta, 10)}")
        return "\n".join(lines)


def reference_scores(dataset: str, mode: Mode) -> dict[str, float]:
    """Pinned published comparison constants, by dataset and engine mode."""
    data = json.loads(
        resources.files("insightloop").joinpath("data", "reference_scores.json").read_text()
    )
    return data[mode.value][dataset]


# --- loaders ----------------------------------------------------------------


def _materialize_scratch(root: Path, scratch_dir: str | Path | None) -> Path:
    scratch = Path(scratch_dir) if scratch_dir else root / "_materialized"
    scratch.mkdir(parents=True, exist_ok=True)
    return scratch


def load_wtq(root: str | Path) -> list[BenchmarkSample]:
    root = Path(root)
    candidates = [root / "data" / "pristine-unseen-tables.tsv", root / "pristine-unseen-tables.tsv"]
    examples = next((p for p in candidates if p.exists()), None)
    if examples is None:
        raise MissingFile(f"no pristine-unseen-tables.tsv under {root}")
    samples = []
    with open(examples, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if lineno == 1 and line.startswith("id\t"):
                continue
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 4:
                raise MalformedRow(lineno, f"expected 4 tab-separated fields, got {len(fields)}")
            sample_id, utterance, context, target = fields
            table = root / context
            if not table.exists():
                raise MissingFile(f"table {context} referenced by {sample_id} is missing")
            samples.append(
                BenchmarkSample(
                    id=sample_id,
                    table_paths=(str(table),),
                    question=utterance,
                    gold=GoldAnswers(tuple(target.split("|"))),
                    dataset="wtq",
                )
            )
    return samples


def _materialize_tabfact_table(
    table_file: Path, scratch: Path, cache: dict[str, str]
) -> str:
    name = table_file.name
    if name not in cache:
        out = scratch / name
        with open(table_file, encoding="utf-8") as fh:
            rows = [line.rstrip("\n").split("#") for line in fh if line.strip()]
        with open(out, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(rows)
        cache[name] = str(out)
    return cache[name]


def load_tabfact(root: str | Path, scratch_dir: str | Path | None = None) -> list[BenchmarkSample]:
    root = Path(root)
    id_file = root / "small_test_id.json"
    examples_file = root / "total_examples.json"
    table_dir = root / "all_csv"
    for p in (id_file, examples_file):
        if not p.exists():
            raise MissingFile(str(p))
    scratch = _materialize_scratch(root, scratch_dir)
    table_ids = json.loads(id_file.read_text(encoding="utf-8"))
    examples = json.loads(examples_file.read_text(encoding="utf-8"))
    cache: dict[str, str] = {}
    samples = []
    for table_id in table_ids:
        entry = examples.get(table_id)
        if entry is None:
            raise MalformedEntry(f"table {table_id} not present in total_examples.json")
        if not (isinstance(entry, list) and len(entry) >= 2 and len(entry[0]) == len(entry[1])):
            raise MalformedEntry(f"bad statements/labels entry for table {table_id}")
        table_file = table_dir / table_id
        if not table_file.exists():
            raise MissingFile(f"table file {table_file} is missing")
        table_path = _materialize_tabfact_table(table_file, scratch, cache)
        for i, (statement, label) in enumerate(zip(entry[0], entry[1])):
            samples.append(
                BenchmarkSample(
                    id=f"{table_id}#{i}",
                    table_paths=(table_path,),
                    question=statement,
                    gold=GoldLabel(bool(label)),
                    dataset="tabfact",
                )
            )
    return samples


def load_fetaqa(root: str | Path, scratch_dir: str | Path | None = None) -> list[BenchmarkSample]:
    root = Path(root)
    candidates = [root / "fetaQA-v1_test.jsonl", root / "fetaqa_test.jsonl"]
    test_file = next((p for p in candidates if p.exists()), None)
    if test_file is None:
        raise MissingFile(f"no fetaQA-v1_test.jsonl under {root}")
    scratch = _materialize_scratch(root, scratch_dir)
    samples = []
    n_lines = 0
    with open(test_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            n_lines += 1
            try:
                entry = json.loads(line)
                feta_id = entry["feta_id"]
                question = entry["question"]
                answer = entry["answer"]
                table_array = entry["table_array"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedEntry(f"{test_file}:{lineno}: {exc}")
            table_path = scratch / f"feta_{feta_id}.csv"
            with open(table_path, "w", newline="", encoding="utf-8") as out:
                csv.writer(out).writerows(table_array)
            samples.append(
                BenchmarkSample(
                    id=str(feta_id),
                    table_paths=(str(table_path),),
                    question=question,
                    gold=GoldAnswers((answer,)),
                    dataset="fetaqa",
                )
            )
    if not samples:
        raise MalformedEntry(f"{test_file} contains no samples")
    return samples


LOADERS = {"wtq": load_wtq, "tabfact": load_tabfact, "fetaqa": load_fetaqa}


def load_dataset(dataset: str, root: str | Path, scratch_dir=None) -> list[BenchmarkSample]:
    if dataset not in LOADERS:
        raise DatasetError(f"unknown dataset {dataset!r}; choose from {DATASETS}")
    if dataset == "wtq":
        return load_wtq(root)
    return LOADERS[dataset](root, scratch_dir)


# --- scoring ----------------------------------------------------------------


_TRUE_FALSE_RE = re.compile(r"[a-z]+")


def extract_tabfact_label(final_answer: str) -> bool | None:
    """Lowercase and scan for a leading true/false token."""
    m = _TRUE_FALSE_RE.search(final_answer.lower())
    if m is None:
        return None
    if m.group(0) == "true":
        return True
    if m.group(0) == "false":
        return False
    return None


def run_benchmark(
    dataset: str,
    root: str | Path,
    engine: Engine,
    mode: Mode = Mode.MULTI_STEP,
    limit: int | None = None,
    parallelism: int = 1,
    judge: bool = True,
    scratch_dir: str | Path | None = None,
) -> MetricReport:
    """Drive the engine over a dataset and score the predictions.

    Per-sample engine failures are recorded as incorrect; only dataset
    loading problems abort the run.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be positive")
    samples = load_dataset(dataset, root, scratch_dir)
    if limit is not None:
        samples = samples[:limit]

    def run_one(sample: BenchmarkSample) -> dict:
        question = (
            TABFACT_QUESTION.format(statement=sample.question)
            if dataset == "tabfact"
            else sample.question
        )
        try:
            result = engine.run(
                AnalyticsQuery(list(sample.table_paths), question, mode)
            )
            prediction = result.final_answer or ""
            error = None if result.finalized else "run did not finalize"
        except Exception as exc:  # never abort the corpus for one sample
            prediction = ""
            error = f"{type(exc).__name__}: {exc}"
        return {"id": sample.id, "prediction": prediction, "error": error}

    if parallelism == 1:
        rows = [run_one(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            rows = list(pool.map(run_one, samples))

    by_id = {s.id: s for s in samples}
    rows.sort(key=lambda r: r["id"])  # canonical ordering

    scores: dict[str, float] = {}
    if dataset == "tabfact":
        n_correct = 0
        for row in rows:
            sample = by_id[row["id"]]
            label = extract_tabfact_label(row["prediction"]) if not row["error"] else None
            ok = label is not None and label == sample.gold.label
            n_correct += ok
            row["verdict"] = "correct" if ok else "incorrect"
        scores["accuracy"] = 100.0 * n_correct / len(rows) if rows else 0.0
    elif dataset == "wtq":
        n_rule = 0
        n_judge = 0
        for row in rows:
            sample = by_id[row["id"]]
            gold_text = "|".join(sample.gold.answers)
            rule_ok = not row["error"] and denotation_match(row["prediction"], gold_text)
            judge_ok = rule_ok
            if judge and not row["error"] and not rule_ok:
                try:
                    judge_ok = llm_judge_match(
                        row["prediction"], gold_text, sample.question,
                        engine.backend, model=engine.settings.text_model,
                    )
                except Exception:
                    judge_ok = False
            n_rule += rule_ok
            n_judge += judge_ok
            row["verdict"] = "correct" if judge_ok else "incorrect"
            row["rule_verdict"] = "correct" if rule_ok else "incorrect"
        scores["denotation_accuracy_rule"] = 100.0 * n_rule / len(rows) if rows else 0.0
        scores["denotation_accuracy"] = 100.0 * n_judge / len(rows) if rows else 0.0
    else:  # fetaqa
        hyps = [row["prediction"] for row in rows]
        refs = [by_id[row["id"]].gold.answers[0] for row in rows]
        scores["bleu"] = bleu_corpus(hyps, refs).score
        scores["sacrebleu"] = sacrebleu_corpus(hyps, refs).score
        for row in rows:
            row["verdict"] = "scored" if not row["error"] else "incorrect"

    return MetricReport(
        dataset=dataset,
        n_samples=len(rows),
        scores=scores,
        published_scores=dict(reference_scores(dataset, mode)),
        per_sample=rows,
    )
