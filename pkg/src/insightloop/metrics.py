"""Evaluation metrics: denotation matching, corpus BLEU, and a
SacreBLEU-compatible variant (13a tokenization, exponential smoothing).

All scores are reported on the conventional 0-100 scale.
"""

from __future__ import annotations

import math
import re
import string
from collections import Counter
from dataclasses import dataclass

from .backend import Backend, ChatMessage, CompletionRequest
from .errors import EmptyCorpus, LengthMismatch

NGRAM_ORDER = 4

_GROUPING_COMMA_RE = re.compile(r"(?<=\d),(?=\d)")
_STRIP_CHARS = string.punctuation + string.whitespace


# --- denotation -------------------------------------------------------------


@dataclass(frozen=True)
class Denotation:
    """Normalized answer values; normalization is idempotent."""

    values: tuple[str, ...]


def _canonical_number(token: str) -> str | None:
    try:
        return str(int(token))
    except ValueError:
        pass
    try:
        f = float(token)
    except ValueError:
        return None
    if not math.isfinite(f):
        return None
    if f.is_integer():
        return str(int(f))
    return repr(f)


def _normalize_token(token: str) -> str:
    t = _GROUPING_COMMA_RE.sub("", token.strip().casefold())
    num = _canonical_number(t)
    if num is not None:
        return num
    # stripping can expose more surrounding junk (and vice versa): iterate to
    # a fixpoint so normalization is idempotent
    while True:
        cleaned = re.sub(r"\s+", " ", t.strip(_STRIP_CHARS)).strip()
        if cleaned == t:
            break
        t = cleaned
    num = _canonical_number(t)
    if num is not None:
        return num
    return t


def normalize_denotation(raw: str) -> Denotation:
    """Case-fold, strip surrounding punctuation, drop thousands separators,
    canonicalize numerals, and split list answers on '|' or ', '."""
    if "|" in raw:
        parts = raw.split("|")
    else:
        parts = re.split(r",\s+", raw)
    values = [v for v in (_normalize_token(p) for p in parts) if v]
    return Denotation(tuple(values))


def denotation_match(pred: str, gold: str) -> bool:
    """True iff the normalized value lists agree as multisets."""
    return Counter(normalize_denotation(pred).values) == Counter(
        normalize_denotation(gold).values
    )


def llm_judge_match(
    pred: str,
    gold: str,
    question: str,
    backend: Backend,
    model: str = "judge",
) -> bool:
    """Ask the judge model for strict yes/no answer equivalence.

    A reply that is neither yes nor no is re-asked once, then scored False.
    """
    from .agents import render_template

    prompt = render_template("judge", question=question, pred=pred, gold=gold)
    messages = [ChatMessage.text("user", prompt)]
    for _ in range(2):
        reply = backend.complete(
            CompletionRequest(model=model, messages=tuple(messages), max_tokens=8)
        ).strip().lower()
        if reply.startswith("yes"):
            return True
        if reply.startswith("no"):
            return False
        messages = messages + [
            ChatMessage.text("assistant", reply),
            ChatMessage.text("user", "Answer strictly 'yes' or 'no'."),
        ]
    return False


# --- BLEU -------------------------------------------------------------------


@dataclass(frozen=True)
class CorpusScore:
    """Corpus BLEU sufficient statistics. brevity_penalty is exp(1 - r/h)
    capped at 1; it degenerates to 0 for an empty hypothesis corpus."""

    score: float  # 0..100
    ngram_precisions: tuple[float, float, float, float]  # fractions in [0, 1]
    brevity_penalty: float
    hyp_len: int
    ref_len: int


def tokenize_13a(line: str) -> str:
    """The mteval-v13a tokenization used by standardized corpus BLEU."""
    norm = line
    norm = norm.replace("<skipped>", "")
    norm = norm.replace("-\n", "")
    norm = norm.replace("\n", " ")
    norm = norm.replace("&quot;", '"')
    norm = norm.replace("&amp;", "&")
    norm = norm.replace("&lt;", "<")
    norm = norm.replace("&gt;", ">")

    norm = f" {norm} "
    norm = re.sub(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])", r" \1 ", norm)
    norm = re.sub(r"([^0-9])([\.,])", r"\1 \2 ", norm)
    norm = re.sub(r"([\.,])([^0-9])", r" \1 \2", norm)
    norm = re.sub(r"([0-9])(-)", r"\1 \2 ", norm)
    norm = re.sub(r"\s+", " ", norm)
    return norm.strip()


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def clipped_ngram_stats(
    hyp_tokens: list[str], ref_tokens: list[str]
) -> tuple[list[int], list[int]]:
    """Per-order (correct, total) modified n-gram counts for one segment."""
    correct = [0] * NGRAM_ORDER
    total = [0] * NGRAM_ORDER
    for n in range(1, NGRAM_ORDER + 1):
        hyp_counts = _ngram_counts(hyp_tokens, n)
        ref_counts = _ngram_counts(ref_tokens, n)
        total[n - 1] = sum(hyp_counts.values())
        correct[n - 1] = sum(
            min(c, ref_counts[g]) for g, c in hyp_counts.items()
        )
    return correct, total


def _corpus_score(
    hyps: list[str], refs: list[str], tokenizer, smooth_exp: bool
) -> CorpusScore:
    if len(hyps) != len(refs):
        raise LengthMismatch(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise EmptyCorpus("empty corpus")

    correct = [0] * NGRAM_ORDER
    total = [0] * NGRAM_ORDER
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hyps, refs):
        hyp_tokens = tokenizer(hyp).split()
        ref_tokens = tokenizer(ref).split()
        hyp_len += len(hyp_tokens)
        ref_len += len(ref_tokens)
        c, t = clipped_ngram_stats(hyp_tokens, ref_tokens)
        for i in range(NGRAM_ORDER):
            correct[i] += c[i]
            total[i] += t[i]

    precisions = [0.0] * NGRAM_ORDER
    smooth_factor = 1.0
    for n in range(1, NGRAM_ORDER + 1):
        if total[n - 1] == 0:
            break
        if correct[n - 1] == 0:
            if smooth_exp:
                smooth_factor *= 2
                precisions[n - 1] = 1.0 / (smooth_factor * total[n - 1])
        else:
            precisions[n - 1] = correct[n - 1] / total[n - 1]

    if hyp_len > 0:
        brevity_penalty = math.exp(1 - ref_len / hyp_len) if hyp_len < ref_len else 1.0
    else:
        brevity_penalty = 0.0

    if all(p > 0 for p in precisions):
        geo_mean = math.exp(sum(math.log(p) for p in precisions) / NGRAM_ORDER)
        score = 100.0 * brevity_penalty * geo_mean
    else:
        score = 0.0

    return CorpusScore(
        score=score,
        ngram_precisions=tuple(precisions),  # type: ignore[arg-type]
        brevity_penalty=brevity_penalty,
        hyp_len=hyp_len,
        ref_len=ref_len,
    )


def bleu_corpus(hyps: list[str], refs: list[str]) -> CorpusScore:
    """Plain corpus BLEU-4: whitespace tokens, no smoothing."""
    return _corpus_score(hyps, refs, lambda s: s, smooth_exp=False)


def sacrebleu_corpus(hyps: list[str], refs: list[str]) -> CorpusScore:
    """Corpus BLEU-4 with 13a tokenization and exponential smoothing of zero
    higher-order precisions, matching the standardized reference defaults."""
    return _corpus_score(hyps, refs, tokenize_13a, smooth_exp=True)
