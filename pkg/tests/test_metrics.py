import json
import math
from pathlib import Path

import pytest
from hypothesis import given, strategies as st

from insightloop.backend import Backend, CompletionRequest
from insightloop.errors import EmptyCorpus, LengthMismatch
from insightloop.metrics import (
    bleu_corpus,
    clipped_ngram_stats,
    denotation_match,
    llm_judge_match,
    normalize_denotation,
    sacrebleu_corpus,
    tokenize_13a,
)

GOLDEN = json.loads((Path(__file__).parent / "data" / "sacrebleu_golden.json").read_text())


# Pairs of (prediction, gold, should_match) exercising the normalization rules.
DENOTATION_CASES = [
    ("Beijing", "beijing", True),
    ("  Beijing  ", "Beijing", True),
    ('"Beijing"', "Beijing", True),
    ("Beijing.", "Beijing", True),
    ("1,234", "1234", True),
    ("1,234.50", "1234.5", True),
    ("3.0", "3", True),
    ("42", "42.0", True),
    ("0.5", ".5", True),
    ("-7", "-7.0", True),
    ("a|b", "b|a", True),
    ("a, b", "b|a", True),
    ("New York, Boston", "boston|new york", True),
    ("a|a|b", "a|b|a", True),
    ("United  States", "united states", True),
    ("Beijing", "Shanghai", False),
    ("a|b", "a", False),
    ("a|a|b", "a|b", False),
    ("1234", "1235", False),
    ("3.5", "3", False),
]


@pytest.mark.parametrize("pred,gold,expected", DENOTATION_CASES)
def test_denotation_cases(pred, gold, expected):
    assert denotation_match(pred, gold) is expected


@given(st.text(max_size=60))
def test_normalize_denotation_idempotent(raw):
    once = normalize_denotation(raw)
    again = normalize_denotation("|".join(once.values))
    assert once == again


@given(st.text(min_size=1, max_size=60))
def test_denotation_match_reflexive(raw):
    assert denotation_match(raw, raw)


class TestPlainBleu:
    def test_hand_worked_degenerate(self):
        # hyp "the the the" vs ref "the cat sat": clipped unigram 1/3, all
        # higher orders zero, BP 1 at equal lengths, so the score is 0.
        s = bleu_corpus(["the the the"], ["the cat sat"])
        assert s.score == 0.0
        assert s.ngram_precisions == (pytest.approx(1 / 3), 0.0, 0.0, 0.0)
        assert s.brevity_penalty == 1.0
        assert (s.hyp_len, s.ref_len) == (3, 3)

    def test_identity_is_100(self):
        s = bleu_corpus(["the quick brown fox jumps"], ["the quick brown fox jumps"])
        assert s.score == pytest.approx(100.0)

    def test_brevity_penalty(self):
        s = bleu_corpus(["a b c d e"], ["a b c d e f g"])
        assert s.brevity_penalty == pytest.approx(math.exp(1 - 7 / 5))

    def test_tokens_are_whitespace_only(self):
        # plain BLEU must not split punctuation off
        s = bleu_corpus(["hello, world!"], ["hello , world !"])
        assert s.hyp_len == 2 and s.ref_len == 4

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            bleu_corpus(["a"], ["a", "b"])

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            bleu_corpus([], [])

    def test_empty_hypotheses_score_zero(self):
        s = bleu_corpus(["", ""], ["a b", "c d"])
        assert s.score == 0.0
        assert s.brevity_penalty == 0.0


class TestSacreBleuGoldens:
    @pytest.mark.parametrize("case", sorted(GOLDEN))
    def test_score_matches_reference(self, case):
        g = GOLDEN[case]
        s = sacrebleu_corpus(g["hyps"], g["refs"])
        assert s.score == pytest.approx(g["score"], abs=0.05)
        assert list(s.ngram_precisions) == pytest.approx(g["precisions"], abs=1e-6)
        assert s.brevity_penalty == pytest.approx(g["bp"], abs=1e-9)
        assert (s.hyp_len, s.ref_len) == (g["hyp_len"], g["ref_len"])

    def test_smoothing_gives_nonzero_without_bigram_matches(self):
        # no bigram/trigram/4-gram matches, but exponential smoothing keeps
        # the geometric mean positive
        s = sacrebleu_corpus(["a b c d e"], ["a c e b d"])
        assert 0.0 < s.score < 100.0


class TestTokenize13a:
    def test_punctuation_split(self):
        assert tokenize_13a("Hello, world!") == "Hello , world !"

    def test_decimal_numbers_kept_whole(self):
        assert tokenize_13a("it costs 3.50 dollars") == "it costs 3.50 dollars"

    def test_entity_unescape(self):
        assert tokenize_13a("a &amp; b &lt;c&gt;") == "a & b < c >"

    def test_whitespace_collapse(self):
        assert tokenize_13a("  a   b  ") == "a b"


_tokens = st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=12)


@given(hyp=_tokens, ref=_tokens)
def test_clipped_counts_bounded(hyp, ref):
    correct, total = clipped_ngram_stats(hyp, ref)
    for n in range(1, 5):
        assert 0 <= correct[n - 1] <= total[n - 1]
        assert total[n - 1] == max(0, len(hyp) - n + 1)


# identity is only 100 once every n-gram order has mass (>= 4 tokens); below
# that the geometric mean degenerates to 0, same as the reference scorer
@given(hyp=st.lists(st.sampled_from(["a", "b", "c"]), min_size=4, max_size=10))
def test_identity_corpus_scores_100(hyp):
    line = " ".join(hyp)
    assert sacrebleu_corpus([line], [line]).score == pytest.approx(100.0)
    assert bleu_corpus([line], [line]).score == pytest.approx(100.0)


class _ScriptedBackend(Backend):
    def __init__(self, replies):
        self.replies = list(replies)
        self.requests: list[CompletionRequest] = []

    def complete(self, request):
        self.requests.append(request)
        return self.replies.pop(0)


class TestLlmJudge:
    def test_yes(self):
        assert llm_judge_match("42", "42", "how many?", _ScriptedBackend(["Yes"]))

    def test_no(self):
        assert not llm_judge_match("41", "42", "how many?", _ScriptedBackend(["no."]))

    def test_reask_once_then_false(self):
        backend = _ScriptedBackend(["maybe", "unclear"])
        assert not llm_judge_match("a", "b", "q?", backend)
        assert len(backend.requests) == 2

    def test_reask_can_recover(self):
        backend = _ScriptedBackend(["hmm", "yes"])
        assert llm_judge_match("a", "a", "q?", backend)

    def test_prompt_contains_all_three_fields(self):
        backend = _ScriptedBackend(["yes"])
        llm_judge_match("pred-x", "gold-y", "question-z", backend)
        prompt = backend.requests[0].messages[0].parts[0].text
        assert "pred-x" in prompt and "gold-y" in prompt and "question-z" in prompt
