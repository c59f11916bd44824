import csv
import json
from functools import lru_cache

import numpy as np
import pytest

from corpus_fixtures import WER_PAIRS
from qgen.evaluation import (
    EditAlignment,
    corpus_report,
    edit_alignment,
    first_word_frequency,
    question_distance,
    wer_normalized,
    wer_tokenize,
    word_count_histogram,
)


def brute_distance(ref, hyp):
    """Direct recursive Levenshtein definition, memoized."""
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def rec(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        sub = 0 if ref[i - 1] == hyp[j - 1] else 1
        return min(rec(i - 1, j - 1) + sub, rec(i - 1, j) + 1, rec(i, j - 1) + 1)

    return rec(len(ref), len(hyp))


def random_words(rng, max_len=8, vocab=("a", "b", "c", "d", "e")):
    return [vocab[i] for i in rng.integers(0, len(vocab), size=rng.integers(0, max_len + 1))]


class TestEditAlignment:
    def test_identical_sequences(self):
        a = edit_alignment(["where", "was", "PERSON", "8", "born", "?"],
                           ["where", "was", "PERSON", "8", "born", "?"])
        assert a.distance == 0
        assert a.correct == 6

    def test_single_substitution(self):
        ref = wer_tokenize("what is the largest city of GPE 1?")
        hyp = wer_tokenize("what is the largest area of GPE 1?")
        a = edit_alignment(ref, hyp)
        assert (a.substitutions, a.deletions, a.insertions) == (1, 0, 0)

    def test_mixed_alignment_decomposition(self):
        a = question_distance(
            "when did the launches of boilerplate csms occur in orbit?",
            "when was the ORDINAL 0 satellite launched?",
        )
        assert a.distance == 8
        assert (a.substitutions, a.deletions, a.insertions, a.correct) == (5, 3, 0, 3)

    def test_empty_hypothesis_all_deletions(self):
        a = edit_alignment(["a", "b", "c"], [])
        assert (a.substitutions, a.deletions, a.insertions, a.correct) == (0, 3, 0, 0)

    def test_empty_reference_all_insertions(self):
        a = edit_alignment([], ["x", "y"])
        assert (a.substitutions, a.deletions, a.insertions, a.correct) == (0, 0, 2, 0)

    def test_backtrace_prefers_correct_then_substitution(self):
        a = edit_alignment(["a", "b"], ["b"])
        assert (a.substitutions, a.deletions, a.insertions, a.correct) == (0, 1, 0, 1)
        b = edit_alignment(["a", "b"], ["c"])
        assert (b.substitutions, b.deletions, b.insertions, b.correct) == (1, 1, 0, 0)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(500):
            ref, hyp = random_words(rng), random_words(rng)
            assert edit_alignment(ref, hyp).distance == brute_distance(ref, hyp)

    def test_count_consistency(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            ref, hyp = random_words(rng), random_words(rng)
            a = edit_alignment(ref, hyp)
            assert a.ref_len == len(ref)
            assert a.hyp_len == len(hyp)

    def test_metric_axioms(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            x, y, z = (random_words(rng) for _ in range(3))
            dxy = edit_alignment(x, y).distance
            assert dxy == edit_alignment(y, x).distance
            assert edit_alignment(x, x).distance == 0
            dxz = edit_alignment(x, z).distance
            dzy = edit_alignment(z, y).distance
            assert dxy <= dxz + dzy


class TestWerNormalized:
    def test_zero_distance(self):
        assert wer_normalized(EditAlignment(0, 0, 0, 4)) == 0.0

    def test_simple_rate(self):
        assert wer_normalized(EditAlignment(1, 0, 0, 7)) == pytest.approx(0.125)

    def test_distance_eight_over_ten(self):
        assert wer_normalized(EditAlignment(5, 3, 0, 2)) == pytest.approx(0.8)

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError, match="undefined"):
            wer_normalized(EditAlignment(0, 0, 3, 0))


class TestWerTokenize:
    def test_lowercases_and_splits_punctuation(self):
        assert wer_tokenize("Where was PERSON 8 born?") == \
            ["where", "was", "person", "8", "born", "?"]

    def test_comma_inside_word(self):
        assert wer_tokenize("increases,according to") == \
            ["increases", ",", "according", "to"]


class TestCorpusReport:
    def test_two_pair_arithmetic(self):
        report = corpus_report([
            ("q1", "what is it?", "what is it?"),
            ("q2", "what is it?", "what was it?"),
        ])
        assert report.mean_distance == pytest.approx(0.5)
        assert report.exact_match_rate == pytest.approx(0.5)
        assert report.bucket_shares["<=5"] == pytest.approx(1.0)

    def test_all_identical(self):
        report = corpus_report([(f"q{i}", "same thing?", "same thing?") for i in range(5)])
        assert report.mean_distance == 0.0
        assert report.exact_match_rate == 1.0

    def test_duplicate_ids_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            corpus_report([("q1", "a?", "a?"), ("q1", "b?", "b?")])

    def test_bucket_shares_sum_to_one(self):
        pairs = [(f"q{i}", ref, hyp) for i, (ref, hyp, _) in enumerate(WER_PAIRS)]
        report = corpus_report(pairs)
        assert sum(report.bucket_shares.values()) == pytest.approx(1.0, abs=1e-9)

    def test_matches_independent_recomputation(self):
        pairs = [(f"q{i}", ref, hyp) for i, (ref, hyp, _) in enumerate(WER_PAIRS)]
        report = corpus_report(pairs)
        distances = [
            brute_distance(wer_tokenize(ref), wer_tokenize(hyp))
            for _, ref, hyp in pairs
        ]
        assert report.mean_distance == pytest.approx(sum(distances) / len(distances))
        assert report.exact_match_rate == pytest.approx(
            sum(d == 0 for d in distances) / len(distances)
        )
        share_low = sum(d <= 5 for d in distances) / len(distances)
        assert report.bucket_shares["<=5"] == pytest.approx(share_low)

    def test_csv_and_json_outputs(self, tmp_path):
        report = corpus_report([
            ("q1", "what is it?", "what was it?"),
            ("q2", "who did that?", "who did that?"),
        ])
        csv_path = tmp_path / "report.csv"
        report.write_csv(csv_path)
        with open(csv_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["id"] for r in rows] == ["q1", "q2"]
        assert rows[0]["distance"] == "1"
        doc = report.to_json_dict()
        assert doc["question_count"] == 2
        json.dumps(doc)
        text = report.to_text()
        assert "mean distance" in text


class TestFirstWordFrequency:
    def test_basic_counting(self):
        got = first_word_frequency(["what is x?", "what is y?", "who is z?"])
        assert got == [("what", 2), ("who", 1)]

    def test_empty_list(self):
        assert first_word_frequency([]) == []

    def test_reference_questions_rank_what_first(self):
        refs = [ref for ref, _, _ in WER_PAIRS]
        table = first_word_frequency(refs)
        assert table[0][0] == "what"


class TestWordCountHistogram:
    def test_single_question(self):
        assert word_count_histogram(["a b c"]) == (3.0, {3: 1})

    def test_two_questions(self):
        mean, hist = word_count_histogram(["a", "a b"])
        assert mean == pytest.approx(1.5)
        assert hist == {1: 1, 2: 1}

    def test_empty(self):
        assert word_count_histogram([]) == (0.0, {})

    def test_generated_column_mean_matches_hand_count(self):
        hyps = [hyp for _, hyp, _ in WER_PAIRS]
        counts = [len(h.split()) for h in hyps]
        mean, hist = word_count_histogram(hyps)
        assert mean == pytest.approx(round(sum(counts) / len(counts), 2))
        assert sum(hist.values()) == len(hyps)
