"""Word-level edit distance with a deterministic S/D/I/C decomposition, plus
corpus-wide summaries: distance distribution, exact-match rate, first words,
and word-count histograms.

The headline per-pair number is the raw edit distance (a word count); the
normalized rate distance/N is carried alongside. Words are compared after
lowercasing and splitting punctuation characters into their own tokens.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field

from .preprocess import split_words

DISTANCE_BUCKETS = ("<=5", "6-10", "11-15", "16-20", ">=21")


@dataclass(frozen=True)
class EditAlignment:
    """Counts from one minimal-distance alignment of reference vs hypothesis."""

    substitutions: int
    deletions: int
    insertions: int
    correct: int

    @property
    def distance(self) -> int:
        return self.substitutions + self.deletions + self.insertions

    @property
    def ref_len(self) -> int:
        return self.substitutions + self.deletions + self.correct

    @property
    def hyp_len(self) -> int:
        return self.substitutions + self.insertions + self.correct


def edit_alignment(ref_words: list[str], hyp_words: list[str]) -> EditAlignment:
    """Unit-cost Levenshtein over words via dynamic programming.

    Among minimal alignments the backtrace prefers correct, then substitution,
    then deletion, then insertion, which pins the decomposition down even when
    several alignments share the minimal distance.
    """
    n, m = len(ref_words), len(hyp_words)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i
    for j in range(1, m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        ref_word = ref_words[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ref_word == hyp_words[j - 1] else 1
            row[j] = min(prev[j - 1] + cost, prev[j] + 1, row[j - 1] + 1)
    s = d = ins = c = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref_words[i - 1] == hyp_words[j - 1] \
                and dp[i][j] == dp[i - 1][j - 1]:
            c += 1
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + 1:
            s += 1
            i, j = i - 1, j - 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            d += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return EditAlignment(s, d, ins, c)


def wer_normalized(alignment: EditAlignment) -> float:
    """(S + D + I) / N where N is the reference word count."""
    if alignment.ref_len == 0:
        raise ValueError("normalized rate undefined for an empty reference")
    return alignment.distance / alignment.ref_len


def wer_tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace with punctuation as separate words."""
    return split_words(text.lower())


def question_distance(ref: str, hyp: str) -> EditAlignment:
    return edit_alignment(wer_tokenize(ref), wer_tokenize(hyp))


def first_word_frequency(questions: list[str]) -> list[tuple[str, int]]:
    """Counts of each question's first whitespace token, most frequent first
    (ties alphabetical). Empty questions are skipped."""
    counts = Counter(q.split()[0] for q in questions if q.split())
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def word_count_histogram(questions: list[str]) -> tuple[float, dict[int, int]]:
    """(mean word count rounded to 2 decimals, {length: questions})."""
    lengths = [len(q.split()) for q in questions]
    if not lengths:
        return 0.0, {}
    hist = dict(sorted(Counter(lengths).items()))
    return round(sum(lengths) / len(lengths), 2), hist


def _bucket_of(distance: int) -> str:
    if distance <= 5:
        return "<=5"
    if distance <= 10:
        return "6-10"
    if distance <= 15:
        return "11-15"
    if distance <= 20:
        return "16-20"
    return ">=21"


@dataclass
class PairRecord:
    question_id: str
    distance: int
    normalized: float
    ref_len: int
    hyp_len: int
    first_word_ref: str
    first_word_hyp: str


@dataclass
class CorpusReport:
    pairs: list[PairRecord]
    mean_distance: float
    mean_normalized: float
    exact_match_rate: float
    bucket_shares: dict[str, float]
    first_words_hyp: list[tuple[str, int]]
    first_words_ref: list[tuple[str, int]]
    hyp_word_mean: float
    hyp_word_hist: dict[int, int] = field(default_factory=dict)
    ref_word_mean: float = 0.0
    ref_word_hist: dict[int, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "question_count": len(self.pairs),
            "mean_distance": self.mean_distance,
            "mean_normalized": self.mean_normalized,
            "exact_match_rate": self.exact_match_rate,
            "bucket_shares": self.bucket_shares,
            "first_words_hyp": [list(kv) for kv in self.first_words_hyp],
            "first_words_ref": [list(kv) for kv in self.first_words_ref],
            "hyp_word_mean": self.hyp_word_mean,
            "hyp_word_hist": {str(k): v for k, v in self.hyp_word_hist.items()},
            "ref_word_mean": self.ref_word_mean,
            "ref_word_hist": {str(k): v for k, v in self.ref_word_hist.items()},
            "pairs": [
                {
                    "id": p.question_id,
                    "distance": p.distance,
                    "normalized": round(p.normalized, 6),
                }
                for p in self.pairs
            ],
        }

    def to_text(self) -> str:
        lines = [
            f"questions          {len(self.pairs)}",
            f"mean distance      {self.mean_distance:.2f}",
            f"mean normalized    {self.mean_normalized:.4f}",
            f"exact match rate   {self.exact_match_rate:.4%}",
            "",
            "distance bucket    share",
        ]
        for name in DISTANCE_BUCKETS:
            lines.append(f"  {name:<15} {self.bucket_shares[name]:.4f}")
        lines.append("")
        lines.append("first word (generated)   count")
        for word, count in self.first_words_hyp[:10]:
            lines.append(f"  {word:<22} {count}")
        lines.append("")
        lines.append(f"mean words: generated {self.hyp_word_mean:.2f}, "
                     f"reference {self.ref_word_mean:.2f}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["id", "distance", "normalized", "ref_len", "hyp_len",
                 "first_word_ref", "first_word_hyp"]
            )
            for p in self.pairs:
                writer.writerow(
                    [p.question_id, p.distance, f"{p.normalized:.6f}",
                     p.ref_len, p.hyp_len, p.first_word_ref, p.first_word_hyp]
                )


def corpus_report(pairs: list[tuple[str, str, str]]) -> CorpusReport:
    """Aggregate (id, reference question, generated question) triples."""
    if not pairs:
        raise ValueError("corpus_report: no pairs")
    seen: set[str] = set()
    for qid, _, _ in pairs:
        if qid in seen:
            raise ValueError(f"corpus_report: duplicate id {qid!r}")
        seen.add(qid)
    records: list[PairRecord] = []
    bucket_counts = Counter()
    exact = 0
    for qid, ref, hyp in pairs:
        ref_words = wer_tokenize(ref)
        hyp_words = wer_tokenize(hyp)
        alignment = edit_alignment(ref_words, hyp_words)
        dist = alignment.distance
        normalized = wer_normalized(alignment) if alignment.ref_len else float(dist > 0)
        bucket_counts[_bucket_of(dist)] += 1
        exact += dist == 0
        records.append(
            PairRecord(
                qid, dist, normalized, alignment.ref_len, alignment.hyp_len,
                ref_words[0] if ref_words else "",
                hyp_words[0] if hyp_words else "",
            )
        )
    n = len(records)
    refs = [ref for _, ref, _ in pairs]
    hyps = [hyp for _, _, hyp in pairs]
    ref_mean, ref_hist = word_count_histogram(refs)
    hyp_mean, hyp_hist = word_count_histogram(hyps)
    return CorpusReport(
        pairs=records,
        mean_distance=sum(r.distance for r in records) / n,
        mean_normalized=sum(r.normalized for r in records) / n,
        exact_match_rate=exact / n,
        bucket_shares={name: bucket_counts[name] / n for name in DISTANCE_BUCKETS},
        first_words_hyp=first_word_frequency(hyps),
        first_words_ref=first_word_frequency(refs),
        hyp_word_mean=hyp_mean,
        hyp_word_hist=hyp_hist,
        ref_word_mean=ref_mean,
        ref_word_hist=ref_hist,
    )
