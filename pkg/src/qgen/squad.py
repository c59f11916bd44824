"""SQuAD v1.1 ingestion: load records, pick the consensus answer, invert each
question into an (answer * passage) -> question training example, and group
examples into padded length buckets."""

from __future__ import annotations

import json
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .preprocess import EntityTagger, PreprocessError, tagged_wordpieces, preprocess_pair
from .wordpiece import Vocabulary

MAX_INPUT_IDS = 512
MAX_TARGET_IDS = 48
DEFAULT_BUCKET_BOUNDS = ((64, 16), (128, 24), (256, 32), (512, 48))

CACHE_FORMAT = "qgen-examples"
CACHE_VERSION = 1


class SchemaError(ValueError):
    """The JSON does not match the SQuAD v1.1 schema; message names the path."""


@dataclass
class SquadRecord:
    title: str
    passage: str
    question_id: str
    question: str
    answers: list[tuple[str, int]]


@dataclass
class InvertedExample:
    question_id: str
    input_ids: list[int]
    target_ids: list[int]


@dataclass
class Bucket:
    """Examples whose padded lengths fit (max_input, max_target)."""

    max_input: int
    max_target: int
    examples: list[InvertedExample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.examples)

    def _padded(self, rows: list[list[int]], width: int, pad_id: int) -> np.ndarray:
        out = np.full((len(rows), width), pad_id, dtype=np.int64)
        for i, row in enumerate(rows):
            out[i, : len(row)] = row
        return out

    def input_matrix(self, indices, pad_id: int) -> np.ndarray:
        return self._padded(
            [self.examples[i].input_ids for i in indices], self.max_input, pad_id
        )

    def target_matrix(self, indices, pad_id: int) -> np.ndarray:
        return self._padded(
            [self.examples[i].target_ids for i in indices], self.max_target, pad_id
        )


def _require(obj, key, path):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"missing {key!r} at {path}")
    return obj[key]


def load_squad(path) -> list[SquadRecord]:
    """Parse a SQuAD v1.1 JSON file into one record per question."""
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"malformed JSON in {path}: {exc}") from exc
    records: list[SquadRecord] = []
    articles = _require(doc, "data", "$")
    for ai, article in enumerate(articles):
        apath = f"data[{ai}]"
        title = _require(article, "title", apath)
        for pi, para in enumerate(_require(article, "paragraphs", apath)):
            ppath = f"{apath}.paragraphs[{pi}]"
            context = _require(para, "context", ppath)
            for qi, qa in enumerate(_require(para, "qas", ppath)):
                qpath = f"{ppath}.qas[{qi}]"
                qid = str(_require(qa, "id", qpath))
                question = _require(qa, "question", qpath)
                raw_answers = _require(qa, "answers", qpath)
                if not raw_answers:
                    raise SchemaError(f"empty answers at {qpath}")
                answers = []
                for ci, ans in enumerate(raw_answers):
                    cpath = f"{qpath}.answers[{ci}]"
                    text = _require(ans, "text", cpath)
                    start = int(_require(ans, "answer_start", cpath))
                    if context[start : start + len(text)] != text:
                        raise SchemaError(f"answer offset mismatch at {cpath}")
                    answers.append((text, start))
                records.append(SquadRecord(title, context, qid, question, answers))
    return records


def select_answer(answers: list[tuple[str, int]]) -> tuple[str, int]:
    """Pick the most agreed-upon answer text (case-insensitive multiplicity);
    break ties by smallest offset, then lexicographically."""
    if not answers:
        raise ValueError("select_answer: no answers")
    counts = Counter(text.lower() for text, _ in answers)
    return min(
        answers,
        key=lambda a: (-counts[a[0].lower()], a[1], a[0].lower()),
    )


def invert(
    records: list[SquadRecord],
    tagger: EntityTagger,
    stoplist: frozenset[str],
    vocab: Vocabulary,
    max_input_ids: int = MAX_INPUT_IDS,
    max_target_ids: int = MAX_TARGET_IDS,
    workers: int = 1,
) -> list[InvertedExample]:
    """Turn records into (input ids, target ids) pairs, sorted by question id.

    The question is lowercased, entity-tagged with the passage's index map,
    and keeps its stop words. Over-long inputs drop passage tail pieces only;
    over-long questions are truncated before the closing marker. Records may
    be processed by a bounded worker pool; output order is id-sorted either way.
    """

    def one(rec: SquadRecord) -> InvertedExample:
        try:
            answer_text, _ = select_answer(rec.answers)
            input_seq, tagged = preprocess_pair(
                answer_text, rec.passage, tagger, stoplist, vocab
            )
            question_seq, _ = tagged_wordpieces(
                rec.question, tagger, vocab, stoplist=None,
                entity_map=tagged.entity_map, source="question",
            )
        except (PreprocessError, ValueError) as exc:
            raise PreprocessError(f"question {rec.question_id}: {exc}") from exc
        input_ids = input_seq.ids[:max_input_ids]
        assert vocab.separator_id in input_ids, "separator truncated away"
        target_ids = (
            [vocab.bos_id] + question_seq.ids[: max_target_ids - 2] + [vocab.eos_id]
        )
        return InvertedExample(rec.question_id, input_ids, target_ids)

    ordered = sorted(records, key=lambda r: r.question_id)
    if workers <= 1:
        return [one(rec) for rec in ordered]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, ordered))


def bucket_by_length(
    examples: list[InvertedExample],
    bounds=DEFAULT_BUCKET_BOUNDS,
) -> list[Bucket]:
    """Place each example in the smallest bucket whose bounds fit it."""
    bounds = list(bounds)
    for (a0, b0), (a1, b1) in zip(bounds, bounds[1:]):
        if a1 <= a0 or b1 <= b0:
            raise ValueError(f"bucket bounds must ascend, got {bounds}")
    buckets = [Bucket(a, b) for a, b in bounds]
    for ex in examples:
        for bucket in buckets:
            if len(ex.input_ids) <= bucket.max_input and len(ex.target_ids) <= bucket.max_target:
                bucket.examples.append(ex)
                break
        else:
            raise RuntimeError(
                f"example {ex.question_id} exceeds the last bucket bound "
                f"({len(ex.input_ids)}, {len(ex.target_ids)}) > {bounds[-1]}"
            )
    return buckets


def save_examples(examples: list[InvertedExample], path) -> None:
    """Write the example cache as versioned JSON lines."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"format": CACHE_FORMAT, "version": CACHE_VERSION}) + "\n")
        for ex in examples:
            fh.write(
                json.dumps(
                    {
                        "id": ex.question_id,
                        "input_ids": ex.input_ids,
                        "target_ids": ex.target_ids,
                    },
                    separators=(",", ":"),
                )
                + "\n"
            )


def load_examples(path) -> list[InvertedExample]:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != CACHE_FORMAT or header.get("version") != CACHE_VERSION:
            raise SchemaError(f"unrecognized example cache header in {path}: {header}")
        return [
            InvertedExample(rec["id"], rec["input_ids"], rec["target_ids"])
            for rec in (json.loads(line) for line in fh if line.strip())
        ]
