"""Beam-search decoding and the end-to-end passage+answer -> question path."""

from __future__ import annotations

import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .preprocess import ENTITY_TAGS, EntityTagger, preprocess_pair
from .tensor import no_grad
from .wordpiece import TokenSequence, Vocabulary
from . import preprocess as _preprocess


@dataclass
class GenerationConfig:
    beam_width: int = 4
    max_length: int = 48
    length_alpha: float = 0.6

    def __post_init__(self):
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")
        if self.max_length < 1:
            raise ValueError("max_length must be >= 1")
        if self.length_alpha < 0:
            raise ValueError("length_alpha must be >= 0")


@dataclass(frozen=True)
class BeamHypothesis:
    """A decoded sequence (ending in the end marker once finished) and the
    exact sum of its per-step token log-probabilities."""

    tokens: tuple[int, ...]
    log_prob: float
    finished: bool

    def score(self, alpha: float) -> float:
        return self.log_prob / (len(self.tokens) ** alpha)


def _log_softmax(row: np.ndarray) -> np.ndarray:
    shifted = row - row.max()
    return shifted - np.log(np.exp(shifted).sum())


def _stepper(model, input_ids):
    """Encode once; return a closure mapping a prefix to next-token log-probs."""
    enc_out, src_ids = model.encode(np.asarray(input_ids, dtype=np.int64))
    bos = model.config.bos_id

    def step(prefix: tuple[int, ...]) -> np.ndarray:
        dec_in = np.array([bos, *prefix], dtype=np.int64)
        logits = model.decode(enc_out, src_ids, dec_in)
        return _log_softmax(logits.data[-1])

    return step


def greedy_decode(model, input_ids, cfg: GenerationConfig) -> BeamHypothesis:
    """Argmax decoding; ties go to the smallest token id."""
    eos = model.config.eos_id
    with no_grad():
        step = _stepper(model, input_ids)
        tokens: tuple[int, ...] = ()
        total = 0.0
        for position in range(cfg.max_length):
            logp = step(tokens)
            token = eos if position == cfg.max_length - 1 else int(logp.argmax())
            tokens += (token,)
            total += float(logp[token])
            if token == eos:
                break
    return BeamHypothesis(tokens, total, True)


def beam_search(model, input_ids, cfg: GenerationConfig) -> list[BeamHypothesis]:
    """Breadth-limited best-first decoding.

    Each live hypothesis expands by its beam_width most probable tokens; the
    beam_width best continuations by cumulative log-probability stay live.
    Hypotheses that emit the end marker move to the finished pool; anything
    still live at max_length is completed with the end marker and its actual
    log-probability. The greedy completion is always merged into the pool, so
    widening the beam never ranks below greedy. Finished hypotheses are ranked
    by log-probability / length^alpha with ties broken by token ids.
    """
    eos = model.config.eos_id
    finished: list[BeamHypothesis] = []
    with no_grad():
        step = _stepper(model, input_ids)
        live: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
        for position in range(1, cfg.max_length + 1):
            candidates: list[tuple[tuple[int, ...], float]] = []
            for tokens, total in live:
                logp = step(tokens)
                if position == cfg.max_length:
                    picks = [eos]
                else:
                    order = np.lexsort((np.arange(len(logp)), -logp))
                    picks = [int(t) for t in order[: cfg.beam_width]]
                candidates.extend(
                    (tokens + (t,), total + float(logp[t])) for t in picks
                )
            live = []
            for tokens, total in candidates:
                if tokens[-1] == eos:
                    finished.append(BeamHypothesis(tokens, total, True))
                else:
                    live.append((tokens, total))
            live.sort(key=lambda c: (-c[1], c[0]))
            live = live[: cfg.beam_width]
            if not live:
                break
    if cfg.beam_width > 1:
        greedy = greedy_decode(model, input_ids, cfg)
        if all(h.tokens != greedy.tokens for h in finished):
            finished.append(greedy)
    finished.sort(key=lambda h: (-h.score(cfg.length_alpha), h.tokens))
    return finished


def substitute_entities(question: str, entity_map: dict[str, list[str]]) -> str:
    """Replace each "TAG i" pair with its recorded surface form; pairs whose
    index is unknown are left verbatim."""
    alternation = "|".join(sorted(ENTITY_TAGS, key=len, reverse=True))
    pattern = re.compile(rf"\b({alternation}) (\d+)\b")

    def repl(match: re.Match) -> str:
        forms = entity_map.get(match.group(1), [])
        index = int(match.group(2))
        return forms[index] if index < len(forms) else match.group(0)

    return pattern.sub(repl, question)


def generate_question(
    model,
    passage: str,
    answer: str,
    tagger: EntityTagger,
    stoplist: frozenset[str],
    vocab: Vocabulary,
    cfg: GenerationConfig,
) -> tuple[str, dict[str, list[str]]]:
    """Preprocess, beam-search, post-process. Returns the tagged question text
    and the entity map needed to substitute surfaces back in."""
    input_seq, tagged = preprocess_pair(answer, passage, tagger, stoplist, vocab)
    hyps = beam_search(model, np.array(input_seq.ids, dtype=np.int64), cfg)
    best = hyps[0]
    seq = TokenSequence.from_ids(best.tokens, vocab)
    return _preprocess.postprocess_question(seq), tagged.entity_map


def generate_batch(
    model,
    records: list[dict],
    tagger: EntityTagger,
    stoplist: frozenset[str],
    vocab: Vocabulary,
    cfg: GenerationConfig,
    workers: int = 1,
) -> list[dict]:
    """Decode {id, passage, answer} records into
    {id, question_tagged, question_substituted, score}, preserving order."""

    def one(record: dict) -> dict:
        input_seq, tagged = preprocess_pair(
            record["answer"], record["passage"], tagger, stoplist, vocab
        )
        hyps = beam_search(model, np.array(input_seq.ids, dtype=np.int64), cfg)
        best = hyps[0]
        question = _preprocess.postprocess_question(
            TokenSequence.from_ids(best.tokens, vocab)
        )
        return {
            "id": record["id"],
            "question_tagged": question,
            "question_substituted": substitute_entities(question, tagged.entity_map),
            "score": best.score(cfg.length_alpha),
        }

    if workers <= 1:
        return [one(r) for r in records]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, records))
