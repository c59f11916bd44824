"""Text normalization: entity tagging, indexed tag replacement, lowercasing,
punctuation splitting, stop-word removal, and assembly of model inputs.

Entities are found on the raw text first, replaced by "TAG i" pairs (the index
is its own token), and only then is the remaining text lowercased and split.
Distinct surface forms of one tag type get distinct indices in first-occurrence
order; repeats of the same surface (case-insensitive) share an index.
"""

from __future__ import annotations

import unicodedata
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Protocol

from .wordpiece import BOS, EOS, PAD, SEPARATOR, TokenSequence, Vocabulary, detokenize, tokenize

ENTITY_TAGS = (
    "PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT",
    "WORK_OF_ART", "LAW", "LANGUAGE", "DATE", "TIME", "PERCENT", "MONEY",
    "QUANTITY", "ORDINAL", "CARDINAL",
)


class PreprocessError(RuntimeError):
    """A pipeline stage failed; the message names the stage."""


@dataclass(frozen=True)
class EntitySpan:
    """A tagged region of raw text, [start, end) character offsets."""

    start: int
    end: int
    tag: str
    surface: str

    def __post_init__(self):
        if self.tag not in ENTITY_TAGS:
            raise ValueError(f"unknown entity tag {self.tag!r}")
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span offsets [{self.start}, {self.end})")


@dataclass
class TaggedPassage:
    """Text with indexed tags substituted, plus the tag -> surfaces map."""

    text: str
    entity_map: dict[str, list[str]] = field(default_factory=dict)

    def surface_for(self, tag: str, index: int) -> str | None:
        forms = self.entity_map.get(tag, [])
        return forms[index] if 0 <= index < len(forms) else None


class EntityTagger(Protocol):
    """Anything that maps raw text to a list of EntitySpan."""

    def __call__(self, text: str) -> list[EntitySpan]: ...


def _is_word_char(c: str) -> bool:
    return c.isalnum() or c == "_"


class GazetteerTagger:
    """Deterministic tagger: longest surface form wins, word boundaries only,
    case-insensitive. A stand-in for a statistical recognizer."""

    def __init__(self, entries: Iterable[tuple[str, str]]):
        self.entries: list[tuple[str, str]] = []
        for surface, tag in entries:
            if tag not in ENTITY_TAGS:
                raise ValueError(f"gazetteer entry {surface!r} has unknown tag {tag!r}")
            if not surface:
                raise ValueError("gazetteer surface form is empty")
            self.entries.append((surface, tag))
        # longest first so overlapping candidates resolve to the longer form
        self.entries.sort(key=lambda e: (-len(e[0]), e[0]))

    @classmethod
    def from_tsv(cls, path) -> "GazetteerTagger":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'surface<TAB>TAG'")
                entries.append((parts[0], parts[1]))
        return cls(entries)

    def __call__(self, text: str) -> list[EntitySpan]:
        lower = text.lower()
        spans: list[EntitySpan] = []
        i, n = 0, len(text)
        while i < n:
            if i > 0 and _is_word_char(text[i - 1]):
                i += 1
                continue
            hit = None
            for surface, tag in self.entries:
                j = i + len(surface)
                if lower.startswith(surface.lower(), i) and (
                    j == n or not _is_word_char(text[j])
                ):
                    hit = EntitySpan(i, j, tag, text[i:j])
                    break
            if hit is not None:
                spans.append(hit)
                i = hit.end
            else:
                i += 1
        return spans


def tag_entities(text: str, tagger: EntityTagger, source: str = "") -> list[EntitySpan]:
    """Run the tagger and validate its output for this text."""
    if not text:
        raise ValueError("tag_entities: text is empty")
    try:
        spans = sorted(tagger(text), key=lambda s: s.start)
    except Exception as exc:
        where = f" in {source}" if source else ""
        raise PreprocessError(f"entity tagger failed{where}: {exc}") from exc
    prev_end = 0
    for s in spans:
        if s.end > len(text):
            raise PreprocessError(f"span [{s.start}, {s.end}) exceeds text length")
        if s.start < prev_end:
            raise PreprocessError(f"overlapping entity spans at offset {s.start}")
        if text[s.start:s.end] != s.surface:
            raise PreprocessError(f"span surface mismatch at offset {s.start}")
        prev_end = s.end
    return spans


def replace_with_indexed_tags(
    text: str,
    spans: list[EntitySpan],
    entity_map: dict[str, list[str]] | None = None,
) -> TaggedPassage:
    """Substitute each span with "TAG i" and lowercase everything else.

    An existing entity_map may be passed in so a second text (answer or
    question) reuses the indices already assigned to the passage.
    """
    emap: dict[str, list[str]] = {k: list(v) for k, v in (entity_map or {}).items()}
    out: list[str] = []
    pos = 0
    prev_end = 0
    for s in sorted(spans, key=lambda x: x.start):
        if s.start < prev_end:
            raise ValueError(f"overlapping spans at offset {s.start}")
        prev_end = s.end
        out.append(text[pos:s.start].lower())
        forms = emap.setdefault(s.tag, [])
        key = s.surface.lower()
        for idx, known in enumerate(forms):
            if known.lower() == key:
                break
        else:
            idx = len(forms)
            forms.append(s.surface)
        out.append(f"{s.tag} {idx}")
        pos = s.end
    out.append(text[pos:].lower())
    return TaggedPassage("".join(out), emap)


def _is_punctuation(c: str) -> bool:
    cp = ord(c)
    if 33 <= cp <= 47 or 58 <= cp <= 64 or 91 <= cp <= 96 or 123 <= cp <= 126:
        return True
    return unicodedata.category(c).startswith("P")


def split_words(text: str) -> list[str]:
    """Whitespace-split, then break punctuation characters into their own tokens."""
    words: list[str] = []
    for chunk in text.split():
        current = ""
        for c in chunk:
            if _is_punctuation(c):
                if current:
                    words.append(current)
                    current = ""
                words.append(c)
            else:
                current += c
        if current:
            words.append(current)
    return words


def load_stopwords(path) -> frozenset[str]:
    with open(path, encoding="utf-8") as fh:
        return frozenset(w.strip() for w in fh if w.strip())


def _is_protected(token: str) -> bool:
    return token in ENTITY_TAGS or token.isdigit()


def remove_stopwords(tokens: list[str], stoplist: frozenset[str]) -> list[str]:
    """Drop stop-list members, preserving order. Tag names and bare digit
    tokens (tag indices) always survive."""
    return [t for t in tokens if _is_protected(t) or t not in stoplist]


def _pieces(words: list[str], vocab: Vocabulary) -> TokenSequence:
    tokens: list[str] = []
    ids: list[int] = []
    for w in words:
        seq = tokenize(w, vocab)
        tokens.extend(seq.tokens)
        ids.extend(seq.ids)
    return TokenSequence(tokens, ids)


def tagged_wordpieces(
    text: str,
    tagger: EntityTagger,
    vocab: Vocabulary,
    stoplist: frozenset[str] | None = None,
    entity_map: dict[str, list[str]] | None = None,
    source: str = "",
) -> tuple[TokenSequence, TaggedPassage]:
    """Full single-text pipeline: tag, replace, split, (optionally) strip
    stop words, then WordPiece."""
    spans = tag_entities(text, tagger, source=source)
    tagged = replace_with_indexed_tags(text, spans, entity_map)
    words = split_words(tagged.text)
    # a literal separator in the source text would break the one-separator
    # structure of assembled inputs
    words = [w for w in words if w != SEPARATOR]
    if stoplist is not None:
        words = remove_stopwords(words, stoplist)
    return _pieces(words, vocab), tagged


def preprocess_pair(
    answer: str,
    passage: str,
    tagger: EntityTagger,
    stoplist: frozenset[str],
    vocab: Vocabulary,
) -> tuple[TokenSequence, TaggedPassage]:
    """Build the model input: answer pieces, one separator, passage pieces.

    Entity indices are assigned over the passage first; the answer reuses that
    map so identical surfaces share indices.
    """
    if not answer.strip():
        raise ValueError("preprocess_pair: answer is empty")
    if not passage.strip():
        raise ValueError("preprocess_pair: passage is empty")
    try:
        passage_seq, passage_tagged = tagged_wordpieces(
            passage, tagger, vocab, stoplist, source="passage"
        )
    except PreprocessError:
        raise
    except Exception as exc:
        raise PreprocessError(f"passage stage failed: {exc}") from exc
    try:
        answer_seq, joint = tagged_wordpieces(
            answer, tagger, vocab, stoplist,
            entity_map=passage_tagged.entity_map, source="answer",
        )
    except PreprocessError:
        raise
    except Exception as exc:
        raise PreprocessError(f"answer stage failed: {exc}") from exc
    tokens = answer_seq.tokens + [SEPARATOR] + passage_seq.tokens
    ids = answer_seq.ids + [vocab.separator_id] + passage_seq.ids
    return TokenSequence(tokens, ids), TaggedPassage(passage_tagged.text, joint.entity_map)


def postprocess_question(seq: TokenSequence) -> str:
    """Turn decoded pieces into a readable question: strip control tokens,
    merge continuations, and re-attach '?' to the preceding word."""
    tokens = [t for t in seq.tokens if t not in (BOS, EOS, PAD)]
    ids = [i for t, i in zip(seq.tokens, seq.ids) if t not in (BOS, EOS, PAD)]
    if not tokens:
        return ""
    if tokens[0].startswith("##"):
        # a decoder may emit a continuation piece first; treat it as a word start
        tokens[0] = tokens[0][2:]
    text = detokenize(TokenSequence(tokens, ids))
    text = text.replace(" ?", "?")
    return " ".join(text.split())


def default_data_path(name: str):
    """Path to a data file shipped inside the package."""
    return resources.files("qgen").joinpath("data", name)
