"""Walk a reading passage through the preprocessing pipeline, stage by stage.

Stages: find entity spans with the gazetteer, replace them with indexed tags
while lowercasing everything else, split words (punctuation becomes its own
token), optionally drop stop words, and finally cut words into WordPieces.

Run:  python demos/01_preprocess_passage.py
"""

from qgen.preprocess import (
    GazetteerTagger,
    default_data_path,
    load_stopwords,
    preprocess_pair,
    remove_stopwords,
    replace_with_indexed_tags,
    split_words,
    tag_entities,
)
from qgen.wordpiece import load_vocabulary, tokenize

PASSAGE = (
    "Super Bowl 50 was an American football game to determine the champion of the National "
    "Football League (NFL) for the 2015 season. The American Football Conference (AFC) champion "
    "Denver Broncos defeated the National Football Conference (NFC) champion Carolina Panthers "
    "24–10 to earn their third Super Bowl title. The game was played on February 7, 2016, at "
    "Levi's Stadium in the San Francisco Bay Area at Santa Clara, California. As this was the 50th "
    "Super Bowl, the league emphasized the \"golden anniversary\" with various gold-themed "
    "initiatives, as well as temporarily suspending the tradition of naming each Super Bowl game "
    "with Roman numerals (under which the game would have been known as \"Super Bowl L\"), so that "
    "the logo could prominently feature the Arabic numerals 50."
)

ANSWER = "Denver Broncos"


def main():
    vocab = load_vocabulary(default_data_path("vocab.txt"))
    tagger = GazetteerTagger.from_tsv(default_data_path("gazetteer.tsv"))
    stoplist = load_stopwords(default_data_path("stopwords.txt"))

    print("== raw passage ==")
    print(PASSAGE[:160] + " ...\n")

    spans = tag_entities(PASSAGE, tagger)
    print(f"== {len(spans)} entity spans (first 8) ==")
    for s in spans[:8]:
        print(f"  [{s.start:4d},{s.end:4d})  {s.tag:<8} {s.surface!r}")
    print()

    tagged = replace_with_indexed_tags(PASSAGE, spans)
    print("== indexed tags substituted, rest lowercased ==")
    print(tagged.text[:160] + " ...\n")

    print("== entity index map ==")
    for tag, forms in tagged.entity_map.items():
        print(f"  {tag:<9} " + "; ".join(f"{i}={f!r}" for i, f in enumerate(forms)))
    print()

    words = split_words(tagged.text)
    pieces = [t for w in words for t in tokenize(w, vocab).tokens]
    print("== word-split + WordPiece, stop words retained ==")
    print(" ".join(pieces)[:300] + " ...")
    print("  note 'suspend ##ing' and 'nu ##meral ##s' above\n")

    kept = remove_stopwords(words, stoplist)
    print(f"== stop-word removal: {len(words)} -> {len(kept)} words ==")
    print(" ".join(kept)[:200] + " ...\n")

    seq, _ = preprocess_pair(ANSWER, PASSAGE, tagger, stoplist, vocab)
    print(f"== model input for answer {ANSWER!r} ==")
    print(" ".join(seq.tokens)[:200] + " ...")
    print(f"  ({len(seq.ids)} token ids; the '*' separates answer from passage)")


if __name__ == "__main__":
    main()
