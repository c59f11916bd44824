"""Score question pairs with word-level edit distance and print the corpus
report: distance distribution, exact matches, first words, length histograms.

Run:  python demos/03_evaluate_wer.py
"""

from qgen.evaluation import corpus_report, question_distance

PAIRS = [
    ("q01", "where was PERSON 8 born?", "where was PERSON 8 born?"),
    ("q02", "how many museums are in GPE 0?", "how many museums are in GPE 0?"),
    ("q03", "what is the largest city of GPE 1?", "what is the largest area of GPE 1?"),
    ("q04", "where did PERSON 2 die?", "when did PERSON 2 die?"),
    ("q05", "where is ORG 0 based?", "where is ORG 0 located?"),
    ("q06", "who is the president of GPE 3?", "who was the president of GPE 3?"),
    ("q07", "when did the launches of boilerplate csms occur in orbit?",
            "when was the ORDINAL 0 satellite launched?"),
    ("q08", "by what means were scientists able to liquefy air?",
            "what is the name of the process of water?"),
    ("q09", "what type of engines became popular for power generation after piston steam engines?",
            "what type of electric motors have?"),
    ("q10", "what was an example of a type of warship that required high speed?",
            "what was the name of the NORP 0 ships?"),
]


def main():
    print("per-pair alignments (S=substitutions D=deletions I=insertions C=correct):")
    for qid, ref, hyp in PAIRS:
        a = question_distance(ref, hyp)
        print(f"  {qid}  distance {a.distance:2d}  "
              f"S={a.substitutions} D={a.deletions} I={a.insertions} C={a.correct}  "
              f"normalized {a.distance / a.ref_len:.2f}")
        print(f"       ref: {ref}")
        print(f"       hyp: {hyp}")
    print()
    report = corpus_report(PAIRS)
    print(report.to_text())


if __name__ == "__main__":
    main()
