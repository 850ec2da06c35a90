#!/usr/bin/env python3
"""Regenerate crates/cli/tests/fixtures/metrics.tsv from reference implementations.

BLEU comes from nltk, ROUGE-L from rouge_score, and statement edit distance
from a textbook Levenshtein table. Every candidate has at least four tokens,
so nltk's sentence smoothing (method2) lines up with ours.
"""

import sys
from pathlib import Path

from nltk.translate.bleu_score import SmoothingFunction, corpus_bleu, sentence_bleu
from rouge_score import rouge_scorer

PAIRS = """\
montag dienstag wechselhaft mal auch die sonne | montag dienstag wechselhaft mal auch sonne
heute nacht regen im norden | heute nacht norden regen
morgen sonne scheinen viel warm | morgen sonne viel warm
the cat sat on the mat | the cat is on the mat
the the the the the the | the cat is on the mat
a b c d e f g h | a b c d e f g h
a b c d | e f g h
wind stark nordwest kommen heute | heute wind nordwest stark
temperatur morgen zehn bis fuenfzehn grad | morgen temperatur zehn bis fuenfzehn grad
im sueden gewitter moeglich abend | sueden abend gewitter moeglich
x y x y x y x | x y x y
one two three four five six seven | one two three four
alpha beta gamma delta | alpha beta gamma delta epsilon zeta eta theta
rain rain rain sun sun sun | rain sun rain sun rain sun
hier oben nebel dicht morgens | nebel morgens hier dicht
p q r s t | t s r q p
kalt sehr kalt frost nacht | nacht frost sehr kalt
wolken viel regen wenig | wolken viel regen wenig
neu schnee alpen bis zwanzig zentimeter | alpen neu schnee zwanzig zentimeter
a a b b c c d d | a b c d a b c d
wetter morgen wie heute bleiben | morgen wetter wie heute
osten trocken westen nass bleiben | westen nass osten trocken
the quick brown fox jumps | the quick brown dog jumps over
m n o p q r s t u v | m n o q r s t u v w
sonne wolke sonne wolke sonne | sonne sonne sonne wolke wolke
luft feucht warm schwuel abend | abend schwuel warm
kommen woche mehr sonne weniger regen | woche kommen sonne mehr regen weniger
one one two two three three four | one two three four
berg tal berg tal berg | tal berg tal berg tal
freitag samstag sonntag regen | freitag samstag sonntag sonne
a b a b a b a b | b a b a b a b a
maximal dreissig grad sued | sued maximal dreissig grad heiss
gewitter hagel moeglich einzeln | einzeln gewitter hagel moeglich
k l m n o p | k l m n o p q r s
nord nord ost wind schwach | wind schwach nord ost
dann spaeter regen auch schnee | spaeter regen schnee auch
one two three four five | five four three two one
heute abend klar sterne sehen | abend klar heute
nebel bis mittag dann sonne | nebel mittag sonne
s1 s2 s3 s4 s5 s6 s7 s8 s9 | s1 s3 s5 s7 s9
glatt eis strasse vorsicht nacht | nacht strasse glatt eis vorsicht
druck hoch stabil bleiben lang | hoch druck lang stabil
u v w x y z | u v w x y z u v w
mild feucht westen regen schauer | westen mild regen schauer
c a t c a t | c a t
rhein mosel nebel dicht zaeh | nebel rhein mosel zaeh
z y x w v u t | t u v w x y z
frueh kalt spaeter mild angenehm | frueh kalt mild spaeter
mo di mi do fr sa so | mo di mi do fr
regen regen regen regen | regen schnee regen schnee
"""

PROGRAMS = """\
COPY; COPY; COPY; COPY; COPY; COPY; DEL; COPY; SKIP | FOR(6) COPY; DEL; COPY; SKIP
FOR(6) COPY; DEL; COPY; SKIP | FOR(6) COPY; DEL; COPY; SKIP
COPY; ADD(x); SKIP | COPY; DEL; SKIP
ADD(a); ADD(b); SKIP | SKIP
SKIP | ADD(a); ADD(b); SKIP
FOR(2) DEL; COPY; SKIP | DEL; DEL; COPY; SKIP
COPY; DEL; ADD(y); COPY; SKIP | COPY; ADD(y); DEL; COPY; SKIP
FOR(3) COPY; SKIP | FOR(4) COPY; SKIP
DEL; DEL; DEL; SKIP | COPY; COPY; COPY; SKIP
ADD(q); COPY; FOR(2) DEL; ADD(r); SKIP | COPY; ADD(q); FOR(2) DEL; SKIP
"""


def pairs():
    out = []
    for line in PAIRS.strip().splitlines():
        c, r = (s.split() for s in line.split("|"))
        assert len(c) >= 4 and len(r) >= 1
        out.append((c, r))
    return out


def levenshtein(a, b):
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def statements(program):
    return [s.strip() for s in program.split(";")]


class Whitespace:
    def tokenize(self, text):
        return text.split()


def main():
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "crates/cli/tests/fixtures/metrics.tsv"
    ps = pairs()
    assert len(ps) == 50
    weights = [(1.0,), (0.5, 0.5), (1 / 3, 1 / 3, 1 / 3), (0.25, 0.25, 0.25, 0.25)]
    scorer = rouge_scorer.RougeScorer(["rougeL"], tokenizer=Whitespace())
    smooth = SmoothingFunction().method2
    lines = ["# regenerate with scripts/metric_fixture.py"]
    rouge = []
    for c, r in ps:
        s = sentence_bleu([r], c, smoothing_function=smooth)
        f = scorer.score(" ".join(r), " ".join(c))["rougeL"].fmeasure
        rouge.append(f)
        lines.append(f"pair\t{' '.join(c)}\t{' '.join(r)}\t{s:.15f}\t{f:.15f}")
    for lo, hi in [(0, 50)] + [(i, i + 10) for i in range(0, 50, 10)]:
        refs = [[r] for _, r in ps[lo:hi]]
        cands = [c for c, _ in ps[lo:hi]]
        bleus = [corpus_bleu(refs, cands, weights=w) for w in weights]
        mean_rouge = sum(rouge[lo:hi]) / (hi - lo)
        lines.append(f"corpus\t{lo}\t{hi}\t" + "\t".join(f"{b:.15f}" for b in bleus) + f"\t{mean_rouge:.15f}")
    for line in PROGRAMS.strip().splitlines():
        p, q = (s.strip() for s in line.split("|"))
        lines.append(f"per\t{p}\t{q}\t{levenshtein(statements(p), statements(q))}\t{len(statements(q))}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
