"""Exact keypad decoding with a certificate.

"gone", "good", "home" and "hood" all type as 4663. Given three such
tokens, the decoder finds the sentence a trigram model likes best. The
initial proposal bounds every word by its best conditional anywhere
(an order-1 optimistic weight); each rejected Viterbi path pulls one
context out to a deeper order until the bound at the winning path is
exact, which certifies the argmax over all 64 candidate sentences.
"""

import itertools
import os

from osstar import engine
from osstar.engine import Mode, StopConfig
from osstar.ngram import MaxBackoffTables, build_lattice, load_arpa, \
    load_vocab
from osstar.automaton import AutomatonRefiner, HmmTarget, build_q0, \
    report_ngram_counts

DATA = os.path.join(os.path.dirname(__file__), "data")


def read(name):
    with open(os.path.join(DATA, name), encoding="utf-8") as fh:
        return fh.read()


lm = load_arpa(read("keypad4663.arpa"))
vocab = load_vocab(read("keypad4663.vocab"))
obs = ["4663", "4663", "4663"]

lattice = build_lattice(obs, vocab)
q = build_q0(lattice, MaxBackoffTables(lm))
target = HmmTarget(lm, lattice)

print(f"observations: {' '.join(obs)}")
print(f"candidates per position: {[len(c) for c in lattice.candidates]}")
print(f"initial bound mass (log): {q.mass_log():.4f}")

res = engine.run(Mode.OPTIMIZATION, target, q, AutomatonRefiner(),
                 StopConfig(max_trials=1000), seed=0)

print(f"\ndecoded: {' '.join(res.argmax)}")
print(f"log probability: {target(res.argmax):.4f}")
print(f"certificate gap (log): {res.certificate_gap_log}")
print(f"trials: {res.history.trial_count}, "
      f"refinements: {res.history.refine_count}")

# the certificate is checkable by brute force here: 4^3 = 64 sentences
best = max(itertools.product(vocab, repeat=3), key=target)
assert target(best) == target(res.argmax)
print(f"brute force over 64 sentences agrees: {' '.join(best)}")

counts = report_ngram_counts(q)
print(f"bound contexts per order at the end: {counts}")
print(f"final bound mass (log): {q.mass_log():.4f}")
