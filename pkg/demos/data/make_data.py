"""Regenerate the committed demo fixtures.

Uses the corpus helpers from tests/, so run it from the repo root:
    python3 demos/data/make_data.py
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "..",
                                "tests"))

from lm_fixtures import cluster_vocab, markov_corpus, train_arpa  # noqa: E402
from osstar.graphical import ising_grid  # noqa: E402
from osstar.ngram import keypad_encode  # noqa: E402

HERE = os.path.dirname(os.path.abspath(__file__))


def write(name: str, text: str) -> None:
    path = os.path.join(HERE, name)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    print(f"wrote {path}")


def main() -> None:
    # four words that all type as 4663 on a keypad, trigram model
    vocab = ["gone", "good", "home", "hood"]
    assert all(keypad_encode(w) == "4663" for w in vocab)
    rng = np.random.default_rng(7)
    corpus = markov_corpus(rng, vocab, 80, 3)
    write("keypad4663.arpa", train_arpa(corpus, 3, vocab))
    write("keypad4663.vocab", "\n".join(vocab) + "\n")

    # 24-word vocabulary in six keypad clusters, order-5 model
    rng = np.random.default_rng(12)
    vocab = cluster_vocab(rng, 6, 4)
    corpus = markov_corpus(rng, vocab, 240, 6, sharpness=6.0)
    write("sms24.arpa", train_arpa(corpus, 5, vocab))
    write("sms24.vocab", "\n".join(vocab) + "\n")
    sent = corpus[3]
    write("sms24.obs", " ".join(keypad_encode(w) for w in sent) + "\n")
    print(f"sms24 sample sentence: {' '.join(sent)}")

    write("ising_4x4.json", ising_grid(4, 4, sigma=1.2, seed=3).to_json()
          + "\n")


if __name__ == "__main__":
    main()
