"""Encode event titles and see what the character path buys on typos.

Titles are tokenized into words, each word embedded twice (a word
vector plus a character CNN over its spelling), and the sequence run
through a bidirectional LSTM.  Even with random weights the character
n-gram features keep a misspelled word near its clean form.  With the
character path ablated an out-of-vocabulary word is just the unknown
token: a lone typo encodes to the zero vector, indistinguishable from
any other unknown word.

Run from the repository root:

    python3 demos/title_encoder.py
"""

import numpy as np

from nesa import layers as ly
from nesa import model as md
from nesa.evaluate import nearest_titles

VOCAB = ["budget", "review", "standup", "sync", "team", "weekly", "with"]
USERS = ["dana"]
TITLES = ["weekly standup", "team sync", "budget review"]


def main() -> None:
    rng = np.random.default_rng(11)
    print("tokens:", {t: ly.tokenize(t) for t in ("weekly standupp",
                                                  "budget review")})

    # Character n-gram features alone already pull the typo toward its
    # source word.
    cnn = ly.CharCnnParams.create(rng=rng)
    corpus = [(w, ly.char_cnn_word(w, cnn).data)
              for w in ("standup", "xylophone", "budget")]
    print(f"\ncharacter CNN features ({cnn.out_dim} dims), "
          "neighbors of 'standupp':")
    query = ly.char_cnn_word("standupp", cnn).data
    for word, sim in nearest_titles(query, corpus, k=3):
        print(f"  {sim:+.3f}  {word!r}")

    # The full encoder keeps that robustness for whole titles.
    params = md.NesaParams.create(md.TINY_CONFIG, VOCAB, USERS,
                                  rng=np.random.default_rng(11))
    encoded = [(t, md.encode_title(t, params).data) for t in TITLES]
    print("\nfull title encoder, neighbors of 'weekly standupp':")
    query = md.encode_title("weekly standupp", params).data
    for title, sim in nearest_titles(query, encoded, k=3):
        print(f"  {sim:+.3f}  {title!r}")

    # Ablate the character path and a lone out-of-vocabulary word has
    # nothing left to encode.
    blind = md.NesaParams.create(md.TINY_CONFIG.with_ablation(("char_emb",)),
                                 VOCAB, USERS, rng=np.random.default_rng(11))
    typo = md.encode_title("standupp", blind).data
    other = md.encode_title("xylophone", blind).data
    print("\nwithout the character path:")
    print(f"  |encode('standupp')| = {np.linalg.norm(typo):.3f}, "
          f"|encode('xylophone')| = {np.linalg.norm(other):.3f}, "
          f"identical: {np.array_equal(typo, other)}")


if __name__ == "__main__":
    main()
