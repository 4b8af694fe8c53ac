"""
Bag-of-words documents
======================

Documents become log(1 + count) vectors over the most frequent non-stop
words. A synthetic topic corpus stands in for a newswire collection.
"""
import numpy as np

from dropnet import BowVocab, RandomSource, bow_vectorize, split, standardize
from dropnet.config import load_config
from dropnet.data import corpus_dataset, synthetic_corpus
from dropnet.trainer import train

labels, texts = synthetic_corpus(RandomSource(0), 1200, n_classes=5, vocab_size=400, doc_length=30)
vocab = BowVocab.build(texts, size=200)
print(f"vocabulary of {len(vocab)}, most frequent: {vocab.tokens[:5]}")

# %%
counts = {"w0001": 0, "w0002": 1, "w0003": 5}
print("log(1+C) features:", {t: round(bow_vectorize(counts, vocab)[vocab.index[t]], 4)
                             for t in counts if t in vocab.index})

# %%
ds = corpus_dataset(labels, texts, vocab)
train_ds, test_ds = split(ds, 0.75, RandomSource(1))
(train_ds, test_ds), _, _ = standardize(train_ds, test_ds)

cfg = load_config(None, {"network.input_shape": "200", "network.layers": "100 5", "network.init_sd": "0.05",
                         "optimizer.eps0": "0.5", "optimizer.T": "20", "epochs": "20",
                         "trainer.record_wallclock": "false"})
_, rows = train(cfg, train_ds, test_ds)
print(f"test error after {len(rows)} epochs: {100 * rows[-1].test_err:.1f}%"
      f" (chance is {100 * (1 - 1 / 5):.0f}%)")
