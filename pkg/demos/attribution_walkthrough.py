"""
Attributing a translation to its source words
==============================================

Train a small GRU translator on the synthetic toy language, translate one
held-out sentence, and break each output score down over the input words.
Runs in about a minute on one CPU core.
"""

import numpy as np
import torch

from wordimportance import testbed
from wordimportance.attribution import (completeness_gap, integrated_gradients, integrated_gradients_embedded,
                                        word_importance)
from wordimportance.data import Vocab, make_pair, strip_hypothesis
from wordimportance.seqmodel import TrainConfig, decode, train

torch.set_num_threads(1)
np.set_printoptions(precision=3, suppress=True)

# toy corpus: every word has a POS tag, an alignment and a fixed fertility
examples = testbed.toy_language(1200, seed=0)
vocab = Vocab.build([e.source for e in examples] + [e.target for e in examples])
pairs = [make_pair(e.source, e.target, vocab) for e in examples]
model = train(pairs[:1000], TrainConfig(steps=800, seed=0), vocab)

ex = examples[1000]
hyp = strip_hypothesis(decode(model, pairs[1000].source))
pair = pairs[1000].with_target(hyp)
print("source    :", " ".join(ex.source))
print("reference :", " ".join(ex.target))
print("output    :", " ".join(vocab.decode(hyp)))

# %% contribution matrix, rows are input words and columns output words
cm = integrated_gradients(model, pair, steps=300)
print("\ncontributions (M x N):")
print(cm.values)

# row sums through a softmax give one importance per input word
iv = word_importance(cm)
for word, tag, score in sorted(zip(ex.source, ex.pos, iv.values), key=lambda t: -t[2]):
    print(f"  {word:>10s} {tag:>6s} {score:.3f}")

# %% how the path sum converges: the residual is the gap between the summed
# attributions and the score difference from the all-zero input
emb = model.embed(pair.source)
for steps in (1, 3, 10, 30, 100, 300):
    ig = integrated_gradients_embedded(model, emb, pair.target, steps)
    gap = np.abs(completeness_gap(model, emb, pair.target, ig)).max()
    print(f"S={steps:4d}  worst residual {gap:.2e}")
