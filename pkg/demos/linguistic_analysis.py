"""
What kinds of words matter?
===========================

Compare each category's share of tokens with its share of importance, for
POS tags and for alignment fertility, then ask a regression tree which
annotation explains importance best. The toy generator supplies exact gold
annotations, so no tagger or aligner is needed.
"""

import numpy as np
import torch

from wordimportance import testbed
from wordimportance.analysis import (fertility_distribution, length_normalize, pos_distribution, token_features,
                                     tree_correlation)
from wordimportance.annotations import POS, fertility_from_alignment
from wordimportance.attribution import integrated_gradients, word_importance
from wordimportance.data import Vocab, make_pair, strip_hypothesis
from wordimportance.seqmodel import TrainConfig, greedy_batch, train

torch.set_num_threads(1)

examples = testbed.toy_language(1300, seed=0)
vocab = Vocab.build([e.source for e in examples] + [e.target for e in examples])
pairs = [make_pair(e.source, e.target, vocab) for e in examples]
model = train(pairs[:1000], TrainConfig(steps=800, seed=0), vocab)

test, gold = pairs[1000:], examples[1000:]
hyps = greedy_batch(model, [model.embed(p.source) for p in test], 40)
importance = [word_importance(integrated_gradients(model, p.with_target(strip_hypothesis(h)), 50)).values
              for p, h in zip(test, hyps)]

tags = [[POS.normalize(t) for t in e.pos] for e in gold]
fert = [fertility_from_alignment(e.alignment, len(e.source), len(e.target))[1] for e in gold]

for title, rows in (("POS", pos_distribution(importance, tags)), ("fertility", fertility_distribution(importance, fert))):
    print(f"\n{title:>20s}  count  attri  delta")
    for r in rows:
        print("{:>20s}  {:>5s}  {:>5s}  {}".format(*r.cells()))

# %% one row per token; the target is length-normalised importance
X, names, groups = token_features([t for s in tags for t in s], [f for s in fert for f in s],
                                  [d for e in gold for d in e.depth])
y = np.concatenate([length_normalize(v) for v in importance])
tc = tree_correlation(X, y, names, groups=groups)
print()
for group in groups:
    print(f"{group:>10s} {tc.group_share(group):.3f}")
