"""
Which estimator finds the words the model relies on?
=====================================================

Mask the k highest-ranked words of every test sentence and re-translate.
The faster BLEU falls, the better the ranking. A scaled-down version of the
acceptance run: 100 test sentences and 50 integration steps.
"""

import torch

from wordimportance import testbed
from wordimportance.data import Vocab, make_pair, strip_hypothesis
from wordimportance.estimators import Method
from wordimportance.evalharness import PerturbationSpec, TestItem, relative_decline, run_curve
from wordimportance.seqmodel import TrainConfig, greedy_batch, train

torch.set_num_threads(1)

examples = testbed.toy_language(1100, seed=0)
vocab = Vocab.build([e.source for e in examples] + [e.target for e in examples])
pairs = [make_pair(e.source, e.target, vocab) for e in examples]
model = train(pairs[:1000], TrainConfig(steps=800, seed=0), vocab)

test = pairs[1000:]
hyps = greedy_batch(model, [model.embed(p.source) for p in test], 40)
items = [TestItem(p.with_target(strip_hypothesis(h)), e.target, e.pos)
         for p, h, e in zip(test, hyps, examples[1000:])]

curves = []
for i, method in enumerate(Method):
    spec = PerturbationSpec("mask", method, k_max=4, seed=i, steps=50, repeats=3 if method.stochastic else 1)
    curves.append(run_curve(model, items, spec))

print(f"{'estimator':>12s} " + " ".join(f"k={k:<5d}" for k in range(5)) + " decline")
for c in curves:
    print(f"{c.estimator.value:>12s} " + " ".join(f"{c.mean(k):6.2f}" for k in range(5))
          + f"  {relative_decline(c):.1%}")
