"""Inspect input-gradient alignment directly: cosine similarities, coherence and GAL.

Builds a small ensemble, extracts each member's input gradient on one batch,
and shows how the smooth GAL sits between coherence and coherence + ln(pairs).
Then it checks that duplicated members are perfectly aligned.
"""

import math

import numpy as np

from divtrain import build_ensemble, coherence, gal, input_gradients, pairwise_similarities, parse_spec
from divtrain.models import Ensemble, Member

rng = np.random.default_rng(0)
spec = parse_spec("C4-M-FC16-FC10", (1, 8, 8))
ens = build_ensemble([spec] * 4, [0, 1, 2, 3])
x = rng.uniform(0, 1, size=(16, 1, 8, 8))
y = rng.integers(0, 10, size=16)

g = input_gradients(ens, x, y)
sims = [float(s.data) for s in pairwise_similarities(g)]
coh, loss = coherence(g), float(gal(g).data)
pairs = math.comb(4, 2)
print("pairwise batch-mean cosine similarities:", np.round(sims, 4))
print(f"coherence {coh:.4f} <= GAL {loss:.4f} <= {coh + math.log(pairs):.4f}")

m = ens.members[0]
twins = Ensemble([m, Member(spec, dict(m.params))])
print("coherence of two identical members:", round(coherence(input_gradients(twins, x, y)), 12))
