"""Gradient-aligned adversarial subspace (GAAS) diagnostic on a small trained ensemble.

Each input is pushed along k orthogonal directions built from rows of a
regular Hadamard matrix, signed to agree with the loss gradient. The curve
P(at least j directions succeed) summarises how large the adversarial
subspace around the data is.
"""

import numpy as np

from divtrain import TrainConfig, build_ensemble, gaas_evaluate, parse_spec, regular_hadamard, train
from divtrain.datasets import AugmentConfig, synth_blobs
from divtrain.gaas import is_regular_hadamard

for k in (4, 16, 36, 64):
    h = regular_hadamard(k)
    print(f"order {k}: regular Hadamard {is_regular_hadamard(h)}, row sums {set(h.sum(axis=1).tolist())}")

data = synth_blobs(3, 40, dims=(1, 8, 8), seed=2)
idx = np.arange(len(data))
tr, te = data.subset(idx % 4 != 0, "train"), data.subset(idx % 4 == 0, "test")
spec = parse_spec("C4-M-FC16-FC3", (1, 8, 8))
ens, _ = train(build_ensemble([spec] * 3, [0, 1, 2]), tr,
               TrainConfig(epochs=4, batch_size=16, learning_rate=0.01, augment=AugmentConfig(max_shift=0)))

report = gaas_evaluate(ens, te.images, te.labels, orders=[16], epsilons=[0.1, 0.3, 0.5])
for eps, k in report.settings():
    curve = report.curve(eps, k)
    print(f"eps={eps}: P(>=1)={curve[0]:.2f}  P(>=k/2)={curve[k // 2 - 1]:.2f}  P(>=k)={curve[-1]:.2f}")
