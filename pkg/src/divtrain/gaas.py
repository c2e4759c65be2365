"""Gradient-aligned adversarial subspace (GAAS) analysis.

For an input with loss gradient g, the rows of a regular Hadamard matrix of
order k, multiplied elementwise by sign(g), give k mutually orthogonal
perturbations that all have a positive inner product with g. Counting how
many of them flip the ensemble's prediction estimates how many independent
adversarial directions exist around the input.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import numpy as np

from .attacks import loss_gradient
from .models import Ensemble, ensemble_predict

SUPPORTED_ORDERS = (4, 16, 36, 64)

_H4 = np.array([[1, 1, 1, -1], [1, 1, -1, 1], [1, -1, 1, 1], [-1, 1, 1, 1]], dtype=np.int64)


@lru_cache(maxsize=None)
def _bundled_order36() -> np.ndarray:
    text = resources.files("divtrain.data").joinpath("hadamard36.txt").read_text()
    rows = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    return np.array([[1 if ch == "+" else -1 for ch in row] for row in rows], dtype=np.int64)


def regular_hadamard(order: int) -> np.ndarray:
    """A +-1 matrix H with H @ H.T == order * I and all row sums equal.

    Orders 16 and 64 are Kronecker powers of the order-4 matrix; order 36 is
    read from the bundled data file.
    """
    if order == 4:
        return _H4.copy()
    if order == 16:
        return np.kron(_H4, _H4)
    if order == 64:
        return np.kron(_H4, np.kron(_H4, _H4))
    if order == 36:
        return _bundled_order36().copy()
    raise ValueError(f"unsupported Hadamard order {order}; supported orders are {SUPPORTED_ORDERS}")


def is_regular_hadamard(h: np.ndarray) -> bool:
    h = np.asarray(h)
    k = h.shape[0]
    if h.shape != (k, k) or not np.all(np.abs(h) == 1):
        return False
    gram = h.astype(np.int64) @ h.T.astype(np.int64)
    sums = h.sum(axis=1)
    return bool(np.array_equal(gram, k * np.eye(k, dtype=np.int64)) and np.all(sums == sums[0]))


def gaas_directions(gradient, h: np.ndarray, epsilon: float) -> np.ndarray:
    """k perturbations (k, d): ``epsilon * H[i, j mod k] * sign(gradient[j])``.

    When d is not a multiple of k the Hadamard rows are tiled cyclically, so
    orthogonality is exact only on the first ``d - d % k`` coordinates.
    """
    g = np.asarray(gradient, dtype=np.float64).reshape(-1)
    k = h.shape[0]
    if k > g.size:
        raise ValueError(f"Hadamard order {k} exceeds input dimension {g.size}")
    tiled = np.asarray(h, dtype=np.float64)[:, np.arange(g.size) % k]
    return epsilon * tiled * np.sign(g)[None, :]


@dataclass
class GaasReport:
    """Per-input success counts and the derived curves P(count >= j), j = 1..k."""

    records: list[tuple[int, float, int, int]] = field(default_factory=list)  # input_id, eps, order, count

    def counts(self, epsilon: float, order: int) -> np.ndarray:
        return np.array([c for _, e, k, c in self.records if e == epsilon and k == order], dtype=np.int64)

    def settings(self) -> list[tuple[float, int]]:
        seen = []
        for _, e, k, _ in self.records:
            if (e, k) not in seen:
                seen.append((e, k))
        return seen

    def curve(self, epsilon: float, order: int) -> np.ndarray:
        """Entry j-1 is the fraction of inputs with at least j successful directions."""
        counts = self.counts(epsilon, order)
        if counts.size == 0:
            return np.zeros(order)
        return np.array([np.mean(counts >= j) for j in range(1, order + 1)])

    def summary_rows(self) -> list[tuple[float, int, int, float]]:
        rows = []
        for e, k in self.settings():
            for j, p in enumerate(self.curve(e, k), start=1):
                rows.append((e, k, j, float(p)))
        return rows


def gaas_evaluate(ens: Ensemble, images, labels, orders, epsilons, correct_only: bool = False,
                  group: int = 32) -> GaasReport:
    """Count successful gradient-aligned Hadamard directions for every input.

    The direction for each input comes from the ensemble's own mean
    cross-entropy gradient. Perturbed inputs are clipped to [0, 1]; a
    direction succeeds when the ensemble prediction differs from the label.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.shape[0] == 0:
        raise ValueError("gaas_evaluate: empty dataset")
    ids = np.arange(images.shape[0])
    if correct_only:
        keep = ensemble_predict(ens, images) == labels
        ids, images, labels = ids[keep], images[keep], labels[keep]
    hs = {k: regular_hadamard(k) for k in orders}
    grads = loss_gradient(ens, images, labels).reshape(images.shape[0], -1)
    d = grads.shape[1]
    report = GaasReport()
    for eps in epsilons:
        for k in orders:
            h = hs[k]
            if k > d:
                raise ValueError(f"Hadamard order {k} exceeds input dimension {d}")
            tiled = h.astype(np.float64)[:, np.arange(d) % k]
            for start in range(0, images.shape[0], group):
                sl = slice(start, start + group)
                x = images[sl].reshape(-1, d)
                signs = np.sign(grads[sl])
                pert = x[:, None, :] + eps * tiled[None, :, :] * signs[:, None, :]
                pert = np.clip(pert, 0.0, 1.0).reshape((-1,) + images.shape[1:])
                pred = ensemble_predict(ens, pert).reshape(-1, k)
                succ = (pred != labels[sl, None]).sum(axis=1)
                for i, c in zip(ids[sl], succ):
                    report.records.append((int(i), float(eps), int(k), int(c)))
    return report
