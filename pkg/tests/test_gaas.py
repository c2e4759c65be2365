import itertools

import numpy as np
import pytest
from scipy.linalg import hadamard as sylvester

from divtrain.attacks import loss_gradient
from divtrain.gaas import (SUPPORTED_ORDERS, GaasReport, gaas_directions, gaas_evaluate, is_regular_hadamard,
                           regular_hadamard)
from divtrain.models import build_ensemble, ensemble_predict, parse_spec


class TestHadamard:
    @pytest.mark.parametrize("k", SUPPORTED_ORDERS)
    def test_orthogonal_and_regular(self, k):
        h = regular_hadamard(k)
        assert h.dtype.kind == "i"
        assert set(np.unique(h)) == {-1, 1}
        np.testing.assert_array_equal(h @ h.T, k * np.eye(k, dtype=np.int64))
        sums = h.sum(axis=1)
        assert np.all(sums == sums[0])
        # regular Hadamard row sums are +-sqrt(k)
        assert abs(sums[0]) == int(np.sqrt(k))
        assert is_regular_hadamard(h)

    def test_order36_row_products_by_hand(self):
        h = regular_hadamard(36)
        for a, b in itertools.combinations(range(36), 2):
            assert sum(int(x) * int(y) for x, y in zip(h[a], h[b])) == 0

    def test_sylvester_is_not_regular(self):
        assert not is_regular_hadamard(sylvester(16))

    @pytest.mark.parametrize("k", [2, 8, 12, 25, 32])
    def test_unsupported(self, k):
        with pytest.raises(ValueError, match="supported orders"):
            regular_hadamard(k)


class TestDirections:
    @pytest.mark.parametrize("k", [4, 16])
    def test_exact_orthogonality_when_divisible(self, k):
        g = np.random.default_rng(0).normal(size=784)
        d = gaas_directions(g, regular_hadamard(k), 0.1)
        assert d.shape == (k, 784)
        np.testing.assert_allclose(d @ d.T, 0.01 * 784 * np.eye(k), atol=1e-12)
        np.testing.assert_allclose(np.abs(d), 0.1)

    @pytest.mark.parametrize("k", [36, 64])
    def test_bounded_remainder_otherwise(self, k):
        g = np.random.default_rng(1).normal(size=784)
        d = gaas_directions(g, regular_hadamard(k), 1.0)
        gram = d @ d.T
        off = gram - np.diag(np.diag(gram))
        assert np.abs(off).max() <= 784 % k

    def test_aligned_with_gradient(self):
        g = np.random.default_rng(2).normal(size=64)
        d = gaas_directions(g, regular_hadamard(16), 0.2)
        h = regular_hadamard(16)
        # inner product with sign(g) equals eps * (tiled row sum)
        np.testing.assert_allclose(d @ np.sign(g), 0.2 * 4 * h.sum(axis=1))

    def test_order_larger_than_input(self):
        with pytest.raises(ValueError, match="exceeds"):
            gaas_directions(np.ones(10), regular_hadamard(16), 0.1)


@pytest.fixture(scope="module")
def setup():
    spec = parse_spec("C2-M-FC5", (1, 8, 8))
    ens = build_ensemble([spec, spec], [0, 1])
    rng = np.random.default_rng(3)
    return ens, rng.uniform(size=(20, 1, 8, 8)), rng.integers(0, 5, 20)


class TestReport:
    def test_curve_is_tail_probability(self):
        rep = GaasReport([(0, 0.1, 4, 0), (1, 0.1, 4, 2), (2, 0.1, 4, 4), (3, 0.1, 4, 1)])
        np.testing.assert_allclose(rep.curve(0.1, 4), [0.75, 0.5, 0.25, 0.25])
        assert len(rep.summary_rows()) == 4

    def test_zero_epsilon_counts_misclassified_only(self, setup):
        ens, x, y = setup
        rep = gaas_evaluate(ens, x, y, [4], [0.0], correct_only=True)
        assert np.all(rep.curve(0.0, 4) == 0.0)

    def test_grid_and_monotone(self, setup):
        ens, x, y = setup
        rep = gaas_evaluate(ens, x, y, [4, 16, 64], [0.03, 0.06, 0.09])
        assert len(rep.settings()) == 9
        for e, k in rep.settings():
            c = rep.curve(e, k)
            assert np.all(np.diff(c) <= 0)
            assert c.shape == (k,)

    def test_counts_agree_with_direct_evaluation(self, setup):
        ens, x, y = setup
        rep = gaas_evaluate(ens, x[:3], y[:3], [4], [0.2])
        g = loss_gradient(ens, x[:3], y[:3]).reshape(3, -1)
        for i in range(3):
            d = gaas_directions(g[i], regular_hadamard(4), 0.2)
            pert = np.clip(x[i].reshape(1, -1) + d, 0, 1).reshape(4, 1, 8, 8)
            assert rep.counts(0.2, 4)[i] == int(np.sum(ensemble_predict(ens, pert) != y[i]))

    def test_empty_dataset(self, setup):
        ens = setup[0]
        with pytest.raises(ValueError, match="empty"):
            gaas_evaluate(ens, np.zeros((0, 1, 8, 8)), np.zeros(0, dtype=int), [4], [0.1])
