import numpy as np
import pytest

from divtrain.attacks import AttackConfig
from divtrain.checkpoint import dumps
from divtrain.datasets import AugmentConfig, synth_blobs
from divtrain.models import accuracy, build_ensemble, parse_spec
from divtrain.train import (RECIPES, AdamState, TrainConfig, TrainingDiverged, adam_step, evaluate_transfer,
                            train)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        state = AdamState()
        p = {"w": np.array([1.0, -2.0])}
        out = adam_step(p, {"w": np.zeros(2)}, state, 0.1)
        np.testing.assert_array_equal(out["w"], p["w"])
        assert state.step == 1

    def test_first_step_closed_form(self):
        # m_hat = g, v_hat = g^2 after bias correction -> step lr * g / (|g| + eps)
        g = np.array([0.5, -3.0, 1e-3])
        out = adam_step({"w": np.zeros(3)}, {"w": g}, AdamState(), 0.01)
        np.testing.assert_allclose(out["w"], -0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_second_step_by_hand(self):
        state = AdamState()
        p = {"w": np.array([0.0])}
        g1, g2 = 2.0, -1.0
        p = adam_step(p, {"w": np.array([g1])}, state, 0.1)
        p = adam_step(p, {"w": np.array([g2])}, state, 0.1)
        m = (0.9 * 0.1 * g1 + 0.1 * g2) / (1 - 0.9**2)
        v = (0.999 * 0.001 * g1**2 + 0.001 * g2**2) / (1 - 0.999**2)
        expected = -0.1 * g1 / (abs(g1) + 1e-8) - 0.1 * m / (np.sqrt(v) + 1e-8)
        np.testing.assert_allclose(p["w"], [expected], rtol=1e-12)

    def test_quadratic_bowl_descends(self):
        theta = {"w": np.array([1.5, -2.0, 0.7])}
        state = AdamState()
        norms = []
        for _ in range(200):
            theta = adam_step(theta, {"w": 2 * theta["w"]}, state, 0.01)
            norms.append(np.linalg.norm(theta["w"]))
        assert np.all(np.diff(norms[10:]) < 0)
        assert norms[-1] < 0.5 * np.linalg.norm([1.5, -2.0, 0.7])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            adam_step({"w": np.zeros(2)}, {"w": np.zeros(3)}, AdamState(), 0.1)


@pytest.fixture(scope="module")
def blobs():
    data = synth_blobs(3, 40, dims=(1, 6, 6), seed=1)
    idx = np.arange(len(data))
    return data.subset(idx % 4 != 0, "train"), data.subset(idx % 4 == 0, "test")


def fresh(n=2, seed=0):
    spec = parse_spec("C3-M-FC8-FC3", (1, 6, 6))
    return build_ensemble([spec] * n, [seed + i for i in range(n)])


# blob pixels are not translation invariant, so no shifts
CFG = dict(epochs=4, batch_size=16, learning_rate=0.01, augment=AugmentConfig(max_shift=0))


class TestTrain:
    def test_base_learns_and_loss_decreases(self, blobs):
        tr, te = blobs
        ens, m = train(fresh(), tr, TrainConfig(recipe="base", **CFG), eval_data=te)
        assert m.epochs[-1].train_loss < m.epochs[0].train_loss
        assert accuracy(ens, te.images, te.labels) >= 90.0
        assert m.clean_accuracy == m.epochs[-1].clean_accuracy

    def test_div_lowers_gal(self, blobs):
        tr, _ = blobs
        _, m = train(fresh(3), tr, TrainConfig(recipe="div", lam=2.0, noise_epsilon=0.1, **CFG))
        assert m.epochs[-1].mean_gal < m.epochs[0].mean_gal

    def test_input_ensemble_untouched(self, blobs):
        tr, _ = blobs
        ens = fresh()
        before = dumps(ens)
        train(ens, tr, TrainConfig(recipe="div", **CFG))
        assert dumps(ens) == before

    @pytest.mark.parametrize("recipe", RECIPES)
    def test_deterministic(self, blobs, recipe):
        tr, _ = blobs
        static = fresh(1, seed=50)
        cfg = TrainConfig(recipe=recipe, seed=3, epochs=1, batch_size=32, learning_rate=0.01)
        a, ma = train(fresh(), tr, cfg, static_model=static)
        b, mb = train(fresh(), tr, cfg, static_model=static)
        assert dumps(a) == dumps(b)
        assert ma.epochs_csv() == mb.epochs_csv()

    def test_seed_changes_result(self, blobs):
        tr, _ = blobs
        a, _ = train(fresh(), tr, TrainConfig(seed=1, epochs=1))
        b, _ = train(fresh(), tr, TrainConfig(seed=2, epochs=1))
        assert dumps(a) != dumps(b)

    def test_ens_needs_static_model(self, blobs):
        with pytest.raises(ValueError, match="static"):
            train(fresh(), blobs[0], TrainConfig(recipe="ens"))

    def test_div_needs_two_members(self, blobs):
        with pytest.raises(ValueError, match="at least 2"):
            train(fresh(1), blobs[0], TrainConfig(recipe="div"))

    def test_divergence_guard(self, blobs):
        tr, _ = blobs
        ens = fresh()
        ens.members[0].params["0.weight"] = ens.members[0].params["0.weight"] * np.nan
        with pytest.raises(TrainingDiverged, match="non-finite"):
            train(ens, tr, TrainConfig(epochs=1))

    def test_config_validation(self):
        for bad in (dict(recipe="adv"), dict(epochs=0), dict(learning_rate=0.0), dict(lam=-1.0)):
            with pytest.raises(ValueError):
                TrainConfig(**bad)

    def test_metrics_serialisation(self, blobs):
        _, m = train(fresh(), blobs[0], TrainConfig(epochs=2))
        lines = m.epochs_csv().splitlines()
        assert lines[0].startswith("# schema:")
        assert lines[1] == "epoch,train_loss,clean_accuracy,mean_gal,mean_coherence"
        assert len(lines) == 4
        assert '"epochs"' in m.to_json()


class TestTransfer:
    def test_zero_epsilon_equals_clean(self, blobs):
        tr, te = blobs
        target, _ = train(fresh(), tr, TrainConfig(**CFG))
        sur, _ = train(fresh(seed=10), tr, TrainConfig(seed=9, **CFG))
        attacks = [AttackConfig.default(k, 0.0) for k in ("FGSM", "RFGSM", "IFGSM", "MIFGSM", "PGDCW")]
        m = evaluate_transfer(target, sur, te, attacks)
        assert all(acc == m.clean_accuracy for _, _, acc in m.attacks)

    def test_does_not_mutate_models(self, blobs):
        tr, te = blobs
        target, sur = fresh(), fresh(seed=5)
        before = dumps(target), dumps(sur)
        evaluate_transfer(target, sur, te, [AttackConfig.default("IFGSM", 0.1)])
        assert (dumps(target), dumps(sur)) == before

    def test_white_box_at_least_as_strong(self, blobs):
        tr, te = blobs
        target, _ = train(fresh(), tr, TrainConfig(**CFG))
        sur, _ = train(fresh(seed=10), tr, TrainConfig(seed=9, **CFG))
        atk = [AttackConfig.default("FGSM", 0.3)]
        white = evaluate_transfer(target, target, te, atk).attacks[0][2]
        black = evaluate_transfer(target, sur, te, atk).attacks[0][2]
        assert white <= black
