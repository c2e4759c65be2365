"""Adam, the four training recipes, and transfer-attack evaluation.

Recipes:

* ``base``    - mean member cross-entropy on the augmented data.
* ``div``     - cross-entropy + lam * GAL on augmented + Gaussian-noise data.
* ``ens``     - cross-entropy on augmented + adversarial data from a frozen model.
* ``ens+div`` - cross-entropy + lam * GAL on augmented + adversarial data.

Every batch of a two-source recipe holds the same examples twice: once from
the augmented set and once from the companion (noisy or adversarial) set.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .attacks import AttackConfig, run_attack
from .datasets import AugmentConfig, DatasetBundle, NoiseConfig, augment, make_adv_dataset, make_noise_dataset
from .diversity import divtrain_objective, mean_ce
from .models import Ensemble, accuracy
from .seeding import derive_seed

log = logging.getLogger(__name__)

RECIPES = ("base", "div", "ens", "ens+div")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update. Returns new arrays; ``state`` is advanced in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        out[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return out


@dataclass
class TrainConfig:
    epochs: int = 5
    batch_size: int = 64
    learning_rate: float = 1e-3
    lam: float = 0.5
    recipe: str = "base"
    noise_epsilon: float = 0.3
    adv_epsilon: float = 0.3
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    seed: int = 0
    track_alignment: bool = True

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ValueError(f"unknown recipe {self.recipe!r}; choose from {RECIPES}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {self.learning_rate}")
        if not self.lam >= 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")

    @property
    def uses_gal(self) -> bool:
        return self.recipe in ("div", "ens+div")


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    clean_accuracy: float
    mean_gal: float
    mean_coherence: float


@dataclass
class RunMetrics:
    epochs: list[EpochMetrics] = field(default_factory=list)
    clean_accuracy: float | None = None
    attacks: list[tuple[str, float, float]] = field(default_factory=list)  # kind, epsilon, accuracy

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# schema: divtrain.metrics/1\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "clean_accuracy", "mean_gal", "mean_coherence"])
        for e in self.epochs:
            writer.writerow([e.epoch, f"{e.train_loss:.10g}", f"{e.clean_accuracy:.1f}",
                             f"{e.mean_gal:.10g}", f"{e.mean_coherence:.10g}"])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def _companion(recipe: str, data: DatasetBundle, cfg: TrainConfig, epoch: int, adv: DatasetBundle | None):
    if recipe == "base":
        return None
    if recipe == "div":
        return make_noise_dataset(data, NoiseConfig(cfg.noise_epsilon), derive_seed(cfg.seed, "noise", epoch))
    return adv


def train(ens: Ensemble, data: DatasetBundle, cfg: TrainConfig, static_model: Ensemble | None = None,
          eval_data: DatasetBundle | None = None) -> tuple[Ensemble, RunMetrics]:
    """Train a copy of ``ens`` with the recipe in ``cfg``; the input ensemble is left untouched."""
    if cfg.uses_gal and len(ens) < 2:
        raise ValueError(f"recipe {cfg.recipe} needs at least 2 members, got {len(ens)}")
    adv = None
    if cfg.recipe in ("ens", "ens+div"):
        if static_model is None:
            raise ValueError(f"recipe {cfg.recipe} needs a static pre-trained model")
        adv = make_adv_dataset(static_model, data, cfg.adv_epsilon, derive_seed(cfg.seed, "adv"))

    ens = ens.copy()
    state = AdamState()
    keys = [(i, name) for i, m in enumerate(ens.members) for name in m.params]
    metrics = RunMetrics()
    n = len(data)
    lam = cfg.lam if cfg.uses_gal else 0.0
    track = cfg.uses_gal or (cfg.track_alignment and len(ens) >= 2)

    for epoch in range(1, cfg.epochs + 1):
        augmented = augment(data.images, cfg.augment, seed=derive_seed(cfg.seed, "augment", epoch))
        companion = _companion(cfg.recipe, data, cfg, epoch, adv)
        order = np.random.default_rng(derive_seed(cfg.seed, "shuffle", epoch)).permutation(n)
        losses, gals, cohs = [], [], []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, y = augmented[idx], data.labels[idx]
            if companion is not None:
                x = np.concatenate([x, companion.images[idx]])
                y = np.concatenate([y, companion.labels[idx]])
            params = ens.param_tensors(requires_grad=True)
            if track:
                obj = divtrain_objective(ens, x, y, lam, params)
                total = obj.total
                gals.append(obj.gal)
                cohs.append(obj.coherence)
            else:
                total = mean_ce(ens, x, y, params)
            value = total.item()
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at epoch {epoch}, batch starting {start}")
            flat = [params[i][name] for i, name in keys]
            grads = ad.grad(total, flat)
            new = adam_step({f"{i}.{name}": ens.members[i].params[name] for i, name in keys},
                            {f"{i}.{name}": g.data for (i, name), g in zip(keys, grads)},
                            state, cfg.learning_rate)
            for i, name in keys:
                ens.members[i].params[name] = new[f"{i}.{name}"]
            losses.append(value)
        ref = eval_data if eval_data is not None else data
        em = EpochMetrics(
            epoch,
            float(np.mean(losses)),
            accuracy(ens, ref.images, ref.labels),
            float(np.mean(gals)) if gals else float("nan"),
            float(np.mean(cohs)) if cohs else float("nan"),
        )
        metrics.epochs.append(em)
        log.info("%s epoch %d: loss %.4f acc %.1f gal %.4f coherence %.4f", cfg.recipe, epoch, em.train_loss,
                 em.clean_accuracy, em.mean_gal, em.mean_coherence)
    metrics.clean_accuracy = metrics.epochs[-1].clean_accuracy
    return ens, metrics


def evaluate_transfer(target: Ensemble, surrogate: Ensemble, testset: DatasetBundle,
                      attacks: list[AttackConfig]) -> RunMetrics:
    """Craft each attack on ``surrogate`` and measure ``target``'s accuracy on the result."""
    metrics = RunMetrics(clean_accuracy=accuracy(target, testset.images, testset.labels))
    for cfg in attacks:
        adv = run_attack(surrogate, testset.images, testset.labels, cfg)
        metrics.attacks.append((cfg.kind, float(cfg.epsilon), accuracy(target, adv.perturbed, testset.labels)))
    return metrics
