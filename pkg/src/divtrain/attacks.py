"""L-infinity gradient attacks run against a surrogate ensemble.

All attacks maximise the surrogate's mean member cross-entropy, except
PGD-CW which maximises a Carlini-Wagner hinge on the mean member logits.
After every step the iterate is projected onto the epsilon ball around the
clean input and then clipped to the pixel range [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .models import Ensemble, forward_logits

KINDS = ("FGSM", "RFGSM", "IFGSM", "MIFGSM", "PGDCW")
L1_FLOOR = 1e-12


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    epsilon: float
    steps: int = 10
    decay: float = 1.0
    confidence: float = 50.0
    step_size: float | None = None  # PGD-CW only; defaults to epsilon / 10
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack {self.kind!r}; choose from {KINDS}")
        if not self.epsilon >= 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.decay < 0 or self.confidence < 0:
            raise ValueError("decay and confidence must be non-negative")
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")

    @classmethod
    def default(cls, kind: str, epsilon: float, seed: int = 0) -> AttackConfig:
        """Standard settings: 10 steps for I-FGSM/MI-FGSM (decay 1), 30 steps and confidence 50 for PGD-CW."""
        steps = {"FGSM": 1, "RFGSM": 1, "IFGSM": 10, "MIFGSM": 10, "PGDCW": 30}[kind]
        return cls(kind, epsilon, steps=steps, seed=seed)


@dataclass
class AdvBatch:
    originals: np.ndarray
    perturbed: np.ndarray
    config: AttackConfig

    @property
    def linf(self) -> float:
        return float(np.max(np.abs(self.perturbed - self.originals))) if self.originals.size else 0.0


def _project(x_adv: np.ndarray, x: np.ndarray, eps) -> np.ndarray:
    return np.clip(np.clip(x_adv, x - eps, x + eps), 0.0, 1.0)


def surrogate_loss(surrogate: Ensemble, x, y) -> float:
    with ad.no_grad():
        total = 0.0
        for m in surrogate.members:
            total += ad.log_softmax_nll(forward_logits(m.spec, m.params, x), y).item()
    return total / len(surrogate)


def loss_gradient(surrogate: Ensemble, x: np.ndarray, y, chunk: int = 250) -> np.ndarray:
    """Gradient w.r.t. ``x`` of the surrogate's mean member cross-entropy, summed over the batch.

    The per-example rows are the gradients of each example's own loss, so the
    result does not depend on how the batch is chunked.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    out = np.zeros_like(x)
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, start + chunk)
        xt = ad.Tensor(x[sl], requires_grad=True)
        total = None
        for m in surrogate.members:
            loss = ad.log_softmax_nll(forward_logits(m.spec, m.params, xt), y[sl])
            total = loss if total is None else ad.add(total, loss)
        # undo the batch mean and the member sum -> per-example mean-over-members gradient
        total = ad.mul(total, (x[sl].shape[0]) / len(surrogate))
        (g,) = ad.grad(total, [xt])
        out[sl] = g.data
    return out


def _cw_gradient(surrogate: Ensemble, x: np.ndarray, y, confidence: float, chunk: int = 250) -> np.ndarray:
    """Gradient of  -max(Z_y - max_{i != y} Z_i, -kappa)  on the mean member logits."""
    out = np.zeros_like(x)
    for start in range(0, x.shape[0], chunk):
        sl = slice(start, start + chunk)
        xt = ad.Tensor(x[sl], requires_grad=True)
        z = None
        for m in surrogate.members:
            logits = forward_logits(m.spec, m.params, xt)
            z = logits if z is None else ad.add(z, logits)
        z = ad.mul(z, 1.0 / len(surrogate))
        onehot = ad.one_hot(y[sl], surrogate.classes)
        true_logit = ad.reduce_sum(ad.mul(z, onehot), axis=1)
        # push the true class out of the running for the max
        other = ad.reduce_max(ad.sub(z, onehot * 1e9), axis=1)
        margin = ad.clip(ad.sub(true_logit, other), lo=-confidence)
        (g,) = ad.grad(ad.neg(ad.reduce_sum(margin)), [xt])
        out[sl] = g.data
    return out


def fgsm(surrogate: Ensemble, x, y, cfg: AttackConfig) -> AdvBatch:
    x = np.asarray(x, dtype=np.float64)
    g = loss_gradient(surrogate, x, y)
    return AdvBatch(x, _project(x + cfg.epsilon * np.sign(g), x, cfg.epsilon), cfg)


def r_fgsm(surrogate: Ensemble, x, y, cfg: AttackConfig) -> AdvBatch:
    """Uniform random start in the epsilon ball, then one full-epsilon FGSM step."""
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed)
    x0 = np.clip(x + rng.uniform(-cfg.epsilon, cfg.epsilon, size=x.shape), 0.0, 1.0)
    g = loss_gradient(surrogate, x0, y)
    return AdvBatch(x, _project(x0 + cfg.epsilon * np.sign(g), x, cfg.epsilon), cfg)


def i_fgsm(surrogate: Ensemble, x, y, cfg: AttackConfig) -> AdvBatch:
    x = np.asarray(x, dtype=np.float64)
    step = cfg.epsilon / cfg.steps
    x_adv = x
    for _ in range(cfg.steps):
        g = loss_gradient(surrogate, x_adv, y)
        x_adv = _project(x_adv + step * np.sign(g), x, cfg.epsilon)
    return AdvBatch(x, x_adv, cfg)


def mi_fgsm(surrogate: Ensemble, x, y, cfg: AttackConfig) -> AdvBatch:
    """I-FGSM on a decayed running sum of per-example L1-normalised gradients."""
    x = np.asarray(x, dtype=np.float64)
    step = cfg.epsilon / cfg.steps
    axes = tuple(range(1, x.ndim))
    momentum = np.zeros_like(x)
    x_adv = x
    for _ in range(cfg.steps):
        g = loss_gradient(surrogate, x_adv, y)
        l1 = np.maximum(np.sum(np.abs(g), axis=axes, keepdims=True), L1_FLOOR)
        momentum = cfg.decay * momentum + g / l1
        x_adv = _project(x_adv + step * np.sign(momentum), x, cfg.epsilon)
    return AdvBatch(x, x_adv, cfg)


def pgd_cw(surrogate: Ensemble, x, y, cfg: AttackConfig) -> AdvBatch:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    step = cfg.step_size if cfg.step_size is not None else cfg.epsilon / 10
    x_adv = x
    for _ in range(cfg.steps):
        g = _cw_gradient(surrogate, x_adv, y, cfg.confidence)
        x_adv = _project(x_adv + step * np.sign(g), x, cfg.epsilon)
    return AdvBatch(x, x_adv, cfg)


_DISPATCH = {"FGSM": fgsm, "RFGSM": r_fgsm, "IFGSM": i_fgsm, "MIFGSM": mi_fgsm, "PGDCW": pgd_cw}


def run_attack(surrogate: Ensemble, x, y, cfg: AttackConfig) -> AdvBatch:
    return _DISPATCH[cfg.kind](surrogate, x, y, cfg)


def with_epsilon(cfg: AttackConfig, epsilon: float) -> AttackConfig:
    return replace(cfg, epsilon=epsilon)
