"""Gradient alignment between ensemble members.

Input gradients of each member's cross-entropy are compared by cosine
similarity. Coherence is the largest pairwise similarity; the gradient
alignment loss (GAL) is its LogSumExp relaxation. Adding ``lam * GAL`` to the
members' mean cross-entropy gives the diversity training objective, which is
differentiated w.r.t. the parameters through the input gradients themselves.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from . import autodiff as ad
from .models import Ensemble, forward_logits

NORM_FLOOR = 1e-12
CS_LIMIT = 1.0 - 1e-12


@dataclass
class GradSet:
    """Per-member input gradients, each of shape (B, D) (or (D,) for one input)."""

    vectors: list[ad.Tensor]
    retain_graph: bool = False

    def __post_init__(self):
        self.vectors = [ad.as_tensor(v) for v in self.vectors]
        shapes = {v.shape for v in self.vectors}
        if len(shapes) > 1:
            raise ValueError(f"gradient vectors differ in shape: {sorted(shapes)}")

    def __len__(self):
        return len(self.vectors)


@dataclass(frozen=True)
class DivTrainConfig:
    lam: float = 0.5
    n_members: int = 2

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be non-negative, got {self.lam}")
        if self.n_members < 2:
            raise ValueError(f"diversity training needs at least 2 members, got {self.n_members}")


class Objective(NamedTuple):
    total: ad.Tensor
    ce: float
    gal: float
    coherence: float
    params: list[dict[str, ad.Tensor]]


def _member_input_grad(spec, params, batch: np.ndarray, labels, create_graph: bool) -> tuple[ad.Tensor, ad.Tensor]:
    x = ad.Tensor(batch, requires_grad=True)
    loss = ad.log_softmax_nll(forward_logits(spec, params, x), labels)
    (gx,) = ad.grad(loss, [x], create_graph=create_graph)
    return loss, ad.reshape(gx, (batch.shape[0], -1))


def input_gradients(ens: Ensemble, batch, labels, retain_graph: bool = False, params=None) -> GradSet:
    """Gradient of each member's mean cross-entropy w.r.t. its input, flattened per example.

    With ``retain_graph`` the gradients stay connected to ``params`` (fresh
    parameter tensors are made when none are passed).
    """
    batch = np.asarray(batch, dtype=np.float64)
    if params is None:
        params = ens.param_tensors(requires_grad=retain_graph)
    vectors = [
        _member_input_grad(m.spec, p, batch, labels, retain_graph)[1]
        for m, p in zip(ens.members, params)
    ]
    return GradSet(vectors, retain_graph)


def cosine_similarity(u, v) -> ad.Tensor:
    """Cosine similarity along the last axis; a zero vector gives 0.

    Norms are floored at 1e-12 and the result clamped to +-(1 - 1e-12).
    """
    u, v = ad.as_tensor(u), ad.as_tensor(v)
    if u.shape != v.shape:
        raise ValueError(f"cosine_similarity: shape mismatch {u.shape} vs {v.shape}")
    axis = u.ndim - 1
    inner = ad.reduce_sum(ad.mul(u, v), axis=axis)
    nu = ad.sqrt(ad.clip(ad.reduce_sum(ad.square(u), axis=axis), lo=NORM_FLOOR**2))
    nv = ad.sqrt(ad.clip(ad.reduce_sum(ad.square(v), axis=axis), lo=NORM_FLOOR**2))
    return ad.clip(ad.div(inner, ad.mul(nu, nv)), lo=-CS_LIMIT, hi=CS_LIMIT)


def _pairs(n: int):
    if n < 2:
        raise ValueError(f"need at least 2 gradient vectors, got {n}")
    return itertools.combinations(range(n), 2)


def pairwise_similarities(g: GradSet) -> list[ad.Tensor]:
    """Batch-averaged cosine similarity for every unordered member pair."""
    return [ad.reduce_mean(cosine_similarity(g.vectors[a], g.vectors[b])) for a, b in _pairs(len(g))]


def coherence(g: GradSet) -> float:
    return max(cs.item() for cs in pairwise_similarities(g))


def coherence_per_example(g: GradSet) -> np.ndarray:
    """Coherence of the members' gradients separately for every input in the batch."""
    with ad.no_grad():
        sims = [cosine_similarity(g.vectors[a], g.vectors[b]).data for a, b in _pairs(len(g))]
    return np.max(np.stack([np.atleast_1d(s) for s in sims]), axis=0)


def gal(g: GradSet) -> ad.Tensor:
    """log(sum over pairs of exp(CS)); differentiable when the gradients carry a graph."""
    terms = [ad.exp(cs) for cs in pairwise_similarities(g)]
    total = terms[0]
    for t in terms[1:]:
        total = ad.add(total, t)
    return ad.log(total)


def gal_bounds(coh: float, n: int) -> tuple[float, float]:
    """Interval that GAL is guaranteed to lie in for ``n`` members with coherence ``coh``."""
    return coh, coh + math.log(math.comb(n, 2))


def divtrain_objective(ens: Ensemble, batch, labels, lam: float, params=None) -> Objective:
    """Mean member cross-entropy plus ``lam`` times GAL, differentiable in every member's parameters."""
    if len(ens) < 2:
        raise ValueError(f"diversity training needs at least 2 members, got {len(ens)}")
    batch = np.asarray(batch, dtype=np.float64)
    if params is None:
        params = ens.param_tensors(requires_grad=True)
    losses, vectors = [], []
    need_graph = lam > 0
    for m, p in zip(ens.members, params):
        loss, gx = _member_input_grad(m.spec, p, batch, labels, create_graph=need_graph)
        losses.append(loss)
        vectors.append(gx)
    ce = losses[0]
    for loss in losses[1:]:
        ce = ad.add(ce, loss)
    ce = ad.mul(ce, 1.0 / len(losses))
    grads = GradSet(vectors, need_graph)
    sims = pairwise_similarities(grads)
    reg = gal(grads)
    total = ad.add(ce, ad.mul(reg, lam)) if need_graph else ce
    return Objective(total, ce.item(), reg.item(), max(s.item() for s in sims), params)


def divtrain_loss(ens: Ensemble, batch, labels, cfg: DivTrainConfig, params=None) -> ad.Tensor:
    if len(ens) != cfg.n_members:
        raise ValueError(f"config expects {cfg.n_members} members, ensemble has {len(ens)}")
    return divtrain_objective(ens, batch, labels, cfg.lam, params).total


def mean_ce(ens: Ensemble, batch, labels, params: Sequence[dict] | None = None) -> ad.Tensor:
    """Average of the members' mean cross-entropies (the undefended training loss)."""
    if params is None:
        params = ens.param_tensors(requires_grad=True)
    total = None
    for m, p in zip(ens.members, params):
        loss = ad.log_softmax_nll(forward_logits(m.spec, p, batch), labels)
        total = loss if total is None else ad.add(total, loss)
    return ad.mul(total, 1.0 / len(ens))
