"""Declarative CNN/MLP architectures, ensembles and forward passes.

Architectures use the compact grammar ``C32-C64-M-C128-M-FC1024-FC10``:
``C<n>`` is a 3x3 same-padded convolution with ``n`` output channels, ``M`` a
2x2 max-pool and ``FC<n>`` a fully connected layer. The last ``FC`` token is
the output layer; every other Conv/FC layer is followed by a leaky ReLU.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad

KERNEL = 3

# Desk-scale stand-ins for the Conv-3 / Conv-4 rows of the architecture table.
DESK_CONV3 = "C8-C16-M-C32-M-FC128-FC10"
DESK_CONV4 = "C8-C16-C32-M-C32-M-FC128-FC10"
FULL_CONV3 = "C32-C64-M-C128-M-FC1024-FC10"
FULL_CONV4 = "C32-C64-C128-M-C128-M-FC1024-FC10"

_TOKEN = re.compile(r"^(C|FC)(\d+)$|^M$")


class SpecError(ValueError):
    """Malformed architecture string or an architecture that does not fit its input."""


@dataclass(frozen=True)
class Layer:
    kind: str  # "conv", "pool", "fc" or "output"
    width: int = 0

    def token(self) -> str:
        return {"conv": f"C{self.width}", "pool": "M", "fc": f"FC{self.width}", "output": f"FC{self.width}"}[self.kind]


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]
    alpha: float = 0.1

    def __str__(self) -> str:
        return "-".join(layer.token() for layer in self.layers)

    @property
    def classes(self) -> int:
        return self.layers[-1].width

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        """Name -> shape for every trainable tensor, in layer order."""
        shapes: dict[str, tuple[int, ...]] = {}
        shape = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            if layer.kind == "conv":
                shapes[f"{i}.weight"] = (layer.width, shape[0], KERNEL, KERNEL)
                shapes[f"{i}.bias"] = (layer.width,)
                shape = (layer.width,) + shape[1:]
            elif layer.kind == "pool":
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
            else:
                fan_in = int(np.prod(shape))
                shapes[f"{i}.weight"] = (fan_in, layer.width)
                shapes[f"{i}.bias"] = (layer.width,)
                shape = (layer.width,)
        return shapes


def parse_spec(text: str, input_shape: Sequence[int], alpha: float = 0.1) -> ModelSpec:
    """Parse an architecture string and check it against ``input_shape``.

    ``input_shape`` is ``(C, H, W)`` for image models or ``(D,)`` for flat
    inputs; convolutions and pooling need the former.
    """
    if not alpha > 0:
        raise SpecError(f"activation slope must be positive, got {alpha}")
    input_shape = tuple(int(s) for s in input_shape)
    if len(input_shape) not in (1, 3) or min(input_shape) < 1:
        raise SpecError(f"input shape must be (C, H, W) or (D,), got {input_shape}")
    tokens = text.strip().split("-")
    layers = []
    for pos, tok in enumerate(tokens):
        tok = tok.strip()
        if tok.startswith("RES"):
            raise SpecError(f"token {pos} ({tok!r}): residual blocks are reserved but not supported")
        m = _TOKEN.match(tok)
        if not m:
            raise SpecError(f"token {pos} ({tok!r}): expected C<n>, M or FC<n>")
        if tok == "M":
            layers.append(Layer("pool"))
            continue
        width = int(m.group(2))
        if width < 1:
            raise SpecError(f"token {pos} ({tok!r}): width must be positive")
        layers.append(Layer("conv" if m.group(1) == "C" else "fc", width))
    if not layers or layers[-1].kind != "fc":
        raise SpecError(f"architecture {text!r} must end with an FC<classes> output layer")
    layers[-1] = Layer("output", layers[-1].width)

    shape = input_shape
    seen_fc = False
    for pos, layer in enumerate(layers):
        if layer.kind in ("conv", "pool"):
            if seen_fc:
                raise SpecError(f"token {pos} ({layer.token()!r}): spatial layer after a fully connected layer")
            if len(shape) != 3:
                raise SpecError(f"token {pos} ({layer.token()!r}): needs a (C, H, W) input, got {input_shape}")
            if layer.kind == "pool":
                shape = (shape[0], shape[1] // 2, shape[2] // 2)
                if min(shape[1:]) < 1:
                    raise SpecError(f"token {pos} ('M'): pooling shrinks spatial size below 1")
            else:
                shape = (layer.width,) + shape[1:]
        else:
            seen_fc = True
            shape = (layer.width,)
    return ModelSpec(tuple(layers), input_shape, float(alpha))


def init_params(spec: ModelSpec, seed: int) -> dict[str, np.ndarray]:
    """He-normal weights (std sqrt(2 / fan_in)) and zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in spec.param_shapes().items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) == 4 else shape[0]
            params[name] = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
    return params


def forward_logits(spec: ModelSpec, params: Mapping[str, object], batch) -> ad.Tensor:
    """Logits of shape (B, classes). Params and batch may be arrays or Tensors."""
    x = ad.as_tensor(batch)
    expected = tuple(spec.input_shape)
    if x.shape[1:] != expected:
        if len(expected) == 1 and int(np.prod(x.shape[1:])) == expected[0]:
            x = ad.reshape(x, (x.shape[0], expected[0]))
        else:
            raise ValueError(f"forward_logits: batch shape {x.shape[1:]} does not match model input {expected}")
    for i, layer in enumerate(spec.layers):
        if layer.kind == "pool":
            x = ad.maxpool2d(x)
            continue
        w = ad.as_tensor(params[f"{i}.weight"])
        b = ad.as_tensor(params[f"{i}.bias"])
        if layer.kind == "conv":
            x = ad.bias_add(ad.conv2d(x, w), b)
        else:
            if x.ndim != 2:
                x = ad.reshape(x, (x.shape[0], -1))
            x = ad.bias_add(ad.matmul(x, w), b)
        if layer.kind != "output":
            x = ad.leaky_relu(x, spec.alpha)
    return x


@dataclass
class Member:
    spec: ModelSpec
    params: dict[str, np.ndarray]

    def copy(self) -> Member:
        return Member(self.spec, {k: v.copy() for k, v in self.params.items()})


@dataclass
class Ensemble:
    members: list[Member] = field(default_factory=list)

    def __post_init__(self):
        if not self.members:
            raise ValueError("an ensemble needs at least one member")
        shapes = {m.spec.input_shape for m in self.members}
        classes = {m.spec.classes for m in self.members}
        if len(shapes) > 1 or len(classes) > 1:
            raise ValueError(f"ensemble members disagree on input shape {shapes} or classes {classes}")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return self.members[0].spec.input_shape

    @property
    def classes(self) -> int:
        return self.members[0].spec.classes

    def copy(self) -> Ensemble:
        return Ensemble([m.copy() for m in self.members])

    def param_tensors(self, requires_grad: bool = True) -> list[dict[str, ad.Tensor]]:
        return [{k: ad.Tensor(v, requires_grad=requires_grad) for k, v in m.params.items()} for m in self.members]


def build_ensemble(specs: Sequence[ModelSpec], seeds: Sequence[int]) -> Ensemble:
    if len(specs) != len(seeds):
        raise ValueError(f"{len(specs)} specs but {len(seeds)} seeds")
    return Ensemble([Member(s, init_params(s, seed)) for s, seed in zip(specs, seeds)])


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def member_logits(ens: Ensemble, batch: np.ndarray, chunk: int = 500) -> np.ndarray:
    """Logits of every member, shape (N, B, classes); no graph is recorded."""
    batch = np.asarray(batch, dtype=np.float64)
    out = np.empty((len(ens), batch.shape[0], ens.classes))
    with ad.no_grad():
        for start in range(0, batch.shape[0], chunk):
            sl = slice(start, start + chunk)
            for i, m in enumerate(ens.members):
                out[i, sl] = forward_logits(m.spec, m.params, batch[sl]).data
    return out


def ensemble_proba(ens: Ensemble, batch: np.ndarray) -> np.ndarray:
    logits = member_logits(ens, batch)
    return np.mean([_softmax(z) for z in logits], axis=0)


def ensemble_predict(ens: Ensemble, batch: np.ndarray) -> np.ndarray:
    """Argmax of the members' mean softmax; ties go to the lowest class index."""
    return np.argmax(ensemble_proba(ens, batch), axis=1)


def accuracy(ens: Ensemble, images: np.ndarray, labels: np.ndarray) -> float:
    """Percentage of correctly classified inputs."""
    if len(labels) == 0:
        return 0.0
    return 100.0 * float(np.mean(ensemble_predict(ens, images) == np.asarray(labels)))
