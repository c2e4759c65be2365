"""Datasets: IDX/CIFAR loaders, synthetic blobs, augmentation, noisy and adversarial copies."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import truncnorm

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049


class DatasetError(ValueError):
    pass


@dataclass
class DatasetBundle:
    images: np.ndarray  # (M, C, H, W) float64 in [0, 1]
    labels: np.ndarray  # (M,) int64
    name: str = ""
    classes: int = 10
    budgets: np.ndarray | None = None  # per-example L-inf budgets of adversarial copies

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DatasetError(f"{self.name or 'dataset'}: images must be (M, C, H, W), got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise DatasetError(f"{self.name or 'dataset'}: {self.images.shape[0]} images but {self.labels.shape[0]} labels")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, index, name: str | None = None) -> DatasetBundle:
        budgets = None if self.budgets is None else self.budgets[index]
        return DatasetBundle(self.images[index], self.labels[index], name or self.name, self.classes, budgets)

    def validate(self) -> None:
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DatasetError(f"{self.name}: pixels outside [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise DatasetError(f"{self.name}: labels outside [0, {self.classes})")


@dataclass(frozen=True)
class AugmentConfig:
    max_shift: int = 2
    pad: int = 2
    flip: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.max_shift < 0 or self.pad < 0:
            raise ValueError("max_shift and pad must be non-negative")
        if self.max_shift > self.pad:
            raise ValueError(f"max_shift ({self.max_shift}) cannot exceed pad ({self.pad})")


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian noise with sigma = epsilon / 2, truncated at +-2 sigma (= +-epsilon)."""

    epsilon: float = 0.3
    truncation: float = 2.0

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"noise epsilon must be positive, got {self.epsilon}")

    @property
    def sigma(self) -> float:
        return self.epsilon / 2

    @property
    def bound(self) -> float:
        return self.truncation * self.sigma


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------


def _read_bytes(path) -> bytes:
    path = Path(path)
    raw = path.read_bytes()
    return gzip.decompress(raw) if path.suffix == ".gz" else raw


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    """Parse an IDX file of unsigned bytes (optionally gzipped)."""
    buf = _read_bytes(path)
    if len(buf) < 8:
        raise DatasetError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack_from(">I", buf, 0)
    if expected_magic is not None and magic != expected_magic:
        raise DatasetError(f"{path}: magic {magic}, expected {expected_magic}")
    if magic >> 8 != 0x08:
        raise DatasetError(f"{path}: magic {magic} is not an unsigned-byte IDX file")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise DatasetError(f"{path}: truncated IDX header")
    dims = struct.unpack_from(">" + "I" * ndim, buf, 4)
    count = int(np.prod(dims))
    if len(buf) - header < count:
        raise DatasetError(f"{path}: truncated IDX payload ({len(buf) - header} of {count} bytes)")
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> Path:
    array = np.asarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(">" + "I" * array.ndim, *array.shape)
    path = Path(path)
    payload = header + array.tobytes()
    path.write_bytes(gzip.compress(payload, mtime=0) if path.suffix == ".gz" else payload)
    return path


def load_idx(images_path, labels_path, name: str = "idx", classes: int = 10) -> DatasetBundle:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise DatasetError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    bundle = DatasetBundle(images[:, None, :, :] / 255.0, labels.astype(np.int64), name, classes)
    bundle.validate()
    return bundle


def load_cifar10_batch(path, name: str = "cifar10") -> DatasetBundle:
    """One CIFAR-10 binary batch: records of 1 label byte + 3072 CHW pixel bytes."""
    buf = _read_bytes(path)
    record = 1 + 3 * 32 * 32
    if len(buf) % record:
        raise DatasetError(f"{path}: size {len(buf)} is not a multiple of the {record}-byte record")
    raw = np.frombuffer(buf, dtype=np.uint8).reshape(-1, record)
    bundle = DatasetBundle(raw[:, 1:].reshape(-1, 3, 32, 32) / 255.0, raw[:, 0].astype(np.int64), name, 10)
    bundle.validate()
    return bundle


def synth_blobs(classes: int, per_class: int, dims=(1, 8, 8), seed: int = 0,
                spread: float = 0.05) -> DatasetBundle:
    """Isotropic Gaussian blobs, one per class, clipped to [0, 1].

    Class means are drawn in [0.2, 0.8]^d and redrawn until every pair is at
    least 8 * ``spread`` apart.
    """
    shape = (1, 1, int(dims)) if np.isscalar(dims) else tuple(int(s) for s in dims)
    d = int(np.prod(shape))
    rng = np.random.default_rng(seed)
    for _ in range(1000):
        means = rng.uniform(0.2, 0.8, size=(classes, d))
        gaps = np.linalg.norm(means[:, None] - means[None, :], axis=-1) + np.eye(classes) * 1e9
        if gaps.min() >= 8 * spread:
            break
    else:
        raise ValueError(f"cannot separate {classes} blobs in {d} dimensions with spread {spread}")
    labels = np.repeat(np.arange(classes), per_class)
    images = means[labels] + rng.normal(0.0, spread, size=(labels.size, d))
    return DatasetBundle(np.clip(images, 0.0, 1.0).reshape((-1,) + shape), labels, "blobs", classes)


# ---------------------------------------------------------------------------
# derived datasets
# ---------------------------------------------------------------------------


def augment(images: np.ndarray, cfg: AugmentConfig, seed: int | None = None) -> np.ndarray:
    """Reflect-pad, random-crop back to size and optionally flip horizontally."""
    images = np.asarray(images, dtype=np.float64)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n, _, h, w = images.shape
    out = images.copy()
    if cfg.max_shift > 0 and cfg.pad > 0:
        p = cfg.pad
        padded = np.pad(images, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")
        dy = rng.integers(-cfg.max_shift, cfg.max_shift + 1, size=n) + p
        dx = rng.integers(-cfg.max_shift, cfg.max_shift + 1, size=n) + p
        for oy in np.unique(dy):
            for ox in np.unique(dx):
                sel = (dy == oy) & (dx == ox)
                if sel.any():
                    out[sel] = padded[sel, :, oy:oy + h, ox:ox + w]
    if cfg.flip:
        flip = rng.random(n) < 0.5
        out[flip] = out[flip, :, :, ::-1]
    return out


def truncated_noise(shape, cfg: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    t = cfg.truncation
    return truncnorm.rvs(-t, t, loc=0.0, scale=cfg.sigma, size=shape, random_state=rng)


def make_noise_dataset(base: DatasetBundle, cfg: NoiseConfig, seed: int) -> DatasetBundle:
    rng = np.random.default_rng(seed)
    noisy = np.clip(base.images + truncated_noise(base.images.shape, cfg, rng), 0.0, 1.0)
    return DatasetBundle(noisy, base.labels.copy(), f"{base.name}+noise", base.classes)


def sample_adv_epsilons(count: int, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """|N(0, epsilon/2)| truncated at 2 sigma, so every budget lies in [0, epsilon]."""
    if epsilon == 0:
        return np.zeros(count)
    return np.abs(truncated_noise((count,), NoiseConfig(epsilon), rng))


def make_adv_dataset(static_model, base: DatasetBundle, epsilon: float, seed: int) -> DatasetBundle:
    """FGSM copies of ``base`` crafted on a frozen model, each with its own random budget."""
    from .attacks import loss_gradient

    rng = np.random.default_rng(seed)
    eps = sample_adv_epsilons(len(base), epsilon, rng)
    if epsilon == 0:
        return DatasetBundle(base.images.copy(), base.labels.copy(), f"{base.name}+adv", base.classes, budgets=eps)
    g = loss_gradient(static_model, base.images, base.labels)
    eps_b = eps.reshape((-1,) + (1,) * (base.images.ndim - 1))
    adv = np.clip(base.images + eps_b * np.sign(g), 0.0, 1.0)
    return DatasetBundle(adv, base.labels.copy(), f"{base.name}+adv", base.classes, budgets=eps)


def mnist_sample(seed: int = 0) -> DatasetBundle:
    """The 5000-image MNIST sample bundled with mlxtend, shuffled with ``seed``.

    The source file is sorted by class, so a fixed permutation is applied.
    """
    try:
        from mlxtend.data import mnist_data
    except ImportError as exc:  # pragma: no cover - optional dependency
        raise DatasetError("mnist_sample needs the optional 'mlxtend' package") from exc
    x, y = mnist_data()
    order = np.random.default_rng(seed).permutation(len(y))
    images = x[order].reshape(-1, 1, 28, 28) / 255.0
    return DatasetBundle(images, y[order].astype(np.int64), "mnist-sample", 10)


def export_idx_pair(bundle: DatasetBundle, images_path, labels_path) -> None:
    """Write a single-channel bundle back to IDX image/label files."""
    if bundle.images.shape[1] != 1:
        raise DatasetError("IDX export supports single-channel images only")
    pixels = np.rint(bundle.images[:, 0] * 255.0).astype(np.uint8)
    write_idx(images_path, pixels)
    write_idx(labels_path, bundle.labels.astype(np.uint8))
