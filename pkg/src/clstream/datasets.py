"""Class-labelled datasets and per-task input transforms.

Two sources are supported: MNIST-family IDX files and seeded Gaussian blobs.
Both produce a :class:`LabeledDataset` whose features live in ``[0, 1]``.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base class for malformed IDX input."""


class MagicNumberError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    image_shape: tuple[int, int] | None = None
    class_index: dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        features = np.ascontiguousarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2 or len(features) != len(labels):
            raise ValueError(
                f"features {features.shape} and labels {labels.shape} do not line up"
            )
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.split not in ("train", "test"):
            raise ValueError(f"unknown split {self.split!r}")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        index = {}
        for c in range(self.num_classes):
            ids = np.flatnonzero(labels == c)
            ids.setflags(write=False)
            index[c] = ids
        object.__setattr__(self, "class_index", index)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, ids) -> "LabeledDataset":
        ids = np.asarray(ids, dtype=np.int64)
        return LabeledDataset(
            self.features[ids], self.labels[ids], self.num_classes, self.split,
            self.image_shape,
        )

    def stratified_subset(self, size: int, seed: int) -> "LabeledDataset":
        """Draw ``size`` samples keeping the class proportions (up to rounding)."""
        if not 0 < size <= len(self):
            raise ValueError(f"subset size {size} outside (0, {len(self)}]")
        rng = np.random.default_rng(seed)
        order = rng.permutation(len(self))
        # Sorting a random permutation by label gives a shuffled stratified order.
        order = order[np.argsort(self.labels[order], kind="stable")]
        picks = order[np.round(np.linspace(0, len(self) - 1, size)).astype(np.int64)]
        return self.subset(np.sort(picks))


# --- IDX -------------------------------------------------------------------


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path) -> tuple[int, tuple[int, ...], np.ndarray]:
    """Parse an unsigned-byte IDX file into ``(magic, dims, data)``."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise TruncatedFileError(f"{path}: missing magic number")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic >> 8 != 0x08:
        raise MagicNumberError(f"{path}: unsupported IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise TruncatedFileError(f"{path}: header cut short")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(dims, dtype=np.int64))
    body = raw[header_end:]
    if len(body) < expected:
        raise TruncatedFileError(
            f"{path}: expected {expected} data bytes, found {len(body)}"
        )
    data = np.frombuffer(body, dtype=np.uint8, count=expected).reshape(dims)
    return magic, dims, data


def write_idx(path, data: np.ndarray) -> None:
    """Write a uint8 array as IDX (gzip-compressed if ``path`` ends in .gz)."""
    data = np.ascontiguousarray(data, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | data.ndim)
    header += struct.pack(f">{data.ndim}I", *data.shape)
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "wb") as f:
        f.write(header + data.tobytes())


def load_idx_dataset(images_path, labels_path, num_classes: int | None = None,
                     split: str = "train") -> LabeledDataset:
    magic, dims, images = read_idx(images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise MagicNumberError(
            f"{images_path}: expected image magic 0x{IDX_IMAGES_MAGIC:08x}, got 0x{magic:08x}"
        )
    magic, _, labels = read_idx(labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise MagicNumberError(
            f"{labels_path}: expected label magic 0x{IDX_LABELS_MAGIC:08x}, got 0x{magic:08x}"
        )
    if dims[0] != len(labels):
        raise CountMismatchError(f"{dims[0]} images but {len(labels)} labels")
    if num_classes is None:
        num_classes = int(labels.max()) + 1
    features = images.reshape(dims[0], -1).astype(np.float64) / 255.0
    return LabeledDataset(features, labels.astype(np.int64), num_classes, split,
                          image_shape=(dims[1], dims[2]))


# --- Gaussian blobs ----------------------------------------------------------


def make_blob_dataset(num_classes: int, samples_per_class: int, input_dim: int,
                      separation: float, seed: int,
                      test_per_class: int | None = None
                      ) -> tuple[LabeledDataset, LabeledDataset]:
    """Isotropic Gaussian clusters, one per class, returned as ``(train, test)``.

    Class means are random unit directions scaled by ``separation``; noise is
    unit variance. Coordinates are squashed through the logistic function so
    features share the ``[0, 1]`` range of image data. The means, the train
    draws and the test draws use three independent child seeds.
    """
    if num_classes < 2 or samples_per_class < 1 or input_dim < 1:
        raise ValueError("need num_classes >= 2, samples_per_class >= 1, input_dim >= 1")
    if not separation > 0:
        raise ValueError("separation must be positive")
    if test_per_class is None:
        test_per_class = max(1, samples_per_class // 2)
    mean_seq, train_seq, test_seq = np.random.SeedSequence(seed).spawn(3)
    directions = np.random.default_rng(mean_seq).standard_normal((num_classes, input_dim))
    means = separation * directions / np.linalg.norm(directions, axis=1, keepdims=True)

    def draw(seq, per_class, split):
        rng = np.random.default_rng(seq)
        labels = np.repeat(np.arange(num_classes), per_class)
        raw = means[labels] + rng.standard_normal((len(labels), input_dim))
        return LabeledDataset(1.0 / (1.0 + np.exp(-raw)), labels, num_classes, split)

    return draw(train_seq, samples_per_class, "train"), draw(test_seq, test_per_class, "test")


# --- transforms --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InputTransform:
    kind: str = "identity"
    permutation: np.ndarray | None = None
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("identity", "pixel_permutation", "gaussian_noise"):
            raise ValueError(f"unknown transform kind {self.kind!r}")
        if self.kind == "pixel_permutation":
            perm = np.asarray(self.permutation, dtype=np.int64)
            if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(len(perm))):
                raise ValueError("permutation must be a bijection on [0, input_dim)")
            perm.setflags(write=False)
            object.__setattr__(self, "permutation", perm)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @classmethod
    def identity(cls) -> "InputTransform":
        return cls()

    @classmethod
    def random_permutation(cls, input_dim: int, seed: int) -> "InputTransform":
        perm = np.random.default_rng(seed).permutation(input_dim)
        return cls("pixel_permutation", permutation=perm, seed=seed)

    @classmethod
    def gaussian_noise(cls, sigma: float, seed: int) -> "InputTransform":
        return cls("gaussian_noise", noise_sigma=sigma, seed=seed)

    def inverse(self) -> "InputTransform":
        if self.kind != "pixel_permutation":
            raise ValueError("only permutations are invertible")
        return InputTransform("pixel_permutation", permutation=np.argsort(self.permutation),
                              seed=self.seed)

    def __eq__(self, other):
        if not isinstance(other, InputTransform):
            return NotImplemented
        same_perm = (self.permutation is None and other.permutation is None) or (
            self.permutation is not None and other.permutation is not None
            and np.array_equal(self.permutation, other.permutation)
        )
        return (self.kind, self.noise_sigma, self.seed) == (
            other.kind, other.noise_sigma, other.seed) and same_perm


def apply_transform(rows: np.ndarray, transform: InputTransform) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if transform.kind == "identity":
        return rows
    if transform.kind == "pixel_permutation":
        if rows.shape[-1] != len(transform.permutation):
            raise ValueError(
                f"permutation of length {len(transform.permutation)} "
                f"cannot reorder rows of width {rows.shape[-1]}"
            )
        return rows[..., transform.permutation]
    noise = np.random.default_rng(transform.seed).normal(0.0, transform.noise_sigma, rows.shape)
    return np.clip(rows + noise, 0.0, 1.0)
