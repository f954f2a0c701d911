"""Dataset construction: Gaussian mixtures, IDX ingestion, imbalance injection."""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .numerics import RandomStream, as_matrix

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base class for IDX parsing failures."""


class IdxMagicError(IdxFormatError):
    """File does not start with the expected magic number."""


class IdxTruncatedError(IdxFormatError):
    """File ends before the declared payload."""


class IdxCountMismatchError(IdxFormatError):
    """Image and label files declare different sample counts."""


@dataclass
class LabeledDataset:
    """Immutable feature matrix with integer labels in [0, num_classes)."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels must match the number of feature rows")
        if self.labels.size and (self.labels.min() < 0
                                 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def per_class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ImbalanceSpec:
    """Per-class keep counts; classes not listed are kept in full."""

    overrides: tuple[tuple[int, int], ...] = ()

    @classmethod
    def from_pairs(cls, pairs) -> "ImbalanceSpec":
        return cls(tuple((int(c), int(k)) for c, k in pairs))


def gen_gaussian_mixture(num_classes: int, per_class_counts, dim: int,
                         radius: float, sigma: float,
                         stream: RandomStream) -> LabeledDataset:
    """Isotropic Gaussian blobs with means equally spaced on a circle.

    The means live on a radius-`radius` circle in the first two coordinates
    (zero elsewhere); each sample is mean + sigma * N(0, I). Class blocks are
    emitted in label order, deterministically for a given stream.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    if dim < 2:
        raise ValueError("need dim >= 2")
    if sigma < 0.0:
        raise ValueError("sigma must be >= 0")
    counts = ([int(per_class_counts)] * num_classes
              if np.isscalar(per_class_counts) else [int(c) for c in per_class_counts])
    if len(counts) != num_classes or any(c < 1 for c in counts):
        raise ValueError("per_class_counts must give a positive count per class")

    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)

    blocks, labels = [], []
    for k in range(num_classes):
        block = np.tile(means[k], (counts[k], 1))
        if sigma > 0:
            block += stream.normal((counts[k], dim), scale=sigma)
        blocks.append(block)
        labels.append(np.full(counts[k], k, dtype=np.int64))
    return LabeledDataset(np.vstack(blocks), np.concatenate(labels), num_classes)


# ---------------------------------------------------------------------------
# IDX binary format (big-endian magic + dims + raw unsigned bytes)
# ---------------------------------------------------------------------------

def _read_exact(fh, count: int, path, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise IdxTruncatedError(f"{path}: truncated while reading {what}")
    return data


def load_idx(images_path, labels_path) -> LabeledDataset:
    """Parse an IDX image/label file pair; pixels scaled into [0, 1].

    Images flatten to rows of length rows*cols. Distinct errors: wrong magic,
    truncated payload, image/label count mismatch.
    """
    with open(images_path, "rb") as fh:
        magic, count, rows, cols = struct.unpack(
            ">IIII", _read_exact(fh, 16, images_path, "image header"))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxMagicError(f"{images_path}: magic {magic:#010x}, "
                                f"expected {IDX_IMAGE_MAGIC:#010x}")
        payload = _read_exact(fh, count * rows * cols, images_path, "pixels")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(count, rows * cols)

    with open(labels_path, "rb") as fh:
        magic, label_count = struct.unpack(
            ">II", _read_exact(fh, 8, labels_path, "label header"))
        if magic != IDX_LABEL_MAGIC:
            raise IdxMagicError(f"{labels_path}: magic {magic:#010x}, "
                                f"expected {IDX_LABEL_MAGIC:#010x}")
        payload = _read_exact(fh, label_count, labels_path, "labels")
    labels = np.frombuffer(payload, dtype=np.uint8).astype(np.int64)

    if label_count != count:
        raise IdxCountMismatchError(
            f"{count} images but {label_count} labels")
    num_classes = int(labels.max()) + 1 if labels.size else 1
    return LabeledDataset(pixels.astype(np.float64) / 255.0, labels, num_classes)


def write_idx(ds: LabeledDataset, images_path, labels_path,
              rows: int | None = None, cols: int | None = None) -> None:
    """Inverse of load_idx for features in [0, 1]; round-trips exactly."""
    n, d = ds.features.shape
    if rows is None or cols is None:
        rows, cols = 1, d
    if rows * cols != d:
        raise ValueError(f"rows*cols must equal {d}")
    pixels = np.rint(ds.features * 255.0)
    if pixels.min() < 0 or pixels.max() > 255:
        raise ValueError("features must lie in [0, 1] for IDX export")
    if ds.labels.size and (ds.labels.min() < 0 or ds.labels.max() > 255):
        raise ValueError("labels must fit in a byte for IDX export")
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(pixels.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Imbalance injection and batching
# ---------------------------------------------------------------------------

def apply_imbalance(ds: LabeledDataset, spec: ImbalanceSpec,
                    stream: RandomStream) -> LabeledDataset:
    """Downsample the listed classes to their keep counts, uniformly at random.

    Feature values are never modified, only membership; the surviving samples
    keep their original order. Deterministic for a given stream.
    """
    keep = np.ones(ds.n, dtype=bool)
    for class_id, keep_count in spec.overrides:
        members = np.flatnonzero(ds.labels == class_id)
        if keep_count < 1 or keep_count > members.size:
            raise ValueError(f"class {class_id}: keep count {keep_count} not in "
                             f"[1, {members.size}]")
        chosen = stream.choice(members, size=keep_count, replace=False)
        keep[members] = False
        keep[chosen] = True
    idx = np.flatnonzero(keep)
    return LabeledDataset(ds.features[idx], ds.labels[idx], ds.num_classes)


class Batch(NamedTuple):
    indices: np.ndarray
    features: np.ndarray
    labels: np.ndarray


def sample_batches(ds: LabeledDataset, batch_size: int,
                   stream: RandomStream) -> Iterator[Batch]:
    """One epoch: a random permutation cut into batches; the short tail is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = stream.permutation(ds.n)
    for start in range(0, ds.n, batch_size):
        idx = perm[start:start + batch_size]
        yield Batch(idx, ds.features[idx], ds.labels[idx])


def save_csv(ds: LabeledDataset, path) -> None:
    """Header row f0..f{d-1},label; one sample per line; label last."""
    with open(path, "w") as fh:
        fh.write(",".join([f"f{j}" for j in range(ds.dim)] + ["label"]) + "\n")
        for row, lab in zip(ds.features, ds.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")
