"""Datasets and deterministic mini-batch sampling.

Synthetic data are Gaussian blobs with one class mean per class placed on a
scaled coordinate simplex (pairwise mean distance equals ``margin``). The IDX
reader ingests the classic big-endian image/label format, optionally
gzip-compressed. All sampling is a pure function of (seed, policy, step).
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, CountMismatch, EmptyDataset, TruncatedFile
from .models import MlpSpec, mlp_oracle
from .oracle import CallCounter
from .rng import STREAM_BATCH, STREAM_DATA_TEST, STREAM_DATA_TRAIN, stream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801

POLICY_SHUFFLE = "shuffle-each-epoch"
POLICY_REPLACEMENT = "with-replacement"
POLICY_ENUMERATION = "full-enumeration"
POLICIES = (POLICY_SHUFFLE, POLICY_REPLACEMENT, POLICY_ENUMERATION)


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=np.float64))
        labels = np.asarray(self.labels)
        object.__setattr__(self, "labels", labels)
        if self.inputs.shape[0] != labels.shape[0]:
            raise ValueError("inputs and labels disagree on row count")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def take(self, idx: np.ndarray) -> tuple:
        return self.inputs[idx], self.labels[idx]


def gen_synthetic(n: int, dim: int, classes: int, margin: float, seed: int,
                  split: str = "train") -> Dataset:
    """Balanced Gaussian blobs; label of row i is i mod classes."""
    if n < 1 or dim < 1 or classes < 1:
        raise ValueError("n, dim and classes must all be >= 1")
    if classes > dim:
        raise ValueError("the simplex embedding needs dim >= classes")
    sid = STREAM_DATA_TRAIN if split == "train" else STREAM_DATA_TEST
    rng = stream(seed, sid)
    means = np.zeros((classes, dim))
    np.fill_diagonal(means[:, :classes], margin / np.sqrt(2.0))
    labels = np.arange(n, dtype=np.int64) % classes
    inputs = means[labels] + rng.standard_normal((n, dim))
    return Dataset(inputs, labels, split)


def _read_exact(fh, count: int, what: str) -> bytes:
    data = fh.read(count)
    if len(data) != count:
        raise TruncatedFile(f"{what}: expected {count} bytes, got {len(data)}")
    return data


def _open_idx(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Read an IDX image/label pair; pixels scaled to [0, 1]."""
    with _open_idx(images_path) as fh:
        magic, count, rows, cols = struct.unpack(">IIII", _read_exact(fh, 16, "image header"))
        if magic != IDX_IMAGE_MAGIC:
            raise BadMagic(f"image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}")
        raw = _read_exact(fh, count * rows * cols, "image data")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    with _open_idx(labels_path) as fh:
        magic, label_count = struct.unpack(">II", _read_exact(fh, 8, "label header"))
        if magic != IDX_LABEL_MAGIC:
            raise BadMagic(f"label magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}")
        labels = np.frombuffer(_read_exact(fh, label_count, "label data"), dtype=np.uint8)
    if count != label_count:
        raise CountMismatch(f"{count} images vs {label_count} labels")
    return Dataset(images / 255.0, labels.astype(np.int64), split)


@dataclass(frozen=True)
class BatchSampler:
    """Deterministic batch index source; see POLICIES for the options."""

    batch_size: int
    seed: int
    policy: str = POLICY_SHUFFLE

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.policy not in POLICIES:
            raise ValueError(f"unknown sampling policy {self.policy!r}")


def enumeration_batches(n: int, batch_size: int) -> list:
    """The fixed partition [0,B), [B,2B), ... used for exact expectations."""
    if n < 1:
        raise EmptyDataset("cannot partition an empty dataset")
    return [np.arange(lo, min(lo + batch_size, n))
            for lo in range(0, n, batch_size)]


def sample_batch(sampler: BatchSampler, dataset: Dataset, step: int) -> np.ndarray:
    """Index set for the given step, fully determined by (seed, policy, step)."""
    n = dataset.n
    if n == 0:
        raise EmptyDataset("dataset has no rows")
    if step < 0:
        raise ValueError("step must be >= 0")
    b = sampler.batch_size
    if sampler.policy == POLICY_REPLACEMENT:
        return stream(sampler.seed, STREAM_BATCH, step).integers(0, n, size=b)
    if sampler.policy == POLICY_ENUMERATION:
        parts = enumeration_batches(n, b)
        return parts[step % len(parts)]
    # shuffle-each-epoch: one permutation per epoch, last partial batch dropped
    per_epoch = n // b
    if per_epoch == 0:
        raise EmptyDataset(f"batch size {b} exceeds dataset size {n}")
    epoch, slot = divmod(step, per_epoch)
    perm = stream(sampler.seed, STREAM_BATCH, epoch).permutation(n)
    return perm[slot * b:(slot + 1) * b]


class OracleFamily:
    """Per-batch oracles over a fixed partition, with exact expectations.

    Expectations weight each batch by its share of the dataset, so linear
    per-batch statistics average exactly to the full-dataset statistic.
    """

    def __init__(self, oracles: list, weights: np.ndarray,
                 counter: CallCounter | None = None):
        if len(oracles) != len(weights):
            raise ValueError("one weight per oracle required")
        self.oracles = list(oracles)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.weights = self.weights / self.weights.sum()
        self.counter = counter
        self.dim = oracles[0].dim

    def __len__(self) -> int:
        return len(self.oracles)

    def mean(self, per_batch: list) -> np.ndarray:
        acc = self.weights[0] * np.asarray(per_batch[0], dtype=np.float64)
        for w, v in zip(self.weights[1:], per_batch[1:]):
            acc = acc + w * np.asarray(v, dtype=np.float64)
        return acc


def mlp_family(spec: MlpSpec, dataset: Dataset, batch_size: int,
               mode: str = "exact", counter: CallCounter | None = None) -> OracleFamily:
    parts = enumeration_batches(dataset.n, batch_size)
    oracles = [mlp_oracle(spec, *dataset.take(idx), mode=mode, counter=counter)
               for idx in parts]
    return OracleFamily(oracles, np.array([len(p) for p in parts], dtype=np.float64),
                        counter=counter)


def analytic_family(oracles: list, counter: CallCounter | None = None) -> OracleFamily:
    """Equal-weight family over hand-built oracles (toy problems, tests)."""
    return OracleFamily(list(oracles), np.ones(len(oracles)), counter=counter)
