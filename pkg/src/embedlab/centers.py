"""Per-class unit-norm prototype centers and their update strategies.

A CenterBank keeps one prototype row per class. Rows without a valid estimate
are flagged degenerate and stored as zeros; every valid row stays unit norm
after any update. Updates touch only the classes present in a batch, so a
class's prototype depends on that class's samples alone.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from .numerics import NORM_EPS, as_matrix, cosine_angle

BANK_FORMAT_VERSION = 1


@dataclass(frozen=True)
class CenterStrategy:
    """How prototype rows move as batches arrive.

    exact     full-dataset mean of normalized features (the reference rule;
              not batch-updatable)
    instance  replace the row with the latest normalized sample
    memory    mean of the last `window` normalized samples per class
    auxloss   gradient step on ||c - x/||x||||^2 then renormalize, step size lr
    """

    kind: str
    window: int = 1
    lr: float = 0.5

    def __post_init__(self):
        if self.kind not in ("exact", "instance", "memory", "auxloss"):
            raise ValueError(f"unknown center strategy {self.kind!r}")
        if self.kind == "memory" and self.window < 1:
            raise ValueError("memory window must be >= 1")
        if self.kind == "auxloss" and not self.lr > 0.0:
            raise ValueError("auxloss lr must be > 0")

    @classmethod
    def exact(cls) -> "CenterStrategy":
        return cls("exact")

    @classmethod
    def instance_replace(cls) -> "CenterStrategy":
        return cls("instance")

    @classmethod
    def memory_bank(cls, window: int) -> "CenterStrategy":
        return cls("memory", window=int(window))

    @classmethod
    def aux_loss(cls, lr: float) -> "CenterStrategy":
        return cls("auxloss", lr=float(lr))


class CenterBank:
    """K x d prototype matrix with counts, degeneracy flags and strategy state."""

    def __init__(self, num_classes: int, dim: int, strategy: CenterStrategy):
        self.num_classes = int(num_classes)
        self.dim = int(dim)
        self.strategy = strategy
        self.centers = np.zeros((num_classes, dim))
        self.counts = np.zeros(num_classes, dtype=np.int64)
        self.degenerate = np.ones(num_classes, dtype=bool)
        self.skipped = 0  # degenerate samples dropped by updates
        self._history: list[deque] | None = None
        if strategy.kind == "memory":
            self._history = [deque(maxlen=strategy.window) for _ in range(num_classes)]

    def set_center(self, k: int, vector: np.ndarray) -> None:
        """Install a raw prototype for class k, normalizing it; flags on failure."""
        n = float(np.linalg.norm(vector))
        if n <= NORM_EPS:
            self.degenerate[k] = True
            return
        self.centers[k] = np.asarray(vector, dtype=np.float64) / n
        self.degenerate[k] = False

    def copy(self) -> "CenterBank":
        dup = CenterBank(self.num_classes, self.dim, self.strategy)
        dup.centers = self.centers.copy()
        dup.counts = self.counts.copy()
        dup.degenerate = self.degenerate.copy()
        dup.skipped = self.skipped
        if self._history is not None:
            dup._history = [deque(h, maxlen=self.strategy.window) for h in self._history]
        return dup


def _normalized_samples(X: np.ndarray, y: np.ndarray):
    """Split a batch into unit-norm rows and the indices of degenerate ones."""
    norms = np.linalg.norm(X, axis=1)
    ok = norms > NORM_EPS
    Xh = np.zeros_like(X)
    Xh[ok] = X[ok] / norms[ok, None]
    return Xh, ok


def exact_centers(X, y, num_classes: int, strategy: CenterStrategy | None = None) -> CenterBank:
    """Bank whose row j is the normalized mean of normalized class-j features.

    Classes with no samples, or whose mean direction collapses below the norm
    floor, are flagged degenerate rather than raising.
    """
    Xm = as_matrix(X, "features")
    n, d = Xm.shape
    if n < 1:
        raise ValueError("need at least one sample")
    labels = np.asarray(y, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},)")
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(f"labels must lie in [0, {num_classes})")

    bank = CenterBank(num_classes, d, strategy or CenterStrategy.exact())
    Xh, ok = _normalized_samples(Xm, labels)
    bank.skipped += int((~ok).sum())
    sums = np.zeros((num_classes, d))
    np.add.at(sums, labels[ok], Xh[ok])
    counts = np.bincount(labels[ok], minlength=num_classes)
    bank.counts = counts.astype(np.int64)
    for k in range(num_classes):
        if counts[k] > 0:
            bank.set_center(k, sums[k] / counts[k])
    return bank


def cold_start_bank(num_classes: int, dim: int, strategy: CenterStrategy, stream) -> CenterBank:
    """Bank of random unit prototypes, for training without a warm start."""
    bank = CenterBank(num_classes, dim, strategy)
    for k in range(num_classes):
        v = stream.normal((dim,))
        while np.linalg.norm(v) <= NORM_EPS:
            v = stream.normal((dim,))
        bank.set_center(k, v)
    bank.counts[:] = 0
    return bank


def update_from_batch(bank: CenterBank, X_batch, y_batch) -> CenterBank:
    """Apply the bank's strategy to one batch, in place; returns the bank.

    Classes absent from the batch keep their rows bit-identical. Samples with
    a degenerate norm are dropped and counted in bank.skipped.
    """
    Xm = as_matrix(X_batch, "batch features")
    n = Xm.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    labels = np.asarray(y_batch, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},)")
    if labels.min() < 0 or labels.max() >= bank.num_classes:
        raise ValueError(f"labels must lie in [0, {bank.num_classes})")
    kind = bank.strategy.kind
    if kind == "exact":
        raise ValueError("exact strategy recomputes from the full dataset; "
                         "it has no per-batch update rule")

    Xh, ok = _normalized_samples(Xm, labels)
    bank.skipped += int((~ok).sum())
    valid = np.flatnonzero(ok)
    present = np.unique(labels[valid])

    if kind == "instance":
        for i in valid:                       # index order: last occurrence wins
            bank.set_center(labels[i], Xh[i])
    elif kind == "memory":
        assert bank._history is not None
        for i in valid:
            bank._history[labels[i]].append(Xh[i].copy())
        for k in present:
            hist = bank._history[k]
            bank.set_center(k, np.mean(hist, axis=0))
    else:  # auxloss
        lr = bank.strategy.lr
        for k in present:
            members = valid[labels[valid] == k]
            xbar = Xh[members].mean(axis=0)
            if bank.degenerate[k]:
                # no estimate to step from: seed with the batch mean direction
                bank.set_center(k, xbar)
                continue
            grad = 2.0 * (bank.centers[k] - xbar)
            bank.set_center(k, bank.centers[k] - lr * grad)

    counts = np.bincount(labels[valid], minlength=bank.num_classes)
    bank.counts += counts.astype(np.int64)
    return bank


def weight_center_gap(rows_or_bank, exact: CenterBank) -> dict[int, float]:
    """Angle per class between a prototype/weight row and the exact center.

    Classes where either side is degenerate are omitted from the result.
    """
    if isinstance(rows_or_bank, CenterBank):
        rows = rows_or_bank.centers
        row_bad = rows_or_bank.degenerate.copy()
    else:
        rows = as_matrix(rows_or_bank, "weight rows")
        row_bad = np.linalg.norm(rows, axis=1) <= NORM_EPS
    if rows.shape != exact.centers.shape:
        raise ValueError(f"shape mismatch: {rows.shape} vs {exact.centers.shape}")
    gaps: dict[int, float] = {}
    for k in range(exact.num_classes):
        if row_bad[k] or exact.degenerate[k]:
            continue
        gaps[k] = cosine_angle(rows[k], exact.centers[k])
    return gaps


# ---------------------------------------------------------------------------
# Serialization (versioned JSON; floats round-trip exactly)
# ---------------------------------------------------------------------------

def bank_to_doc(bank: CenterBank) -> dict:
    return {
        "format": "embedlab-center-bank",
        "version": BANK_FORMAT_VERSION,
        "num_classes": bank.num_classes,
        "dim": bank.dim,
        "strategy": {"kind": bank.strategy.kind,
                     "window": bank.strategy.window,
                     "lr": bank.strategy.lr},
        "degenerate": bank.degenerate.tolist(),
        "counts": bank.counts.tolist(),
        "skipped": bank.skipped,
        "centers": bank.centers.tolist(),
        "history": None if bank._history is None
                   else [[row.tolist() for row in h] for h in bank._history],
    }


def bank_from_doc(doc: dict) -> CenterBank:
    if doc.get("format") != "embedlab-center-bank":
        raise ValueError("not a center bank document")
    if doc.get("version") != BANK_FORMAT_VERSION:
        raise ValueError(f"unsupported bank version {doc.get('version')}")
    strat = CenterStrategy(doc["strategy"]["kind"],
                           window=int(doc["strategy"]["window"]),
                           lr=float(doc["strategy"]["lr"]))
    bank = CenterBank(doc["num_classes"], doc["dim"], strat)
    bank.centers = np.asarray(doc["centers"], dtype=np.float64).reshape(
        doc["num_classes"], doc["dim"])
    bank.degenerate = np.asarray(doc["degenerate"], dtype=bool)
    bank.counts = np.asarray(doc["counts"], dtype=np.int64)
    bank.skipped = int(doc["skipped"])
    if doc["history"] is not None:
        bank._history = [deque((np.asarray(r, dtype=np.float64) for r in h),
                               maxlen=strat.window)
                         for h in doc["history"]]
    return bank


def save_bank(bank: CenterBank, path) -> None:
    with open(path, "w") as fh:
        json.dump(bank_to_doc(bank), fh, sort_keys=True)


def load_bank(path) -> CenterBank:
    with open(path) as fh:
        return bank_from_doc(json.load(fh))
