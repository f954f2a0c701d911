"""Shared numerical primitives: stable reductions, unit vectors, angles, seeded RNG.

Everything here is pure and double precision. The random stream wraps NumPy's
PCG64 generator, so a fixed seed reproduces the same draws on every platform.
"""
from __future__ import annotations

import numpy as np

# Norm floor below which a vector has no usable direction.
NORM_EPS = 1e-12


class DegenerateNormError(ValueError):
    """Raised when a vector's norm is too close to zero to define a direction."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array (row-major)."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_vector(a, name: str = "vector") -> np.ndarray:
    """Coerce to a finite 1-D float64 array."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def log_sum_exp(v) -> float:
    """log(sum(exp(v))) via max-shift; finite whenever v is finite."""
    arr = as_vector(v, "log_sum_exp input")
    if arr.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    m = float(arr.max())
    return m + float(np.log(np.exp(arr - m).sum()))


def l2_normalize(v) -> np.ndarray:
    """Return v / ||v||_2; raises DegenerateNormError when ||v|| <= NORM_EPS."""
    arr = as_vector(v, "l2_normalize input")
    n = float(np.linalg.norm(arr))
    if n <= NORM_EPS:
        raise DegenerateNormError(f"cannot normalize vector with norm {n:.3e}")
    return arr / n


def normalize_rows(mat: np.ndarray, name: str = "matrix") -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize a matrix; returns (unit rows, original row norms).

    Raises DegenerateNormError if any row norm is at or below NORM_EPS.
    """
    arr = as_matrix(mat, name)
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms <= NORM_EPS):
        bad = int(np.argmin(norms))
        raise DegenerateNormError(f"row {bad} of {name} has norm {norms[bad]:.3e}")
    return arr / norms[:, None], norms


def cosine_angle(u, v) -> float:
    """Angle in radians between u and v, in [0, pi].

    The cosine is clamped into [-1, 1] before arccos so rounding never
    produces NaN at (anti)parallel inputs.
    """
    uu = as_vector(u, "cosine_angle u")
    vv = as_vector(v, "cosine_angle v")
    nu = float(np.linalg.norm(uu))
    nv = float(np.linalg.norm(vv))
    if nu <= NORM_EPS or nv <= NORM_EPS:
        raise DegenerateNormError("cosine_angle of a near-zero vector")
    c = float(np.dot(uu, vv) / (nu * nv))
    return float(np.arccos(min(1.0, max(-1.0, c))))


class RandomStream:
    """Seedable, splittable PRNG (NumPy PCG64 behind a SeedSequence).

    A fixed seed reproduces bit-identical draws across runs and platforms.
    Each call to split() derives an independent child stream; the sequence of
    children is itself deterministic. A stream is single-owner: never share
    one across concurrent tasks.
    """

    def __init__(self, seed: int | None = None, _seq: np.random.SeedSequence | None = None):
        self._seq = np.random.SeedSequence(seed) if _seq is None else _seq
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def split(self) -> "RandomStream":
        return RandomStream(_seq=self._seq.spawn(1)[0])

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return scale * self._gen.standard_normal(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, a, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(a, size=size, replace=replace)
