"""Central finite-difference verification of every analytic gradient.

Each check draws random small instances, compares the analytic gradient of a
block (features, weights, centers, embeddings) against central differences
with h = 1e-5, and reports the worst norm-relative error. Instances whose
target angle falls within 1e-3 of a psi branch knot (or of the 0/pi domain
ends, where arccos is ill-conditioned) are redrawn.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .centers import CenterBank, CenterStrategy
from .losses import (MarginSpec, aux_center_loss, center_softmax,
                     margin_softmax, npairs_loss, softmax_ce)
from .numerics import RandomStream

FD_STEP = 1e-5
PASS_TOL = 1e-6
KNOT_BUFFER = 1e-3


def fd_grad(f, arr: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. arr, mutated in place."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        g[idx] = (fp - fm) / (2.0 * h)
        it.iternext()
    return g


def rel_err(analytic: np.ndarray, fd: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(fd)), 1e-12)
    return float(np.linalg.norm(analytic - fd)) / denom


def _psi_knots(spec: MarginSpec) -> np.ndarray:
    inner = (np.arange(1, spec.m) * np.pi / spec.m
             if spec.kind == "angular" else np.empty(0))
    return np.concatenate((inner, [0.0, np.pi]))


def _target_angles(X, y, rows) -> np.ndarray:
    xh = X / np.linalg.norm(X, axis=1)[:, None]
    rh = rows / np.linalg.norm(rows, axis=1)[:, None]
    u = np.clip(np.einsum("ij,ij->i", xh, rh[y]), -1.0, 1.0)
    return np.arccos(u)


def _near_knot(theta: np.ndarray, spec: MarginSpec) -> bool:
    knots = _psi_knots(spec)
    return bool(np.any(np.abs(theta[:, None] - knots[None, :]) < KNOT_BUFFER))


@dataclass
class GradcheckResult:
    name: str
    max_rel_err: float
    points: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= PASS_TOL


def _check_softmax(stream: RandomStream, points: int) -> float:
    worst = 0.0
    for p in range(points):
        n, d, K = 4, 3, 5
        X = stream.normal((n, d))
        W = stream.normal((K, d), scale=0.5)
        y = stream.integers(0, K, size=n)
        b = stream.normal((K,), scale=0.2) if p % 2 else None
        lg = softmax_ce(X, y, W, b)
        worst = max(worst,
                    rel_err(lg.d_features, fd_grad(lambda: softmax_ce(X, y, W, b).loss, X)),
                    rel_err(lg.d_weights, fd_grad(lambda: softmax_ce(X, y, W, b).loss, W)))
    return worst


def _check_margin(spec: MarginSpec, stream: RandomStream, points: int) -> float:
    worst = 0.0
    done = 0
    while done < points:
        n, d, K = 4, 4, 5
        X = stream.normal((n, d)) + 0.5
        W = stream.normal((K, d))
        W = W / np.linalg.norm(W, axis=1)[:, None]
        y = stream.integers(0, K, size=n)
        if _near_knot(_target_angles(X, y, W), spec):
            continue
        lg = margin_softmax(X, y, W, spec)

        def f():
            return margin_softmax(X, y, W, spec, validate_weights=False).loss

        worst = max(worst,
                    rel_err(lg.d_features, fd_grad(f, X)),
                    rel_err(lg.d_weights, fd_grad(f, W)))
        done += 1
    return worst


def _check_center(spec: MarginSpec, stream: RandomStream, points: int) -> float:
    worst = 0.0
    done = 0
    while done < points:
        n, d, K = 4, 4, 5
        X = stream.normal((n, d)) + 0.5
        C = stream.normal((K, d))
        C = C / np.linalg.norm(C, axis=1)[:, None]
        y = stream.integers(0, K, size=n)
        if _near_knot(_target_angles(X, y, C), spec):
            continue
        bank = CenterBank(K, d, CenterStrategy.instance_replace())
        bank.centers = C
        bank.degenerate[:] = False
        lg = center_softmax(X, y, bank, spec)

        def f():
            return center_softmax(X, y, bank, spec, validate_centers=False).loss

        worst = max(worst,
                    rel_err(lg.d_features, fd_grad(f, X)),
                    rel_err(lg.d_weights, fd_grad(f, bank.centers)))
        done += 1
    return worst


def _check_npairs(stream: RandomStream, points: int) -> float:
    worst = 0.0
    for _ in range(points):
        n, d = 6, 4
        E = stream.normal((n, d))
        y = np.repeat(np.arange(3), 2)
        pairs = [(i, j) for i in range(n) for j in range(n)
                 if i != j and y[i] == y[j]]
        _, dE = npairs_loss(E, y, pairs)
        fd = fd_grad(lambda: npairs_loss(E, y, pairs)[0], E)
        worst = max(worst, rel_err(dE, fd))
    return worst


def _check_aux(stream: RandomStream, points: int) -> float:
    worst = 0.0
    for _ in range(points):
        d = 5
        x = stream.normal((d,)) + 0.3
        c = stream.normal((d,))
        c = c / np.linalg.norm(c)
        _, dc = aux_center_loss(x, c)
        fd = fd_grad(lambda: aux_center_loss(x, c, validate_center=False)[0], c)
        worst = max(worst, rel_err(dc, fd))
    return worst


CHECKS = {
    "softmax_ce": lambda s, p: _check_softmax(s, p),
    "margin_plain": lambda s, p: _check_margin(MarginSpec.plain(), s, p),
    "margin_angular_m2": lambda s, p: _check_margin(MarginSpec.angular(2), s, p),
    "margin_angular_m4": lambda s, p: _check_margin(MarginSpec.angular(4), s, p),
    "margin_additive": lambda s, p: _check_margin(MarginSpec.additive_angle(0.35), s, p),
    "margin_combined": lambda s, p: _check_margin(MarginSpec.combined(1.35, 0.3, 0.2), s, p),
    "center_plain": lambda s, p: _check_center(MarginSpec.plain(), s, p),
    "center_angular_m4": lambda s, p: _check_center(MarginSpec.angular(4), s, p),
    "center_additive": lambda s, p: _check_center(MarginSpec.additive_angle(0.35), s, p),
    "npairs": lambda s, p: _check_npairs(s, p),
    "aux_center": lambda s, p: _check_aux(s, p),
}


def run_gradcheck(seed: int = 0, name_filter: str | None = None,
                  points: int = 100, perturb: bool = False) -> list[GradcheckResult]:
    """Run the finite-difference suite; `perturb` injects a fault so a caller
    can verify that failures are detected and reported."""
    root = RandomStream(seed)
    results = []
    for name, check in CHECKS.items():
        stream = root.split()   # every check consumes a stream, filtered or not
        if name_filter and name_filter not in name:
            continue
        err = check(stream, points)
        if perturb:
            err += 1e-3
        results.append(GradcheckResult(name, err, points))
    return results
