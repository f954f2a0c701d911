"""Classification and embedding losses with analytic gradients.

All losses return exact gradients of the value actually computed, so every
gradient can be verified against central finite differences. Batch reductions
run in index order, which keeps results bit-stable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import NORM_EPS, DegenerateNormError, as_matrix

UNIT_ROW_TOL = 1e-8


# ---------------------------------------------------------------------------
# Margin specification and the psi family
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MarginSpec:
    """Selects the target-logit angle transform psi and its parameters.

    kinds:
      plain            psi(t) = cos(t)
      angular          psi(t) = (-1)^k cos(m t) - 2k on t in [k pi/m, (k+1) pi/m]
      additive_angle   psi(t) = cos(t + alpha)
      combined         psi(t) = cos(m1 t - m2) - m3

    plain == angular(1) == additive_angle(0) == combined(1, 0, 0).
    """

    kind: str
    m: int = 1
    alpha: float = 0.0
    m1: float = 1.0
    m2: float = 0.0
    m3: float = 0.0

    def __post_init__(self):
        if self.kind not in ("plain", "angular", "additive_angle", "combined"):
            raise ValueError(f"unknown margin kind {self.kind!r}")
        if self.kind == "angular":
            if int(self.m) != self.m or self.m < 1:
                raise ValueError("angular margin m must be an integer >= 1")
        if self.kind == "additive_angle" and self.alpha < 0.0:
            raise ValueError("additive angle alpha must be >= 0")
        if self.kind == "combined":
            if self.m1 < 1.0 or self.m2 < 0.0 or self.m3 < 0.0:
                raise ValueError("combined margin requires m1 >= 1, m2 >= 0, m3 >= 0")

    @classmethod
    def plain(cls) -> "MarginSpec":
        return cls("plain")

    @classmethod
    def angular(cls, m: int) -> "MarginSpec":
        return cls("angular", m=int(m))

    @classmethod
    def additive_angle(cls, alpha: float) -> "MarginSpec":
        return cls("additive_angle", alpha=float(alpha))

    @classmethod
    def combined(cls, m1: float, m2: float, m3: float) -> "MarginSpec":
        return cls("combined", m1=float(m1), m2=float(m2), m3=float(m3))


def _check_theta(theta) -> np.ndarray:
    t = np.asarray(theta, dtype=np.float64)
    if np.any(t < 0.0) or np.any(t > np.pi):
        raise ValueError("theta must lie in [0, pi]")
    return t


def psi_eval(spec: MarginSpec, theta):
    """Evaluate psi at theta (scalar or array), theta in [0, pi]."""
    t = _check_theta(theta)
    if spec.kind == "plain":
        out = np.cos(t)
    elif spec.kind == "angular":
        m = int(spec.m)
        k = np.clip(np.floor(m * t / np.pi), 0, m - 1)
        sign = np.where(k % 2 == 0, 1.0, -1.0)
        out = sign * np.cos(m * t) - 2.0 * k
    elif spec.kind == "additive_angle":
        out = np.cos(t + spec.alpha)
    else:
        out = np.cos(spec.m1 * t - spec.m2) - spec.m3
    return float(out) if np.isscalar(theta) else out


def psi_grad(spec: MarginSpec, theta):
    """d psi / d theta. The angular branches share slope 0 at every knot,
    so evaluating the floor-selected branch equals the left-branch rule."""
    t = _check_theta(theta)
    if spec.kind == "plain":
        out = -np.sin(t)
    elif spec.kind == "angular":
        m = int(spec.m)
        k = np.clip(np.floor(m * t / np.pi), 0, m - 1)
        sign = np.where(k % 2 == 0, 1.0, -1.0)
        out = -m * sign * np.sin(m * t)
    elif spec.kind == "additive_angle":
        out = -np.sin(t + spec.alpha)
    else:
        out = -spec.m1 * np.sin(spec.m1 * t - spec.m2)
    return float(out) if np.isscalar(theta) else out


# ---------------------------------------------------------------------------
# Loss results
# ---------------------------------------------------------------------------

@dataclass
class LossGrad:
    """Loss value plus gradients and the per-class weight-gradient split.

    term1 collects own-class contributions (pull toward the class), term2 the
    other-class contributions (push away). term1 + term2 == d_weights holds
    exactly for softmax_ce; the margin/center losses report zeros there.
    """

    loss: float
    d_features: np.ndarray
    d_weights: np.ndarray
    term1: np.ndarray
    term2: np.ndarray
    extras: dict = field(default_factory=dict)


def _check_labels(y, n: int, num_classes: int) -> np.ndarray:
    labels = np.asarray(y)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    return labels.astype(np.int64)


def _softmax_rows(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row softmax and row log-sum-exp, max-shifted."""
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    return e / s, (m + np.log(s)).ravel()


# ---------------------------------------------------------------------------
# Classical softmax cross-entropy
# ---------------------------------------------------------------------------

def softmax_ce(X, y, W, b=None) -> LossGrad:
    """Mean softmax cross-entropy on logits X W^T (+ b) with integer labels.

    d_features and d_weights are exact gradients of the mean loss. The weight
    gradient is assembled as term1 + term2, where term1 sums contributions of
    samples from the class itself and term2 those of every other class; the
    decomposition is exact by construction.
    """
    Xm = as_matrix(X, "features")
    Wm = as_matrix(W, "weights")
    n, d = Xm.shape
    K = Wm.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if Wm.shape[1] != d:
        raise ValueError(f"weights must be K x {d}, got {Wm.shape}")
    labels = _check_labels(y, n, K)

    logits = Xm @ Wm.T
    if b is not None:
        bias = np.ascontiguousarray(b, dtype=np.float64)
        if bias.shape != (K,):
            raise ValueError(f"bias must have shape ({K},), got {bias.shape}")
        logits = logits + bias

    P, lse = _softmax_rows(logits)
    idx = np.arange(n)
    loss = float(np.mean(lse - logits[idx, labels]))

    dZ = P.copy()
    dZ[idx, labels] -= 1.0
    dZ /= n
    d_features = dZ @ Wm

    own = np.zeros_like(P)
    own[idx, labels] = 1.0
    M1 = (P - 1.0) * own       # rows acting on their own class column
    M2 = P * (1.0 - own)       # rows acting on other class columns
    term1 = (M1.T @ Xm) / n
    term2 = (M2.T @ Xm) / n
    d_weights = term1 + term2

    return LossGrad(loss, d_features, d_weights, term1, term2,
                    extras={"probs": P})


# ---------------------------------------------------------------------------
# Shared machinery for the angle-margin losses
# ---------------------------------------------------------------------------

def _target_logit_pieces(Xm, labels, proto_unit, proto_norms, spec):
    """Per-sample target logit r*psi(theta) and its gradient pieces.

    theta is the true angle between feature i and prototype labels[i]
    (both normalized), so the value is invariant to prototype scale.
    Returns (z_target, d_x_target, d_proto_target, r, xhat).
    """
    r = np.linalg.norm(Xm, axis=1)
    if np.any(r <= NORM_EPS):
        bad = int(np.argmin(r))
        raise DegenerateNormError(f"feature row {bad} has norm {r[bad]:.3e}")
    xhat = Xm / r[:, None]
    proto_t = proto_unit[labels]                       # n x d unit rows
    u = np.clip(np.einsum("ij,ij->i", xhat, proto_t), -1.0, 1.0)
    theta = np.arccos(u)
    psi = psi_eval(spec, theta)
    dpsi = psi_grad(spec, theta)
    # s = sin(theta); the floor keeps exactly (anti)parallel pairs finite,
    # a measure-zero configuration the losses never meet on random data.
    s = np.maximum(np.sqrt(np.maximum(1.0 - u * u, 0.0)), NORM_EPS)

    z_target = r * psi
    # d/dx [r psi(theta)] = psi * xhat - (dpsi/s) * (proto - u*xhat)
    coef = dpsi / s
    d_x_target = psi[:, None] * xhat - coef[:, None] * (proto_t - u[:, None] * xhat)
    # d/dc [r psi(theta)] = -(r dpsi / s) * (xhat - u*proto) / ||c||
    scale = (r * coef / proto_norms[labels])[:, None]
    d_proto_target = -scale * (xhat - u[:, None] * proto_t)
    return z_target, d_x_target, d_proto_target, r, xhat


def margin_softmax(X, y, W, spec: MarginSpec, validate_weights: bool = True) -> LossGrad:
    """Mean margin softmax: target logit ||x|| psi(theta_y), others w_j^T x.

    W rows must be unit norm (checked to 1e-8). Internally the rows are
    normalized before any angle or logit is formed, which extends the loss
    smoothly off the unit sphere; pass validate_weights=False to evaluate at
    slightly perturbed weights, e.g. inside a finite-difference check.

    With spec=plain this equals biasless softmax_ce on logits w_j^T x.
    """
    Xm = as_matrix(X, "features")
    Wm = as_matrix(W, "weights")
    n, d = Xm.shape
    K = Wm.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if Wm.shape[1] != d:
        raise ValueError(f"weights must be K x {d}, got {Wm.shape}")
    labels = _check_labels(y, n, K)

    wnorms = np.linalg.norm(Wm, axis=1)
    if np.any(wnorms <= NORM_EPS):
        raise DegenerateNormError("weight row with near-zero norm")
    if validate_weights and np.any(np.abs(wnorms - 1.0) > UNIT_ROW_TOL):
        bad = int(np.argmax(np.abs(wnorms - 1.0)))
        raise ValueError(f"weight row {bad} is not unit norm (|w|={wnorms[bad]:.12f})")
    Wu = Wm / wnorms[:, None]

    z_t, d_x_t, d_w_t, r, xhat = _target_logit_pieces(Xm, labels, Wu, wnorms, spec)

    logits = Xm @ Wu.T                                   # ||x|| cos(theta_j)
    idx = np.arange(n)
    dots = logits.copy()
    logits[idx, labels] = z_t

    P, lse = _softmax_rows(logits)
    loss = float(np.mean(lse - z_t))

    G = P.copy()
    G[idx, labels] -= 1.0
    G /= n
    g_t = G[idx, labels].copy()
    G[idx, labels] = 0.0                                 # G now covers j != y_i only

    d_features = G @ Wu + g_t[:, None] * d_x_t

    # Non-target columns: d/dw_j [w_j^T x / ||w_j||] = (x - dot * w_hat)/||w_j||
    N1 = G.T @ Xm
    proj = (G * dots).sum(axis=0)
    d_weights = (N1 - proj[:, None] * Wu) / wnorms[:, None]
    np.add.at(d_weights, labels, g_t[:, None] * d_w_t)

    zeros = np.zeros_like(d_weights)
    return LossGrad(loss, d_features, d_weights, zeros, zeros.copy(),
                    extras={"probs": P})


def center_softmax(X, y, bank, spec: MarginSpec, validate_centers: bool = True) -> LossGrad:
    """Margin softmax against class-center prototypes instead of learned weights.

    The target logit is ||x|| psi(theta) with theta measured against the
    feature center of the sample's class; every other class contributes
    c_j^T x. Classes without a valid center estimate are excluded from the
    denominator, and a sample whose own class has no estimate is an error.

    d_weights holds d(loss)/d(centers) for diagnostics only: training must
    never apply it to the bank, whose rows move by their update strategy.
    """
    Xm = as_matrix(X, "features")
    Cm = as_matrix(bank.centers, "centers")
    n, d = Xm.shape
    K = Cm.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if Cm.shape[1] != d:
        raise ValueError(f"centers must be K x {d}, got {Cm.shape}")
    labels = _check_labels(y, n, K)

    flags = np.asarray(bank.degenerate, dtype=bool)
    if flags[labels].any():
        bad = int(labels[np.argmax(flags[labels])])
        raise ValueError(f"class {bad} appears in the batch but has no center estimate")

    cnorms = np.linalg.norm(Cm, axis=1)
    cnorms_safe = np.where(flags, 1.0, cnorms)
    if np.any(~flags & (cnorms <= NORM_EPS)):
        raise DegenerateNormError("non-degenerate center row with near-zero norm")
    if validate_centers and np.any(~flags & (np.abs(cnorms - 1.0) > UNIT_ROW_TOL)):
        bad = int(np.argmax(np.where(flags, 0.0, np.abs(cnorms - 1.0))))
        raise ValueError(f"center row {bad} is not unit norm")
    Cu = Cm / cnorms_safe[:, None]

    z_t, d_x_t, d_c_t, r, xhat = _target_logit_pieces(Xm, labels, Cu, cnorms_safe, spec)

    logits = Xm @ Cm.T                                   # raw c_j^T x
    idx = np.arange(n)
    logits[idx, labels] = z_t
    if flags.any():
        logits[:, flags] = -np.inf                       # no estimate, no vote

    P, lse = _softmax_rows(logits)
    loss = float(np.mean(lse - z_t))

    G = P.copy()
    G[idx, labels] -= 1.0
    G /= n
    g_t = G[idx, labels].copy()
    G[idx, labels] = 0.0

    d_features = G @ Cm + g_t[:, None] * d_x_t
    d_centers = G.T @ Xm                                 # raw-dot columns
    np.add.at(d_centers, labels, g_t[:, None] * d_c_t)
    d_centers[flags] = 0.0

    zeros = np.zeros_like(d_centers)
    return LossGrad(loss, d_features, d_centers, zeros, zeros.copy(),
                    extras={"probs": P})


# ---------------------------------------------------------------------------
# N-pairs loss over in-batch similarities
# ---------------------------------------------------------------------------

def npairs_loss(E, labels, pairs) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy over pairwise inner products S_ij = e_i^T e_j.

    For each positive pair (i, j) the target S_ij competes against S_ik for
    every k whose label differs from j's. Returns the mean pair loss and the
    exact gradient with respect to the embeddings.
    """
    Em = as_matrix(E, "embeddings")
    n = Em.shape[0]
    y = np.asarray(labels)
    if y.shape != (n,):
        raise ValueError(f"labels must have shape ({n},)")
    pair_list = [(int(i), int(j)) for i, j in pairs]
    if not pair_list:
        raise ValueError("empty positive pair set")
    for i, j in pair_list:
        if not (0 <= i < n and 0 <= j < n):
            raise ValueError(f"pair ({i}, {j}) out of range")
        if y[i] != y[j]:
            raise ValueError(f"pair ({i}, {j}) joins labels {y[i]} and {y[j]}")

    S = Em @ Em.T
    total = 0.0
    dE = np.zeros_like(Em)
    for i, j in pair_list:
        neg = np.flatnonzero(y != y[j])
        z = np.concatenate(([S[i, j]], S[i, neg]))
        m = z.max()
        e = np.exp(z - m)
        Z = e.sum()
        total += float(m + np.log(Z) - S[i, j])
        p = e / Z
        dE[i] += (p[0] - 1.0) * Em[j]
        dE[j] += (p[0] - 1.0) * Em[i]
        if neg.size:
            dE[i] += p[1:] @ Em[neg]
            dE[neg] += np.outer(p[1:], Em[i])
    count = len(pair_list)
    return total / count, dE / count


def aux_center_loss(x, c, validate_center: bool = True) -> tuple[float, np.ndarray]:
    """Squared distance from a unit center to the normalized feature.

    value = ||c - x/||x|| ||^2, gradient w.r.t. c is 2(c - x/||x||). The unit
    constraint on c is enforced afterwards by renormalization, not here;
    validate_center=False skips the unit check for finite-difference probes.
    """
    xv = np.ascontiguousarray(x, dtype=np.float64)
    cv = np.ascontiguousarray(c, dtype=np.float64)
    nx = float(np.linalg.norm(xv))
    if nx <= NORM_EPS:
        raise DegenerateNormError("aux_center_loss feature has near-zero norm")
    if validate_center and abs(float(np.linalg.norm(cv)) - 1.0) > UNIT_ROW_TOL:
        raise ValueError("aux_center_loss center must be unit norm")
    diff = cv - xv / nx
    return float(diff @ diff), 2.0 * diff
