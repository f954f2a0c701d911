"""Small fully-connected embedder with manual backpropagation and momentum SGD."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .numerics import RandomStream, as_matrix

CHECKPOINT_FORMAT_VERSION = 1

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths input -> ... -> embedding dim, plus the hidden activation."""

    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and embedding sizes")
        if any(int(s) <= 0 for s in self.layer_sizes):
            raise ValueError("layer sizes must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"activation must be one of {_ACTIVATIONS}")
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))

    @property
    def embedding_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]


@dataclass
class MlpParams:
    weights: list[np.ndarray]   # layer l: (fan_out, fan_in)
    biases: list[np.ndarray]    # layer l: (fan_out,)
    activation: str = "relu"

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         self.activation)


def init_params(spec: MlpSpec, stream: RandomStream) -> MlpParams:
    """Uniform(-a, a) weights with a = sqrt(6/(fan_in+fan_out)); zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(stream.uniform(-a, a, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, spec.activation)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]      # input to each affine layer
    preacts: list[np.ndarray]     # affine outputs before activation
    params_token: object          # identity of the params the cache came from


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def mlp_forward(params: MlpParams, X) -> tuple[np.ndarray, ForwardCache]:
    """Affine + activation stack; the final layer is linear (the embedding)."""
    h = as_matrix(X, "network input")
    if h.shape[1] != params.weights[0].shape[1]:
        raise ValueError(f"input dim {h.shape[1]} does not match "
                         f"first layer fan-in {params.weights[0].shape[1]}")
    inputs, preacts = [], []
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ W.T + b
        preacts.append(z)
        h = z if l == last else _activate(z, params.activation)
    return h, ForwardCache(inputs, preacts, params_token=id(params))


@dataclass
class MlpGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]


def mlp_backward(params: MlpParams, cache: ForwardCache, d_embeddings) -> MlpGrads:
    """Exact reverse-mode gradients for the cached forward pass."""
    if cache.params_token != id(params):
        raise ValueError("stale cache: forward was run with different parameters")
    dE = np.asarray(d_embeddings, dtype=np.float64)
    if dE.shape != cache.preacts[-1].shape:
        raise ValueError(f"d_embeddings shape {dE.shape} does not match "
                         f"forward output {cache.preacts[-1].shape}")
    dW = [np.empty_like(W) for W in params.weights]
    db = [np.empty_like(b) for b in params.biases]
    delta = dE
    last = len(params.weights) - 1
    for l in range(last, -1, -1):
        if l != last:
            z = cache.preacts[l]
            if params.activation == "relu":
                delta = delta * (z > 0.0)
            else:
                t = np.tanh(z)
                delta = delta * (1.0 - t * t)
        dW[l] = delta.T @ cache.inputs[l]
        db[l] = delta.sum(axis=0)
        if l > 0:
            delta = delta @ params.weights[l]
    return MlpGrads(dW, db)


@dataclass
class MomentumState:
    velocities_w: list[np.ndarray] = field(default_factory=list)
    velocities_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams) -> "MomentumState":
        return cls([np.zeros_like(w) for w in params.weights],
                   [np.zeros_like(b) for b in params.biases])


def sgd_step(params: MlpParams, grads: MlpGrads, lr: float,
             state: MomentumState | None = None, momentum: float = 0.0) -> MomentumState:
    """Classical momentum update v <- mu v - lr g; theta <- theta + v. In place."""
    if state is None:
        state = MomentumState.for_params(params)
    for l, (gw, gb) in enumerate(zip(grads.weights, grads.biases)):
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise ValueError(f"non-finite gradient in layer {l}")
        state.velocities_w[l] = momentum * state.velocities_w[l] - lr * gw
        state.velocities_b[l] = momentum * state.velocities_b[l] - lr * gb
        params.weights[l] += state.velocities_w[l]
        params.biases[l] += state.velocities_b[l]
    return state


# ---------------------------------------------------------------------------
# Checkpoints (versioned JSON; floats round-trip exactly)
# ---------------------------------------------------------------------------

def config_hash(config_dict: dict) -> str:
    blob = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def save_checkpoint(path, params: MlpParams, head=None, bank_doc=None,
                    cfg_hash: str = "") -> None:
    doc = {
        "format": "embedlab-checkpoint",
        "version": CHECKPOINT_FORMAT_VERSION,
        "config_hash": cfg_hash,
        "activation": params.activation,
        "weights": [w.tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
        "head": None if head is None else np.asarray(head).tolist(),
        "bank": bank_doc,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "embedlab-checkpoint":
        raise ValueError("not a checkpoint file")
    if doc.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    params = MlpParams([np.asarray(w, dtype=np.float64) for w in doc["weights"]],
                       [np.asarray(b, dtype=np.float64) for b in doc["biases"]],
                       doc["activation"])
    head = None if doc["head"] is None else np.asarray(doc["head"], dtype=np.float64)
    return {"params": params, "head": head, "bank": doc["bank"],
            "config_hash": doc["config_hash"]}
