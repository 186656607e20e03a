"""Context-window tanh MLP producing unnormalised per-frame label scores.

All parameters live in one flat float64 vector; layer matrices are views into
it, so snapshots, Fisher diagonals and optimizer state share one indexing.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidInput, NumericalError


@dataclass(frozen=True)
class NetConfig:
    feature_dim: int = 6
    num_labels: int = 8
    context_radius: int = 1
    hidden_dims: tuple[int, ...] = (32, 32)

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.feature_dim < 1 or self.num_labels < 1 or self.context_radius < 0:
            raise InvalidInput(f"bad network dimensions: {self}")

    @property
    def input_dim(self) -> int:
        return (2 * self.context_radius + 1) * self.feature_dim

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_labels]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes())


@dataclass(eq=False)
class ModelParams:
    config: NetConfig
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.vector.shape != (self.config.num_params,):
            raise InvalidInput(
                f"parameter vector has shape {self.vector.shape}, expected ({self.config.num_params},)"
            )

    @classmethod
    def zeros(cls, config: NetConfig) -> "ModelParams":
        return cls(config, np.zeros(config.num_params))

    @classmethod
    def init(cls, config: NetConfig, seed: int) -> "ModelParams":
        """Xavier-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        parts = []
        for fan_in, fan_out in config.layer_shapes():
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            parts.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
            parts.append(np.zeros(fan_out))
        return cls(config, np.concatenate(parts))

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return _layer_views(self.config, self.vector)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.vector.copy())


def _layer_views(config: NetConfig, vec: np.ndarray):
    out = []
    pos = 0
    for fan_in, fan_out in config.layer_shapes():
        W = vec[pos : pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = vec[pos : pos + fan_out]
        pos += fan_out
        out.append((W, b))
    return out


def splice(features: np.ndarray, radius: int) -> np.ndarray:
    """Stack frames t-r..t+r side by side, replicating the edge frames."""
    T = features.shape[0]
    if radius == 0:
        return features
    idx = np.clip(np.arange(T)[:, None] + np.arange(-radius, radius + 1)[None, :], 0, T - 1)
    return features[idx].reshape(T, -1)


@dataclass
class ForwardCache:
    params: ModelParams
    activations: list[np.ndarray]  # layer inputs, spliced features first
    lengths: list[int] = field(default_factory=list)


def _check_features(config: NetConfig, features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] != config.feature_dim:
        raise InvalidInput(f"features must be T x {config.feature_dim}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput("features must be finite")
    return x


def _run_layers(params: ModelParams, x: np.ndarray):
    acts = [x]
    layers = params.layers()
    h = x
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = layers[-1]
    return h @ W + b, acts


def forward(params: ModelParams, features) -> tuple[np.ndarray, ForwardCache]:
    x = _check_features(params.config, features)
    em, acts = _run_layers(params, splice(x, params.config.context_radius))
    return em, ForwardCache(params, acts, [x.shape[0]])


def forward_many(params: ModelParams, feature_list: Sequence[np.ndarray]) -> tuple[list[np.ndarray], ForwardCache]:
    """Forward several utterances in one stacked pass; splicing stays per utterance."""
    xs = [splice(_check_features(params.config, f), params.config.context_radius) for f in feature_list]
    lengths = [x.shape[0] for x in xs]
    em, acts = _run_layers(params, np.concatenate(xs, axis=0))
    splits = np.cumsum(lengths)[:-1]
    return np.split(em, splits, axis=0), ForwardCache(params, acts, lengths)


def backward(params: ModelParams, cache: ForwardCache, grad_wrt_emissions) -> np.ndarray:
    """Gradient of sum(grad_wrt_emissions * emissions) w.r.t. the parameter vector.

    For a cache from :func:`forward_many`, pass either one stacked matrix or a
    list with one matrix per utterance.
    """
    if cache.params is not params:
        raise InvalidInput("stale cache: it was produced by a different parameter object")
    if isinstance(grad_wrt_emissions, (list, tuple)):
        g = np.concatenate([np.asarray(x, dtype=np.float64) for x in grad_wrt_emissions], axis=0)
    else:
        g = np.asarray(grad_wrt_emissions, dtype=np.float64)
    T = cache.activations[0].shape[0]
    if g.shape != (T, params.config.num_labels):
        raise InvalidInput(f"gradient must be {(T, params.config.num_labels)}, got {g.shape}")
    grad = np.zeros_like(params.vector)
    gviews = _layer_views(params.config, grad)
    layers = params.layers()
    n = len(layers)
    delta = g
    for i in range(n - 1, -1, -1):
        inp = cache.activations[i]
        gW, gb = gviews[i]
        gW[...] = inp.T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ layers[i][0].T) * (1.0 - inp * inp)
    return grad


def sgd_step(
    params: ModelParams, grad: np.ndarray, learning_rate: float, momentum: float, velocity: np.ndarray | None
) -> tuple[ModelParams, np.ndarray]:
    """Momentum ascent step: v' = m*v + g, theta' = theta + lr*v'."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.vector.shape:
        raise InvalidInput(f"gradient shape {grad.shape} != parameter shape {params.vector.shape}")
    if not np.all(np.isfinite(grad)):
        raise NumericalError("non-finite gradient")
    if velocity is None:
        velocity = np.zeros_like(grad)
    v = momentum * velocity + grad
    return ModelParams(params.config, params.vector + learning_rate * v), v


# --------------------------------------------------------------------------
# checkpoint file: magic, version, dims, then little-endian float64 params

MAGIC = b"LFMMICL\x00"
CHECKPOINT_VERSION = 1


def checkpoint_bytes(params: ModelParams) -> bytes:
    c = params.config
    head = MAGIC + struct.pack(
        "<IIIII", CHECKPOINT_VERSION, c.feature_dim, c.num_labels, c.context_radius, len(c.hidden_dims)
    )
    head += struct.pack(f"<{len(c.hidden_dims)}I", *c.hidden_dims)
    head += struct.pack("<Q", c.num_params)
    return head + params.vector.astype("<f8").tobytes()


def params_from_bytes(data: bytes) -> ModelParams:
    if data[: len(MAGIC)] != MAGIC:
        raise InvalidInput("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    version, d, p, r, nh = struct.unpack_from("<IIIII", data, pos)
    pos += 20
    if version != CHECKPOINT_VERSION:
        raise InvalidInput(f"unsupported checkpoint version {version}")
    hidden = struct.unpack_from(f"<{nh}I", data, pos)
    pos += 4 * nh
    (count,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    config = NetConfig(d, p, r, tuple(hidden))
    if count != config.num_params or len(data) - pos != 8 * count:
        raise InvalidInput("checkpoint size does not match its dimensions")
    vec = np.frombuffer(data, dtype="<f8", count=count, offset=pos).astype(np.float64)
    return ModelParams(config, vec)


def save_checkpoint(params: ModelParams, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(params))


def load_checkpoint(path) -> ModelParams:
    return params_from_bytes(Path(path).read_bytes())
