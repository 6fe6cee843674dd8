"""
Minimal feed-forward network engine

Dense layer chains (affine + activations) over float64 numpy arrays with a
recorded forward pass (a tape) and reverse-mode gradients, plus the Adam
optimizer and the uniform initialisation used for every network in the game.

A batch is a 2-D float64 array of shape (rows, cols). Parameters of a network
live in one flat vector; affine layers store their weight matrix row-major
(out_dim x in_dim) followed by the bias.

Note: the experiments use LeakyReLU(0.01) wherever the architecture tables do,
even though the formal network class is stated with ReLU.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, softmax

from errors import ConfigError, NumericError, ShapeError, StateError

LAYER_KINDS = ("affine", "leaky_relu", "relu", "sigmoid", "softmax")
LEAKY_SLOPE = 0.01

# Instrumentation: how many backward passes ran. Evaluation of the network
# attack asserts that it adds none.
counters: Counter = Counter()


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    in_dim: int
    out_dim: int
    slope: float = LEAKY_SLOPE

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"layer kind must be one of {', '.join(LAYER_KINDS)}, got {self.kind!r}")
        if self.in_dim < 1 or self.out_dim < 1:
            raise ConfigError(f"layer dimensions must be positive, got {self.in_dim}->{self.out_dim}")
        if self.kind != "affine" and self.in_dim != self.out_dim:
            raise ConfigError(f"{self.kind} layer must keep its width, got {self.in_dim}->{self.out_dim}")

    @property
    def n_params(self) -> int:
        if self.kind == "affine":
            return self.out_dim * self.in_dim + self.out_dim
        return 0

    def to_dict(self) -> dict:
        data = {"kind": self.kind, "in_dim": self.in_dim, "out_dim": self.out_dim}
        if self.kind == "leaky_relu":
            data["slope"] = self.slope
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "LayerSpec":
        return cls(
            kind=data["kind"],
            in_dim=int(data["in_dim"]),
            out_dim=int(data["out_dim"]),
            slope=float(data.get("slope", LEAKY_SLOPE)),
        )


def affine(in_dim: int, out_dim: int) -> LayerSpec:
    return LayerSpec("affine", in_dim, out_dim)


def activation(kind: str, dim: int) -> LayerSpec:
    return LayerSpec(kind, dim, dim)


def dense_chain(sizes: Sequence[int], hidden: str = "leaky_relu", head: Optional[str] = None) -> List[LayerSpec]:
    """Affine layers between consecutive sizes, `hidden` activation in between"""
    layers: List[LayerSpec] = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(affine(a, b))
        if i < len(sizes) - 2:
            layers.append(activation(hidden, b))
    if head:
        layers.append(activation(head, sizes[-1]))
    return layers


def as_batch(x, cols: Optional[int] = None, what: str = "input") -> np.ndarray:
    """Coerce to a (rows, cols) float64 array, 1-D input becomes one row"""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{what} rank", 2, arr.ndim)
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"{what} columns", cols, arr.shape[1])
    return arr


@dataclass
class Tape:
    """Everything the backward pass needs from one recorded forward pass"""

    net: "Mlp"
    inputs: List[np.ndarray]
    outputs: List[np.ndarray]

    @property
    def x(self) -> np.ndarray:
        return self.inputs[0]


class Mlp:
    """Feed-forward network: an ordered layer chain plus a flat parameter vector

    Instances are treated as values. Training produces new instances through
    `with_params`; nothing mutates a network in place.
    """

    def __init__(
        self,
        layers: Sequence[LayerSpec],
        params: Optional[np.ndarray] = None,
        *,
        kappa: Optional[float] = None,
        bound: Optional[float] = None,
        seed: Optional[int] = None,
    ):
        layers = tuple(layers)
        if not layers:
            raise ConfigError("a network needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError("layer chain", prev.out_dim, nxt.in_dim)
        self.layers = layers
        n_params = sum(layer.n_params for layer in layers)
        if params is None:
            params = np.zeros(n_params)
        params = np.array(params, dtype=np.float64).reshape(-1)
        if params.size != n_params:
            raise ShapeError("parameter vector length", n_params, params.size)
        params.setflags(write=False)
        self.params = params
        # Magnitude bound kappa and sup-norm bound B of the network class are
        # metadata; kappa is only enforced through `clip_to_kappa`.
        self.kappa = kappa
        self.bound = bound
        self.seed = seed
        self._offsets = []
        offset = 0
        for layer in layers:
            self._offsets.append(offset)
            offset += layer.n_params

    # -- shape metadata -------------------------------------------------

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def n_params(self) -> int:
        return self.params.size

    @property
    def depth(self) -> int:
        return sum(1 for layer in self.layers if layer.kind == "affine")

    @property
    def width(self) -> int:
        return max(max(layer.in_dim, layer.out_dim) for layer in self.layers)

    @property
    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.params))

    def __repr__(self) -> str:
        chain = " -> ".join(str(layer.in_dim) if layer.kind == "affine" else layer.kind for layer in self.layers)
        return f"Mlp({chain} -> {self.out_dim}, params={self.n_params})"

    # -- parameters -----------------------------------------------------

    def with_params(self, params: np.ndarray) -> "Mlp":
        return Mlp(self.layers, params, kappa=self.kappa, bound=self.bound, seed=self.seed)

    def clip_to_kappa(self) -> "Mlp":
        if self.kappa is None:
            return self
        return self.with_params(np.clip(self.params, -self.kappa, self.kappa))

    def layer_params(self, index: int) -> Tuple[np.ndarray, np.ndarray]:
        layer = self.layers[index]
        if layer.kind != "affine":
            raise ConfigError(f"layer {index} ({layer.kind}) has no parameters")
        start = self._offsets[index]
        split = start + layer.out_dim * layer.in_dim
        weight = self.params[start:split].reshape(layer.out_dim, layer.in_dim)
        bias = self.params[split:split + layer.out_dim]
        return weight, bias

    # -- forward / backward ---------------------------------------------

    def forward(self, x) -> np.ndarray:
        out, _ = self.forward_with_tape(x)
        return out

    def forward_with_tape(self, x) -> Tuple[np.ndarray, Tape]:
        h = as_batch(x, self.in_dim)
        inputs, outputs = [], []
        for index, layer in enumerate(self.layers):
            inputs.append(h)
            if layer.kind == "affine":
                weight, bias = self.layer_params(index)
                h = h @ weight.T + bias
            elif layer.kind == "leaky_relu":
                h = np.where(h >= 0, h, layer.slope * h)
            elif layer.kind == "relu":
                h = np.maximum(h, 0.0)
            elif layer.kind == "sigmoid":
                h = expit(h)
            else:
                h = softmax(h, axis=1)
            outputs.append(h)
        return h, Tape(self, inputs, outputs)

    def backward(self, tape: Optional[Tape], upstream) -> Tuple[np.ndarray, np.ndarray]:
        """Vector-Jacobian products for a recorded forward pass

        Returns (gradient w.r.t. the flat parameters, gradient w.r.t. the input).
        Batch contributions are summed.
        """
        if tape is None:
            raise StateError("backward called without a recorded forward pass")
        if tape.net is not self:
            raise StateError("tape was recorded by a different network")
        g = np.asarray(upstream, dtype=np.float64)
        expected = tape.outputs[-1].shape
        if g.shape != expected:
            raise ShapeError("upstream gradient shape", expected, g.shape)
        counters["backward"] += 1

        param_grad = np.zeros(self.n_params)
        for index in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[index]
            h_in, h_out = tape.inputs[index], tape.outputs[index]
            if layer.kind == "affine":
                weight, _ = self.layer_params(index)
                start = self._offsets[index]
                split = start + layer.out_dim * layer.in_dim
                param_grad[start:split] = (g.T @ h_in).reshape(-1)
                param_grad[split:split + layer.out_dim] = g.sum(axis=0)
                g = g @ weight
            elif layer.kind == "leaky_relu":
                g = g * np.where(h_in >= 0, 1.0, layer.slope)
            elif layer.kind == "relu":
                g = g * (h_in > 0)
            elif layer.kind == "sigmoid":
                g = g * h_out * (1.0 - h_out)
            else:
                g = h_out * (g - np.sum(g * h_out, axis=1, keepdims=True))
        return param_grad, g


def init_uniform(net: Mlp, rng_seed: int) -> Mlp:
    """Each affine entry ~ U(-sqrt(1/in_features), sqrt(1/in_features))"""
    rng = np.random.default_rng(rng_seed)
    chunks = []
    for layer in net.layers:
        if layer.kind != "affine":
            continue
        bound = np.sqrt(1.0 / layer.in_dim)
        chunks.append(rng.uniform(-bound, bound, size=layer.n_params))
    params = np.concatenate(chunks) if chunks else np.zeros(0)
    return Mlp(net.layers, params, kappa=net.kappa, bound=net.bound, seed=rng_seed)


@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, direction: str = "descent") -> np.ndarray:
    """One Adam update; `ascent` flips the sign for the maximizing player"""
    if direction not in ("descent", "ascent"):
        raise ConfigError(f"direction must be descent or ascent, got {direction!r}")
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or grads.size != state.size:
        raise ShapeError("adam vector length", state.size, grads.size)
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise NumericError("non-finite gradient entry", index=int(bad[0]))

    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads ** 2
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if direction == "ascent":
        return params + update
    return params - update


def numeric_check(values: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(np.asarray(values)))
    if bad.size:
        logging.debug(f"{what}: {bad.size} non-finite entries")
        raise NumericError(f"non-finite {what}", index=int(bad[0]))
