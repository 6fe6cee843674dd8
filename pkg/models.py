"""
Defense network f and constrained attack network λ

The attack network for classification is
    λ(x, y=c) = S_c(x) * head(D_c(E(x)))
with a shared encoder E, one decoder D_c and one scaler S_c per class. For
regression there is a single decoder H acting on x and a single scaler S.
The projection head turns the raw decoder output into a vector on the
boundary of the lp ball of radius δ, the sigmoid scaler then shrinks it, so
every output satisfies the budget whatever the parameters are.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from errors import ConfigError, InputError
from nn_core import Mlp, activation, as_batch, dense_chain, init_uniform

SUPPORTED_P = (1.0, 2.0, np.inf)
UNIT_CUBE_TOL = 1e-9
NORMALIZE_EPS = 0.0


def parse_p(p) -> float:
    if isinstance(p, str):
        key = p.strip().lower()
        if key in ("inf", "linf", "infinity", "∞"):
            return np.inf
        try:
            p = float(key.lstrip("l"))
        except ValueError:
            raise ConfigError(f"constraint.p must be one of 1, 2, inf, got {p!r}")
    p = float(p)
    if p not in SUPPORTED_P:
        raise ConfigError(f"constraint.p must be one of 1, 2, inf, got {p!r}")
    return p


def format_p(p: float) -> str:
    return "inf" if np.isinf(p) else str(int(p))


@dataclass(frozen=True)
class LpConstraint:
    p: float
    delta: float

    def __post_init__(self):
        object.__setattr__(self, "p", parse_p(self.p))
        if not (self.delta > 0 and np.isfinite(self.delta)):
            raise ConfigError(f"constraint.delta must be positive, got {self.delta}")

    def norm(self, v) -> np.ndarray:
        """Row-wise lp norm"""
        return np.linalg.norm(np.atleast_2d(v), ord=self.p, axis=1)

    def contains(self, v, slack: float = 1e-9) -> np.ndarray:
        return self.norm(v) <= self.delta * (1.0 + slack)

    @property
    def label(self) -> str:
        return f"l{format_p(self.p)}({self.delta:g})"

    def to_dict(self) -> dict:
        return {"p": format_p(self.p), "delta": self.delta}

    @classmethod
    def from_dict(cls, data: dict) -> "LpConstraint":
        return cls(p=data["p"], delta=float(data["delta"]))


class ProjectionHead:
    """Maps raw decoder output onto the boundary of the δ-ball

    l2:   δ · v/‖v‖₂
    linf: clamp(√D·δ · v/‖v‖₂, -δ, δ)
    l1:   δ · v/‖v‖₁   (experimental, no architecture table covers it)
    A zero vector maps to zero.
    """

    def __init__(self, constraint: LpConstraint, dim: int):
        self.constraint = constraint
        self.dim = dim

    def forward(self, v: np.ndarray) -> Tuple[np.ndarray, dict]:
        delta, p = self.constraint.delta, self.constraint.p
        if p == 1.0:
            norm = np.abs(v).sum(axis=1, keepdims=True)
        else:
            norm = np.sqrt(np.sum(v * v, axis=1, keepdims=True))
        nonzero = norm > NORMALIZE_EPS
        safe = np.where(nonzero, norm, 1.0)
        unit = np.where(nonzero, v / safe, 0.0)
        if np.isinf(p):
            raw = np.sqrt(self.dim) * delta * unit
            out = np.clip(raw, -delta, delta)
        else:
            raw = delta * unit
            out = raw
        return out, {"v": v, "norm": safe, "nonzero": nonzero, "unit": unit, "raw": raw}

    def backward(self, cache: dict, g: np.ndarray) -> np.ndarray:
        delta, p = self.constraint.delta, self.constraint.p
        unit, norm, nonzero = cache["unit"], cache["norm"], cache["nonzero"]
        if np.isinf(p):
            g = g * (np.abs(cache["raw"]) < delta) * (np.sqrt(self.dim) * delta)
        else:
            g = g * delta
        if p == 1.0:
            sign = np.sign(cache["v"])
            gv = (g - sign * np.sum(unit * g, axis=1, keepdims=True)) / norm
        else:
            gv = (g - unit * np.sum(unit * g, axis=1, keepdims=True)) / norm
        return np.where(nonzero, gv, 0.0)


class DefenseNet:
    """The defended model f: class logits or a scalar regression output"""

    def __init__(self, net: Mlp, task: str, n_classes: Optional[int] = None):
        if task not in ("classification", "regression"):
            raise ConfigError(f"task must be classification or regression, got {task!r}")
        if task == "classification" and net.out_dim != n_classes:
            raise ConfigError(f"defense output dim {net.out_dim} does not match class count {n_classes}")
        if task == "regression" and net.out_dim != 1:
            raise ConfigError(f"regression defense must have one output, got {net.out_dim}")
        self.net = net
        self.task = task
        self.n_classes = n_classes

    @property
    def in_dim(self) -> int:
        return self.net.in_dim

    @property
    def params(self) -> np.ndarray:
        return self.net.params

    def with_params(self, params: np.ndarray) -> "DefenseNet":
        return DefenseNet(self.net.with_params(params), self.task, self.n_classes)

    def forward(self, x) -> np.ndarray:
        return self.net.forward(x)

    def predict(self, x) -> np.ndarray:
        """Class indices for classification, the scalar prediction otherwise"""
        out = self.forward(x)
        if self.task == "classification":
            return np.argmax(out, axis=1)
        return out[:, 0]


@dataclass
class AttackTape:
    x: np.ndarray
    groups: List[Tuple[int, np.ndarray]]
    encoder_tape: Optional[object]
    branch: Dict[int, dict]


class AttackModel:
    """Constrained perturbation generator λ(x, y)"""

    def __init__(
        self,
        constraint: LpConstraint,
        encoder: Optional[Mlp],
        decoders: List[Mlp],
        scalers: List[Mlp],
        task: str,
    ):
        if len(decoders) != len(scalers) or not decoders:
            raise ConfigError("attack model needs one scaler per decoder")
        if task == "regression" and (encoder is not None or len(decoders) != 1):
            raise ConfigError("regression attack uses a single decoder on x and no encoder")
        if task == "classification" and encoder is None:
            raise ConfigError("classification attack needs an encoder")
        self.constraint = constraint
        self.encoder = encoder
        self.decoders = list(decoders)
        self.scalers = list(scalers)
        self.task = task
        self.dim = scalers[0].in_dim
        self.head = ProjectionHead(constraint, self.dim)

    @property
    def n_branches(self) -> int:
        return len(self.decoders)

    def networks(self) -> List[Tuple[str, Mlp]]:
        nets = []
        if self.encoder is not None:
            nets.append(("encoder", self.encoder))
        nets += [(f"decoder_{i}", d) for i, d in enumerate(self.decoders)]
        nets += [(f"scaler_{i}", s) for i, s in enumerate(self.scalers)]
        return nets

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([net.params for _, net in self.networks()])

    @property
    def n_params(self) -> int:
        return sum(net.n_params for _, net in self.networks())

    def with_params(self, params: np.ndarray) -> "AttackModel":
        params = np.asarray(params, dtype=np.float64)
        if params.size != self.n_params:
            raise ConfigError(f"attack parameter vector has {params.size} entries, expected {self.n_params}")
        rebuilt = {}
        offset = 0
        for name, net in self.networks():
            rebuilt[name] = net.with_params(params[offset:offset + net.n_params])
            offset += net.n_params
        return AttackModel(
            self.constraint,
            rebuilt.get("encoder"),
            [rebuilt[f"decoder_{i}"] for i in range(self.n_branches)],
            [rebuilt[f"scaler_{i}"] for i in range(self.n_branches)],
            self.task,
        )

    def _slices(self) -> Dict[str, slice]:
        slices, offset = {}, 0
        for name, net in self.networks():
            slices[name] = slice(offset, offset + net.n_params)
            offset += net.n_params
        return slices

    def _check_inputs(self, x, y) -> Tuple[np.ndarray, np.ndarray]:
        x = as_batch(x, self.dim, "attack input")
        if np.any(x < -UNIT_CUBE_TOL) or np.any(x > 1.0 + UNIT_CUBE_TOL):
            raise InputError("attack input must lie in the unit cube")
        if self.task == "regression":
            return x, np.zeros(x.shape[0], dtype=int)
        labels = np.asarray(y).reshape(-1)
        if labels.size != x.shape[0]:
            raise InputError(f"got {labels.size} labels for {x.shape[0]} inputs")
        if np.any(labels != np.round(labels)) or np.any(labels < 0) or np.any(labels >= self.n_branches):
            raise InputError(f"labels must be class indices in [0, {self.n_branches - 1}]")
        return x, labels.astype(int)

    def forward(self, x, y=None) -> np.ndarray:
        out, _ = self.forward_with_tape(x, y)
        return out

    def forward_with_tape(self, x, y=None) -> Tuple[np.ndarray, AttackTape]:
        x, labels = self._check_inputs(x, y)
        latent, encoder_tape = (x, None)
        if self.encoder is not None:
            latent, encoder_tape = self.encoder.forward_with_tape(x)
        out = np.zeros_like(x)
        groups, branch = [], {}
        for c in range(self.n_branches):
            idx = np.flatnonzero(labels == c)
            if idx.size == 0:
                continue
            v, decoder_tape = self.decoders[c].forward_with_tape(latent[idx])
            h, head_cache = self.head.forward(v)
            s, scaler_tape = self.scalers[c].forward_with_tape(x[idx])
            out[idx] = s * h
            groups.append((c, idx))
            branch[c] = {"decoder": decoder_tape, "scaler": scaler_tape, "head": head_cache, "h": h, "s": s}
        return out, AttackTape(x, groups, encoder_tape, branch)

    def backward(self, tape: AttackTape, upstream) -> Tuple[np.ndarray, np.ndarray]:
        """Gradients of <upstream, λ(x, y)> w.r.t. θ_λ and x"""
        upstream = np.asarray(upstream, dtype=np.float64)
        grad = np.zeros(self.n_params)
        slices = self._slices()
        input_grad = np.zeros_like(tape.x)
        latent_grad = None
        if self.encoder is not None:
            latent_grad = np.zeros((tape.x.shape[0], self.encoder.out_dim))
        for c, idx in tape.groups:
            b = tape.branch[c]
            g = upstream[idx]
            g_s = np.sum(g * b["h"], axis=1, keepdims=True)
            g_h = g * b["s"]
            sp, sx = self.scalers[c].backward(b["scaler"], g_s)
            grad[slices[f"scaler_{c}"]] += sp
            input_grad[idx] += sx
            gv = self.head.backward(b["head"], g_h)
            dp, dx = self.decoders[c].backward(b["decoder"], gv)
            grad[slices[f"decoder_{c}"]] += dp
            if latent_grad is not None:
                latent_grad[idx] += dx
            else:
                input_grad[idx] += dx
        if self.encoder is not None and tape.groups:
            ep, ex = self.encoder.backward(tape.encoder_tape, latent_grad)
            grad[slices["encoder"]] += ep
            input_grad += ex
        return grad, input_grad

    def adversarial_example(self, x, y=None, clip_input: bool = False) -> np.ndarray:
        """x + λ(x, y); only clipped back to the unit cube when asked"""
        x_arr = as_batch(x, self.dim, "attack input")
        x_adv = x_arr + self.forward(x_arr, y)
        if clip_input:
            x_adv = np.clip(x_adv, 0.0, 1.0)
        return x_adv


def impute_labels(labeler: DefenseNet, x) -> np.ndarray:
    """Labels predicted by a clean model, for points without ground truth"""
    return labeler.predict(x).astype(int)


def _seeds(seed: int, count: int) -> List[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(count)]


def build_classification_pair(D: int, C: int, constraint: LpConstraint, seed: int) -> Tuple[DefenseNet, AttackModel]:
    """Defense and attack networks with the classification architectures"""
    if D < 1 or C < 2:
        raise ConfigError(f"need D >= 1 and C >= 2, got D={D}, C={C}")
    seeds = _seeds(seed, 2 + 2 * C)
    defense = init_uniform(Mlp(dense_chain([D, 50, 100, 15, C])), seeds[0])
    encoder = init_uniform(Mlp(dense_chain([D, 50, 100])), seeds[1])
    decoder_layers = [activation("leaky_relu", 100)] + dense_chain([100, 50, 15, D])
    decoders = [init_uniform(Mlp(decoder_layers), seeds[2 + c]) for c in range(C)]
    scaler_layers = dense_chain([D, 20, 1], head="sigmoid")
    scalers = [init_uniform(Mlp(scaler_layers), seeds[2 + C + c]) for c in range(C)]
    return (
        DefenseNet(defense, "classification", C),
        AttackModel(constraint, encoder, decoders, scalers, "classification"),
    )


def build_regression_pair(D: int, constraint: LpConstraint, seed: int) -> Tuple[DefenseNet, AttackModel]:
    """Defense and attack networks with the regression architectures"""
    if D < 1:
        raise ConfigError(f"need D >= 1, got D={D}")
    seeds = _seeds(seed, 3)
    defense = init_uniform(Mlp(dense_chain([D, 50, 20, 1])), seeds[0])
    decoder = init_uniform(Mlp(dense_chain([D, 50, 50, D])), seeds[1])
    scaler = init_uniform(Mlp(dense_chain([D, 20, 1], head="sigmoid")), seeds[2])
    return (
        DefenseNet(defense, "regression"),
        AttackModel(constraint, None, [decoder], [scaler], "regression"),
    )


def build_pair(task: str, D: int, n_classes: Optional[int], constraint: LpConstraint, seed: int):
    if task == "classification":
        return build_classification_pair(D, n_classes, constraint, seed)
    return build_regression_pair(D, constraint, seed)


def zero_attack(model: AttackModel) -> AttackModel:
    """Same architecture, all parameters zero: λ ≡ 0"""
    return model.with_params(np.zeros(model.n_params))
