"""
Standard and adversarial losses

Batch reduction is a sum over samples. Cross-entropy is the negative
log-likelihood of the softmax (the defense minimizes it, the attack maximizes
it).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from errors import ConfigError, InputError, ShapeError
from models import AttackModel, DefenseNet
from nn_core import as_batch

LOSS_KINDS = ("cross_entropy", "mse")
MIXES = ("plain", "alpha", "trades")


@dataclass(frozen=True)
class LossKind:
    kind: str = "cross_entropy"
    mix: str = "plain"
    alpha: float = 0.0

    def __post_init__(self):
        problems = []
        if self.kind not in LOSS_KINDS:
            problems.append(f"loss.kind must be one of {', '.join(LOSS_KINDS)}, got {self.kind!r}")
        if self.mix not in MIXES:
            problems.append(f"loss.mix must be one of {', '.join(MIXES)}, got {self.mix!r}")
        if not 0.0 <= self.alpha <= 1.0:
            problems.append(f"loss.alpha must lie in [0, 1], got {self.alpha}")
        if problems:
            raise ConfigError(problems)

    @classmethod
    def for_task(cls, task: str, mix: str = "plain", alpha: float = 0.0) -> "LossKind":
        return cls("cross_entropy" if task == "classification" else "mse", mix, alpha)


@dataclass
class LossValue:
    total: float
    per_sample: np.ndarray
    grad: np.ndarray


def _labels(y, n: int, n_classes: int) -> np.ndarray:
    labels = np.asarray(y).reshape(-1)
    if labels.size != n:
        raise ShapeError("label count", n, labels.size)
    if np.any(labels != np.round(labels)) or np.any(labels < 0) or np.any(labels >= n_classes):
        raise InputError(f"labels must be class indices in [0, {n_classes - 1}]")
    return labels.astype(int)


def cross_entropy(logits, y) -> LossValue:
    z = as_batch(logits, what="logits")
    labels = _labels(y, z.shape[0], z.shape[1])
    rows = np.arange(z.shape[0])
    per_sample = logsumexp(z, axis=1) - z[rows, labels]
    grad = softmax(z, axis=1)
    grad[rows, labels] -= 1.0
    return LossValue(float(per_sample.sum()), per_sample, grad)


def soft_cross_entropy(logits, target_probs) -> LossValue:
    """Cross-entropy against a fixed probability vector per row"""
    z = as_batch(logits, what="logits")
    p = as_batch(target_probs, z.shape[1], "target probabilities")
    per_sample = logsumexp(z, axis=1) - np.sum(p * z, axis=1)
    grad = softmax(z, axis=1) - p
    return LossValue(float(per_sample.sum()), per_sample, grad)


def squared_error(prediction, y) -> LossValue:
    f = as_batch(prediction, what="prediction")
    target = np.asarray(y, dtype=np.float64).reshape(f.shape[0], -1)
    if target.shape != f.shape:
        raise ShapeError("target shape", f.shape, target.shape)
    diff = f - target
    per_sample = np.sum(diff * diff, axis=1)
    return LossValue(float(per_sample.sum()), per_sample, 2.0 * diff)


def loss(kind: LossKind, outputs, y) -> LossValue:
    """Plain loss of model outputs against labels (or targets)"""
    if kind.kind == "cross_entropy":
        return cross_entropy(outputs, y)
    return squared_error(outputs, y)


def _against_clean(kind: LossKind, adv_outputs: np.ndarray, clean_outputs: np.ndarray) -> LossValue:
    # The clean scores are a constant target here
    if kind.kind == "cross_entropy":
        return soft_cross_entropy(adv_outputs, softmax(clean_outputs, axis=1))
    return squared_error(adv_outputs, clean_outputs)


@dataclass
class AdversarialLoss:
    total: float
    per_sample: np.ndarray
    clean_per_sample: Optional[np.ndarray]
    adv_per_sample: np.ndarray
    grad_defense: np.ndarray
    grad_attack: np.ndarray


def clean_loss(kind: LossKind, f: DefenseNet, x, y) -> AdversarialLoss:
    """Σ L(f(x), y) with its gradient w.r.t. θ_f"""
    out, tape = f.net.forward_with_tape(x)
    value = loss(kind, out, y)
    grad_f, _ = f.net.backward(tape, value.grad)
    return AdversarialLoss(value.total, value.per_sample, value.per_sample, value.per_sample, grad_f, np.zeros(0))


def adversarial_loss(
    kind: LossKind,
    f: DefenseNet,
    attack: AttackModel,
    x,
    y,
    attack_labels=None,
    clip_input: bool = False,
) -> AdversarialLoss:
    """Adversarial loss of (f, λ) on a batch, with gradients for both players

    plain:  Σ L(f(x+λ), y)
    alpha:  Σ (1-α) L(f(x+λ), y) + α L(f(x), y)
    trades: Σ (1-α) L(f(x+λ), f(x)) + α L(f(x), y)

    `attack_labels` feeds λ (imputed labels); the loss always uses y.
    """
    x = as_batch(x, f.in_dim)
    if x.shape[0] == 0:
        raise InputError("adversarial loss needs a nonempty batch")
    lam_labels = y if attack_labels is None else attack_labels
    lam, attack_tape = attack.forward_with_tape(x, lam_labels)
    x_adv = x + lam
    inside = None
    if clip_input:
        inside = (x_adv >= 0.0) & (x_adv <= 1.0)
        x_adv = np.clip(x_adv, 0.0, 1.0)
    adv_out, adv_tape = f.net.forward_with_tape(x_adv)

    mixed = kind.mix != "plain"
    w_adv = 1.0 - kind.alpha if mixed else 1.0
    clean_value = None
    clean_out = clean_tape = None
    if mixed:
        clean_out, clean_tape = f.net.forward_with_tape(x)
        clean_value = loss(kind, clean_out, y)

    if kind.mix == "trades":
        adv_value = _against_clean(kind, adv_out, clean_out)
    else:
        adv_value = loss(kind, adv_out, y)

    per_sample = w_adv * adv_value.per_sample
    if mixed:
        per_sample = per_sample + kind.alpha * clean_value.per_sample

    grad_f, grad_x_adv = f.net.backward(adv_tape, w_adv * adv_value.grad)
    if mixed:
        grad_clean, _ = f.net.backward(clean_tape, kind.alpha * clean_value.grad)
        grad_f = grad_f + grad_clean
    if inside is not None:
        grad_x_adv = grad_x_adv * inside
    grad_attack, _ = attack.backward(attack_tape, grad_x_adv)

    return AdversarialLoss(
        total=float(per_sample.sum()),
        per_sample=per_sample,
        clean_per_sample=None if clean_value is None else clean_value.per_sample,
        adv_per_sample=adv_value.per_sample,
        grad_defense=grad_f,
        grad_attack=grad_attack,
    )
