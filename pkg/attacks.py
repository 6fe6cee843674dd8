"""
White-box gradient attacks: FGSM and PGD with restarts

Iterates are tracked as offsets from the clean point, projected onto the
δ-ball after every step, so one PGD step with γ = δ from the clean point is
bit-identical to FGSM.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Tuple

import numpy as np

from errors import ConfigError
from losses import LossKind, loss
from models import LpConstraint, DefenseNet, parse_p
from nn_core import as_batch, numeric_check

ASCENT_NORMS = (1.0, 2.0, np.inf)
STEP_MODES = ("normalized", "raw")


class Objective(Protocol):
    """Row-wise differentiable objective F over a batch of points"""

    def value_and_grad(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        ...


class DefenseObjective:
    """F(x) = L(f(x), y) per row, gradients through the defense's backward pass"""

    def __init__(self, f: DefenseNet, kind: LossKind, y):
        self.f = f
        self.kind = kind
        self.y = np.asarray(y)

    def rows(self, idx: np.ndarray) -> "DefenseObjective":
        return DefenseObjective(self.f, self.kind, self.y[idx])

    def value_and_grad(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        out, tape = self.f.net.forward_with_tape(x)
        value = loss(self.kind, out, self.y)
        _, grad_x = self.f.net.backward(tape, value.grad)
        return value.per_sample, grad_x

    def value(self, x: np.ndarray) -> np.ndarray:
        return loss(self.kind, self.f.forward(x), self.y).per_sample

    def misclassified(self, x: np.ndarray) -> np.ndarray:
        return self.f.predict(x) != self.y


@dataclass(frozen=True)
class PgdConfig:
    constraint: LpConstraint
    gamma: float = 0.01
    steps: int = 50
    restarts: int = 10
    early_stop_on_misclassify: bool = False
    ascent_norm: float = np.inf
    step_mode: str = "normalized"
    seed: int = 0
    # The clean point competes with the restarts, so the result never has a
    # lower loss than x. None means on unless this is a single FGSM-like step.
    keep_clean_candidate: Optional[bool] = None

    def __post_init__(self):
        object.__setattr__(self, "ascent_norm", parse_p(self.ascent_norm))
        problems = []
        if self.gamma < 0:
            problems.append(f"pgd.gamma must be non-negative, got {self.gamma}")
        if self.gamma > 2 * self.constraint.delta:
            problems.append(f"pgd.gamma must not exceed 2*delta={2 * self.constraint.delta:g}, got {self.gamma}")
        if self.steps < 1:
            problems.append(f"pgd.steps must be >= 1, got {self.steps}")
        if self.restarts < 1:
            problems.append(f"pgd.restarts must be >= 1, got {self.restarts}")
        if self.step_mode not in STEP_MODES:
            problems.append(f"pgd.step_mode must be one of {', '.join(STEP_MODES)}, got {self.step_mode!r}")
        if problems:
            raise ConfigError(problems)

    @property
    def clean_candidate(self) -> bool:
        if self.keep_clean_candidate is not None:
            return self.keep_clean_candidate
        return self.steps > 1 or self.restarts > 1


def project_offset(offset: np.ndarray, constraint: LpConstraint) -> np.ndarray:
    """Nearest point (in the constraint's own geometry) of the δ-ball around 0"""
    delta, p = constraint.delta, constraint.p
    offset = np.atleast_2d(offset)
    if np.isinf(p):
        return np.clip(offset, -delta, delta)
    if p == 2.0:
        norm = np.sqrt(np.sum(offset * offset, axis=1, keepdims=True))
        scale = np.where(norm > delta, delta / np.where(norm > 0, norm, 1.0), 1.0)
        return np.where(norm > delta, offset * scale, offset)
    if p == 1.0:
        return np.vstack([_project_l1(row, delta) for row in offset])
    raise ConfigError(f"unsupported p={p}")


def _project_l1(v: np.ndarray, radius: float) -> np.ndarray:
    # Euclidean projection on the l1 ball by sorting (simplex projection of |v|)
    magnitude = np.abs(v)
    if magnitude.sum() <= radius:
        return v
    u = np.sort(magnitude)[::-1]
    cssv = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, v.size + 1) > (cssv - radius))[0][-1]
    theta = (cssv[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.clip(magnitude - theta, 0.0, None)


def project_lp_ball(x, center, constraint: LpConstraint) -> np.ndarray:
    x = as_batch(x, what="point")
    center = as_batch(center, x.shape[1], "center")
    return center + project_offset(x - center, constraint)


def steepest_direction(grad, ascent_norm) -> np.ndarray:
    """Unit-step steepest ascent direction per row; zero rows stay zero

    l2 -> grad/‖grad‖₂, linf -> sign(grad), l1 -> signed basis vector of the
    largest-magnitude coordinate.
    """
    p = parse_p(ascent_norm)
    g = as_batch(grad, what="gradient")
    if np.isinf(p):
        return np.sign(g)
    if p == 2.0:
        norm = np.sqrt(np.sum(g * g, axis=1, keepdims=True))
        return np.where(norm > 0, g / np.where(norm > 0, norm, 1.0), 0.0)
    d = np.zeros_like(g)
    rows = np.arange(g.shape[0])
    top = np.argmax(np.abs(g), axis=1)
    d[rows, top] = np.sign(g[rows, top])
    return d


def sample_in_ball(rng: np.random.Generator, n: int, dim: int, constraint: LpConstraint) -> np.ndarray:
    """Uniform samples from the δ-ball around 0"""
    delta, p = constraint.delta, constraint.p
    if np.isinf(p):
        return rng.uniform(-delta, delta, size=(n, dim))
    if p == 2.0:
        direction = rng.standard_normal((n, dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = delta * rng.uniform(size=(n, 1)) ** (1.0 / dim)
        return direction * radius
    weights = rng.exponential(size=(n, dim + 1))
    weights /= weights.sum(axis=1, keepdims=True)
    signs = rng.choice([-1.0, 1.0], size=(n, dim))
    return delta * weights[:, :dim] * signs


def _step(offset, grad, gamma, cfg: PgdConfig):
    if cfg.step_mode == "raw" and cfg.ascent_norm == 2.0:
        direction = grad
    else:
        direction = steepest_direction(grad, cfg.ascent_norm)
    return project_offset(offset + gamma * direction, cfg.constraint)


@dataclass
class PgdResult:
    x_adv: np.ndarray
    loss: np.ndarray
    misclassified: Optional[np.ndarray]
    best_restart: np.ndarray


def pgd_objective(
    objective: Objective,
    x,
    cfg: PgdConfig,
    misclassified: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    record: Optional[list] = None,
) -> PgdResult:
    """Projected steepest ascent on an arbitrary objective, best of restarts

    Restart 0 starts at the clean point, later ones uniformly inside the
    ball. With `misclassified` given and early stopping on, a row stops
    stepping once it is misclassified; misclassifying restarts beat the
    others, ties go to the larger loss. `record` collects every iterate.
    """
    x = as_batch(x)
    n, dim = x.shape
    best_offset = np.zeros_like(x)
    best_loss = np.full(n, -np.inf)
    best_wrong = np.zeros(n, dtype=bool)
    best_restart = np.zeros(n, dtype=int)
    early = cfg.early_stop_on_misclassify and misclassified is not None
    if cfg.clean_candidate:
        best_loss, _ = objective.value_and_grad(x)
        best_loss = np.array(best_loss, dtype=np.float64)
        if misclassified is not None:
            best_wrong = misclassified(x)
        best_restart[:] = -1

    for restart in range(cfg.restarts):
        rng = np.random.default_rng([cfg.seed, restart])
        if restart == 0:
            offset = np.zeros_like(x)
        else:
            offset = sample_in_ball(rng, n, dim, cfg.constraint)
        stopped = np.zeros(n, dtype=bool)
        for step in range(cfg.steps):
            if early:
                stopped |= misclassified(x + offset)
                if stopped.all():
                    break
            _, grad = objective.value_and_grad(x + offset)
            numeric_check(grad, "attack gradient")
            moved = _step(offset, grad, cfg.gamma, cfg)
            offset = np.where(stopped[:, None], offset, moved)
            if record is not None:
                record.append(x + offset)

        x_adv = x + offset
        value, _ = objective.value_and_grad(x_adv)
        wrong = misclassified(x_adv) if misclassified is not None else np.zeros(n, dtype=bool)
        if early:
            better = (wrong & ~best_wrong) | ((wrong == best_wrong) & (value > best_loss))
        else:
            better = value > best_loss
        best_offset[better] = offset[better]
        best_loss[better] = value[better]
        best_wrong[better] = wrong[better]
        best_restart[better] = restart
        logging.debug(f"pgd restart {restart}: mean loss {value.mean():.6f}, improved {int(better.sum())} rows")

    return PgdResult(
        x + best_offset,
        best_loss,
        best_wrong if misclassified is not None else None,
        best_restart,
    )


def pgd(f: DefenseNet, kind: LossKind, x, y, cfg: PgdConfig) -> np.ndarray:
    """PGD adversarial examples against a defense"""
    objective = DefenseObjective(f, kind, y)
    misclassified = objective.misclassified if f.task == "classification" else None
    return pgd_objective(objective, x, cfg, misclassified).x_adv


def fgsm_perturbation(f: DefenseNet, kind: LossKind, x, y, constraint: LpConstraint) -> np.ndarray:
    """δ · sign(∇ₓ L(f(x), y)) with sign(0) = 0"""
    if not np.isinf(constraint.p):
        raise ConfigError(f"FGSM is defined for the linf ball only, got p={constraint.p:g}")
    x = as_batch(x, f.in_dim)
    _, grad = DefenseObjective(f, kind, y).value_and_grad(x)
    numeric_check(grad, "attack gradient")
    return project_offset(constraint.delta * np.sign(grad), constraint)


def fgsm(f: DefenseNet, kind: LossKind, x, y, constraint: LpConstraint) -> np.ndarray:
    x = as_batch(x, f.in_dim)
    return x + fgsm_perturbation(f, kind, x, y, constraint)


def fgsm_config(constraint: LpConstraint) -> PgdConfig:
    """The PGD settings that reduce to FGSM"""
    return PgdConfig(
        constraint,
        gamma=constraint.delta,
        steps=1,
        restarts=1,
        ascent_norm=np.inf,
        keep_clean_candidate=False,
    )
