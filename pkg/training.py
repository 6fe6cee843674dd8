"""
Training loops: the two-player adversarial game, PGD adversarial training
and clean training

Each epoch walks the training split in batches. In the game every batch gets
P Adam-descent steps on the defense (attack frozen) followed by H
Adam-ascent steps on the attack (defense frozen). Adam state lives for the
whole run, one state per player.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

import config
from attacks import DefenseObjective, PgdConfig, pgd_objective
from checkpoint import save_checkpoint
from data import Dataset
from errors import ConfigError, NumericError
from losses import LossKind, adversarial_loss, clean_loss, loss
from models import AttackModel, DefenseNet, LpConstraint
from nn_core import AdamState, adam_step

BUDGET_SWEEP = 256


@dataclass(frozen=True)
class GameConfig:
    epochs: int = config.EPOCHS_CLASSIFICATION
    defense_steps: int = config.DEFENSE_STEPS
    attack_steps: int = config.ATTACK_STEPS
    defense_lr: float = config.DEFENSE_LR
    attack_lr: float = config.ATTACK_LR
    loss: LossKind = LossKind()
    constraint: LpConstraint = LpConstraint(np.inf, config.DELTA)
    batch_size: Optional[int] = None
    seed: int = 0
    checkpoint_every: int = config.CHECKPOINT_EVERY
    clip_input: bool = False
    clip_kappa: bool = False
    freeze_attack: bool = False

    def __post_init__(self):
        problems = []
        for name in ("epochs", "defense_steps", "attack_steps", "checkpoint_every"):
            if getattr(self, name) < 1:
                problems.append(f"training.{name} must be >= 1, got {getattr(self, name)}")
        for name in ("defense_lr", "attack_lr"):
            if not getattr(self, name) > 0:
                problems.append(f"training.{name} must be positive, got {getattr(self, name)}")
        if self.batch_size is not None and self.batch_size < 1:
            problems.append(f"training.batch_size must be >= 1, got {self.batch_size}")
        if problems:
            raise ConfigError(problems)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    test_loss: float
    test_error: Dict[str, float]
    wall_clock: float

    def values(self) -> tuple:
        """Everything but the wall clock"""
        return (self.epoch, self.train_loss, self.test_loss, tuple(sorted(self.test_error.items())))


@dataclass
class StepAudit:
    epoch: int
    step: int
    player: str
    defense_changed: bool
    attack_changed: bool


@dataclass
class TrainRecord:
    name: str
    epochs: List[EpochStats] = field(default_factory=list)
    audit: List[StepAudit] = field(default_factory=list)
    # epoch -> evaluation matrix, filled by evaluation callbacks
    matrices: Dict[int, object] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.epochs)

    def test_losses(self) -> np.ndarray:
        return np.array([e.test_loss for e in self.epochs])


def oscillation(values, fraction: float = 0.2) -> float:
    """Range of the final window relative to its last value"""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return 0.0
    window = values[-max(1, int(np.ceil(fraction * values.size))):]
    scale = abs(window[-1])
    return float((window.max() - window.min()) / scale) if scale > 0 else float(window.max() - window.min())


def _mean_error(f: DefenseNet, x: np.ndarray, y: np.ndarray) -> float:
    if x.shape[0] == 0:
        return float("nan")
    if f.task == "classification":
        return float(np.mean(f.predict(x) != y))
    return float(np.mean((f.predict(x) - y) ** 2))


class Trainer:
    """Epoch loop shared by the three training modes"""

    name = "trainer"

    def __init__(self, f: DefenseNet, data: Dataset, cfg: GameConfig, checkpoint_dir=None):
        if f.in_dim != data.dim:
            raise ConfigError(f"defense input dim {f.in_dim} does not match data dim {data.dim}")
        if f.task != data.task:
            raise ConfigError(f"defense task {f.task} does not match data task {data.task}")
        self.f = f
        self.data = data
        self.cfg = cfg
        self.kind = cfg.loss
        self.defense_opt = AdamState(f.params.size, lr=cfg.defense_lr)
        self.record = TrainRecord(self.name)
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.last_checkpoint: Optional[str] = None
        self.epoch = 0
        self.step_count = 0

    # -- helpers --------------------------------------------------------

    def batches(self) -> List[np.ndarray]:
        idx = self.data.train_idx
        if self.cfg.batch_size is None or self.cfg.batch_size >= idx.size:
            return [idx]
        order = np.random.default_rng([self.cfg.seed, self.epoch]).permutation(idx)
        return [order[i:i + self.cfg.batch_size] for i in range(0, order.size, self.cfg.batch_size)]

    def _guard(self, total: float):
        if not np.isfinite(total):
            raise NumericError(
                f"{self.name}: non-finite loss",
                epoch=self.epoch, step=self.step_count, checkpoint=self.last_checkpoint,
            )

    def _descend(self, grad: np.ndarray):
        try:
            params = adam_step(self.defense_opt, self.f.params, grad, "descent")
        except NumericError as e:
            raise NumericError(
                f"{self.name}: {e}", index=e.index,
                epoch=self.epoch, step=self.step_count, checkpoint=self.last_checkpoint,
            )
        self.f = self.f.with_params(params)
        if self.cfg.clip_kappa:
            self.f = self.f.with_params(self.f.net.clip_to_kappa().params)

    def _audit(self, player: str, f_before, lam_before=None, lam_after=None):
        self.step_count += 1
        defense_changed = not np.array_equal(f_before, self.f.params)
        attack_changed = lam_before is not None and not np.array_equal(lam_before, lam_after)
        self.record.audit.append(StepAudit(self.epoch, self.step_count, player, defense_changed, attack_changed))
        logging.debug(f"{self.name} epoch {self.epoch} step {self.step_count}: {player} moved")

    def manifest(self) -> dict:
        return {
            "trainer": self.name,
            "epoch": self.epoch,
            "task": self.f.task,
            "n_classes": self.f.n_classes,
            "constraint": self.cfg.constraint.to_dict(),
            "dataset_fingerprint": self.data.fingerprint,
        }

    def save(self, final: bool = False) -> None:
        if self.checkpoint_dir is None:
            return
        tag = "final" if final else f"epoch{self.epoch:04d}"
        path = save_checkpoint(self.checkpoint_dir / f"{self.name}-{tag}-defense.json", self.f, self.manifest())
        self.last_checkpoint = str(path)

    # -- epoch loop -----------------------------------------------------

    def train_batch(self, x: np.ndarray, y: np.ndarray) -> float:
        raise NotImplementedError

    def test_metrics(self):
        raise NotImplementedError

    def after_epoch(self) -> None:
        pass

    def run_epoch(self) -> EpochStats:
        self.epoch += 1
        start = time.perf_counter()
        batch_losses, batch_sizes = [], []
        for idx in self.batches():
            x, y = self.data.X[idx], self.data.y[idx]
            batch_losses.append(self.train_batch(x, y))
            batch_sizes.append(idx.size)
        train_loss = float(np.sum(batch_losses) / np.sum(batch_sizes))
        test_loss, test_error = self.test_metrics()
        self.after_epoch()
        stats = EpochStats(self.epoch, train_loss, test_loss, test_error, time.perf_counter() - start)
        self.record.epochs.append(stats)
        errors = " ".join(f"{k}={v:.4f}" for k, v in test_error.items())
        logging.info(f"{self.name} epoch {self.epoch}: train loss {train_loss:.6f}, test loss {test_loss:.6f}, error {errors} ({stats.wall_clock:.2f}s)")
        if self.epoch % self.cfg.checkpoint_every == 0:
            self.save()
        return stats

    def fit(self, on_epoch: Optional[Callable[["Trainer"], None]] = None) -> TrainRecord:
        for _ in range(self.cfg.epochs):
            self.run_epoch()
            if on_epoch is not None:
                on_epoch(self)
        self.save(final=True)
        return self.record


class CleanTrainer(Trainer):
    name = "clean"

    def train_batch(self, x, y) -> float:
        total = 0.0
        for p in range(self.cfg.defense_steps):
            value = clean_loss(self.kind, self.f, x, y)
            self._guard(value.total)
            if p == 0:
                total = value.total
            before = self.f.params
            self._descend(value.grad_defense)
            self._audit("defense", before)
        return total

    def test_metrics(self):
        x, y = self.data.test()
        if x.shape[0] == 0:
            return float("nan"), {"none": float("nan")}
        value = loss(self.kind, self.f.forward(x), y)
        return float(value.per_sample.mean()), {"none": _mean_error(self.f, x, y)}


class GameTrainer(Trainer):
    """Defense f against the attack network λ"""

    name = "game"

    def __init__(self, f: DefenseNet, attack: AttackModel, data: Dataset, cfg: GameConfig, checkpoint_dir=None):
        super().__init__(f, data, cfg, checkpoint_dir)
        if attack.dim != data.dim:
            raise ConfigError(f"attack input dim {attack.dim} does not match data dim {data.dim}")
        self.attack = attack
        self.attack_opt = AdamState(attack.n_params, lr=cfg.attack_lr)

    def _game_loss(self, x, y):
        value = adversarial_loss(self.kind, self.f, self.attack, x, y, clip_input=self.cfg.clip_input)
        self._guard(value.total)
        return value

    def train_batch(self, x, y) -> float:
        total = 0.0
        for p in range(self.cfg.defense_steps):
            value = self._game_loss(x, y)
            if p == 0:
                total = value.total
            before, lam = self.f.params, self.attack.params
            self._descend(value.grad_defense)
            self._audit("defense", before, lam, self.attack.params)
        if self.cfg.freeze_attack:
            return total
        for _ in range(self.cfg.attack_steps):
            value = self._game_loss(x, y)
            before, lam = self.f.params, self.attack.params
            try:
                params = adam_step(self.attack_opt, lam, value.grad_attack, "ascent")
            except NumericError as e:
                raise NumericError(
                    f"{self.name}: {e}", index=e.index,
                    epoch=self.epoch, step=self.step_count, checkpoint=self.last_checkpoint,
                )
            self.attack = self.attack.with_params(params)
            self._audit("attack", before, lam, self.attack.params)
        return total

    def test_metrics(self):
        x, y = self.data.test()
        if x.shape[0] == 0:
            return float("nan"), {"none": float("nan"), "net": float("nan")}
        x_adv = self.attack.adversarial_example(x, y, clip_input=self.cfg.clip_input)
        # test loss is always the plain adversarial loss, whatever the training mix
        plain = loss(LossKind(self.kind.kind), self.f.forward(x_adv), y)
        if self.kind.mix != "plain":
            mixed = adversarial_loss(self.kind, self.f, self.attack, x, y, clip_input=self.cfg.clip_input)
            logging.info(f"{self.name} epoch {self.epoch}: {self.kind.mix} test loss {mixed.per_sample.mean():.6f}")
        errors = {"none": _mean_error(self.f, x, y), "net": _mean_error(self.f, x_adv, y)}
        return float(plain.per_sample.mean()), errors

    def after_epoch(self) -> None:
        budget_sweep(self.attack, self.cfg.seed, self.epoch)

    def manifest(self) -> dict:
        data = super().manifest()
        data["loss"] = {"kind": self.kind.kind, "mix": self.kind.mix, "alpha": self.kind.alpha}
        return data

    def save(self, final: bool = False) -> None:
        super().save(final)
        if self.checkpoint_dir is None:
            return
        tag = "final" if final else f"epoch{self.epoch:04d}"
        save_checkpoint(self.checkpoint_dir / f"{self.name}-{tag}-attack.json", self.attack, self.manifest())


class PgdTrainer(Trainer):
    """f_PGD: descent on losses at fresh PGD examples of the current defense"""

    name = "pgd"

    def __init__(self, f: DefenseNet, data: Dataset, cfg: GameConfig, pgd_cfg: PgdConfig, checkpoint_dir=None):
        super().__init__(f, data, cfg, checkpoint_dir)
        self.pgd_cfg = pgd_cfg
        self.batch_no = 0

    def _pgd(self, x, y, seed) -> np.ndarray:
        objective = DefenseObjective(self.f, self.kind, y)
        misclassified = objective.misclassified if self.f.task == "classification" else None
        return pgd_objective(objective, x, replace(self.pgd_cfg, seed=seed), misclassified).x_adv

    def train_batch(self, x, y) -> float:
        self.batch_no += 1
        seed = int(np.random.SeedSequence([self.pgd_cfg.seed, self.epoch, self.batch_no]).generate_state(1)[0])
        x_adv = self._pgd(x, y, seed)
        total = 0.0
        for p in range(self.cfg.defense_steps):
            value = clean_loss(self.kind, self.f, x_adv, y)
            self._guard(value.total)
            if p == 0:
                total = value.total
            before = self.f.params
            self._descend(value.grad_defense)
            self._audit("defense", before)
        return total

    def run_epoch(self) -> EpochStats:
        self.batch_no = 0
        return super().run_epoch()

    def test_metrics(self):
        x, y = self.data.test()
        if x.shape[0] == 0:
            return float("nan"), {"none": float("nan"), "pgd": float("nan")}
        x_adv = self._pgd(x, y, self.pgd_cfg.seed)
        value = loss(self.kind, self.f.forward(x_adv), y)
        errors = {"none": _mean_error(self.f, x, y), "pgd": _mean_error(self.f, x_adv, y)}
        return float(value.per_sample.mean()), errors


def budget_sweep(attack: AttackModel, seed: int, epoch: int, n: int = BUDGET_SWEEP) -> None:
    """Random inputs and labels; every λ(x, y) must stay inside the δ-ball"""
    rng = np.random.default_rng([seed, epoch, n])
    x = rng.uniform(0.0, 1.0, size=(n, attack.dim))
    y = rng.integers(0, attack.n_branches, size=n) if attack.task == "classification" else None
    norms = attack.constraint.norm(attack.forward(x, y))
    worst = float(norms.max())
    if worst > attack.constraint.delta + 1e-9:
        raise NumericError(f"attack left the {attack.constraint.label} ball: norm {worst!r}", epoch=epoch)


def train_game(f: DefenseNet, attack: AttackModel, data: Dataset, cfg: GameConfig, checkpoint_dir=None, on_epoch=None):
    trainer = GameTrainer(f, attack, data, cfg, checkpoint_dir)
    record = trainer.fit(on_epoch)
    return trainer.f, trainer.attack, record


def train_pgd_baseline(f: DefenseNet, data: Dataset, cfg: GameConfig, pgd_cfg: PgdConfig, checkpoint_dir=None, on_epoch=None):
    trainer = PgdTrainer(f, data, cfg, pgd_cfg, checkpoint_dir)
    record = trainer.fit(on_epoch)
    return trainer.f, record


def train_clean(f: DefenseNet, data: Dataset, cfg: GameConfig, checkpoint_dir=None, on_epoch=None):
    trainer = CleanTrainer(f, data, cfg, checkpoint_dir)
    record = trainer.fit(on_epoch)
    return trainer.f, record


def lockstep(trainers: Dict[str, Trainer], epochs: int, on_epoch: Optional[Callable[[int, Dict[str, Trainer]], None]] = None) -> None:
    """Advance several trainers one epoch at a time, side by side"""
    for epoch in range(1, epochs + 1):
        for trainer in trainers.values():
            trainer.run_epoch()
        if on_epoch is not None:
            on_epoch(epoch, trainers)
    for trainer in trainers.values():
        trainer.save(final=True)
