import logging

import numpy as np
import pytest

from attacks import PgdConfig
from data import FAMILIES, generate_2d
from errors import ConfigError, NumericError
from eval_report import AttackSpec, evaluate_matrix
from losses import LossKind, loss
from models import build_classification_pair, zero_attack
from training import (
    CleanTrainer,
    GameConfig,
    GameTrainer,
    PgdTrainer,
    budget_sweep,
    lockstep,
    oscillation,
    train_clean,
    train_game,
    train_pgd_baseline,
)


def small_config(**overrides):
    values = dict(epochs=3, defense_lr=1e-2, attack_lr=1e-3, batch_size=16, seed=1)
    values.update(overrides)
    return GameConfig(**values)


def test_game_config_collects_every_violation():
    with pytest.raises(ConfigError) as info:
        GameConfig(epochs=0, defense_lr=0.0, batch_size=0)
    assert len(info.value.violations) == 3


def test_frozen_zero_attack_game_is_clean_training(pair, circles):
    f, attack = pair
    cfg = small_config(freeze_attack=True)
    f_game, lam, game_record = train_game(f, zero_attack(attack), circles, cfg)
    f_clean, clean_record = train_clean(f, circles, cfg)
    np.testing.assert_array_equal(f_game.params, f_clean.params)
    np.testing.assert_array_equal(lam.params, 0.0)
    assert [e.train_loss for e in game_record.epochs] == [e.train_loss for e in clean_record.epochs]


def test_pgd_with_zero_step_is_clean_training(pair, circles, linf):
    f, _ = pair
    cfg = small_config()
    f_pgd, _ = train_pgd_baseline(f, circles, cfg, PgdConfig(linf, gamma=0.0, steps=1, restarts=1))
    f_clean, _ = train_clean(f, circles, cfg)
    np.testing.assert_array_equal(f_pgd.params, f_clean.params)


def test_game_training_is_deterministic(pair, circles):
    f, attack = pair
    cfg = small_config()
    a = train_game(f, attack, circles, cfg)
    b = train_game(f, attack, circles, cfg)
    np.testing.assert_array_equal(a[0].params, b[0].params)
    np.testing.assert_array_equal(a[1].params, b[1].params)
    assert [e.values() for e in a[2].epochs] == [e.values() for e in b[2].epochs]


def test_players_strictly_alternate(pair, circles):
    f, attack = pair
    cfg = small_config(epochs=2, defense_steps=2, attack_steps=3, batch_size=None)
    _, _, record = train_game(f, attack, circles, cfg)
    assert len(record) == 2
    players = [a.player for a in record.audit]
    assert players == ["defense", "defense", "attack", "attack", "attack"] * 2
    for step in record.audit:
        if step.player == "defense":
            assert step.defense_changed and not step.attack_changed
        else:
            assert step.attack_changed and not step.defense_changed


def test_minibatches_cover_the_training_split(pair, circles):
    f, attack = pair
    trainer = GameTrainer(f, attack, circles, small_config(batch_size=7))
    trainer.epoch = 1
    batches = trainer.batches()
    assert all(len(b) <= 7 for b in batches)
    np.testing.assert_array_equal(np.sort(np.concatenate(batches)), circles.train_idx)


def test_clean_training_lowers_the_loss(pair, circles):
    f, _ = pair
    _, record = train_clean(f, circles, small_config(epochs=40))
    assert record.epochs[-1].train_loss < record.epochs[0].train_loss


def test_regression_training_beats_the_mean(regression_pair, regression_data, l2):
    f, _ = regression_pair
    cfg = small_config(epochs=150, loss=LossKind.for_task("regression"), constraint=l2, batch_size=None)
    _, record = train_clean(f, regression_data, cfg)
    assert record.epochs[-1].train_loss < 1.0


def test_pgd_trainer_reports_pgd_error(pair, circles, linf):
    f, _ = pair
    _, record = train_pgd_baseline(f, circles, small_config(epochs=1), PgdConfig(linf, steps=3, restarts=2))
    stats = record.epochs[0]
    assert set(stats.test_error) == {"none", "pgd"}
    assert stats.test_error["pgd"] >= stats.test_error["none"]


def test_checkpoints_are_written(tmp_path, pair, circles):
    f, attack = pair
    train_game(f, attack, circles, small_config(epochs=2, checkpoint_every=2), checkpoint_dir=tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == [
        "game-epoch0002-attack.json",
        "game-epoch0002-defense.json",
        "game-final-attack.json",
        "game-final-defense.json",
    ]


def test_non_finite_loss_carries_context(pair, circles):
    f, _ = pair
    trainer = CleanTrainer(f, circles, small_config())
    trainer.epoch, trainer.step_count, trainer.last_checkpoint = 4, 9, "runs/x.json"
    with pytest.raises(NumericError) as info:
        trainer._guard(float("nan"))
    assert (info.value.epoch, info.value.step, info.value.checkpoint) == (4, 9, "runs/x.json")
    assert "last checkpoint=runs/x.json" in str(info.value)


def test_budget_sweep_catches_an_escaping_attack(pair, monkeypatch):
    _, attack = pair
    budget_sweep(attack, seed=0, epoch=1)
    monkeypatch.setattr(attack, "forward", lambda x, y=None: np.ones_like(x))
    with pytest.raises(NumericError, match="left the"):
        budget_sweep(attack, seed=0, epoch=1)


def test_mismatched_data_is_rejected(regression_data, pair):
    f, _ = pair
    with pytest.raises(ConfigError):
        CleanTrainer(f, regression_data, small_config())


def test_lockstep_runs_every_trainer_each_epoch(pair, circles):
    f, attack = pair
    cfg = small_config(epochs=2)
    trainers = {"f": GameTrainer(f, attack, circles, cfg), "f_clean": CleanTrainer(f, circles, cfg)}
    seen = []
    lockstep(trainers, 2, lambda epoch, current: seen.append((epoch, [len(t.record) for t in current.values()])))
    assert seen == [(1, [1, 1]), (2, [2, 2])]


def test_oscillation():
    assert oscillation([5.0, 4.0, 2.0, 2.0, 2.0]) == 0.0
    assert oscillation([3.0, 2.0, 1.0, 1.1, 1.0], fraction=0.6) == pytest.approx(0.1)
    assert oscillation([]) == 0.0


@pytest.mark.slow
def test_game_training_reproduces_the_robustness_claims(linf):
    data = generate_2d("circles", 1000, 0.05, seed=0)
    f, attack = build_classification_pair(2, 2, linf, seed=0)
    cfg = GameConfig(epochs=30, batch_size=32, constraint=linf, seed=0)
    trainers = {"f": GameTrainer(f, attack, data, cfg), "f_clean": CleanTrainer(f, data, cfg)}
    lockstep(trainers, cfg.epochs)

    losses = trainers["f"].record.test_losses()
    assert losses[-1] < losses[0]
    assert oscillation(losses) <= 0.25

    spec = AttackSpec("pgd", "pgd", pgd=PgdConfig(linf, seed=0))
    matrix = evaluate_matrix({name: t.f for name, t in trainers.items()}, [spec], data)
    assert matrix.cell("f", "pgd").loss_mean < matrix.cell("f_clean", "pgd").loss_mean


@pytest.mark.parametrize("mix", ["alpha", "trades"])
def test_mixed_game_reports_the_plain_adversarial_test_loss(pair, circles, mix, caplog):
    f, attack = pair
    cfg = small_config(epochs=1, loss=LossKind("cross_entropy", mix, 0.3))
    trainer = GameTrainer(f, attack, circles, cfg)
    with caplog.at_level(logging.INFO):
        trainer.fit()
    x, y = circles.test()
    x_adv = trainer.attack.adversarial_example(x, y)
    expected = loss(LossKind(), trainer.f.forward(x_adv), y).per_sample.mean()
    assert trainer.record.epochs[0].test_loss == float(expected)
    assert f"{mix} test loss" in caplog.text


@pytest.mark.slow
@pytest.mark.parametrize("family", FAMILIES)
def test_clean_training_fits_every_family(family, linf):
    data = generate_2d(family, 2000, 0.05, seed=0)
    f, _ = build_classification_pair(2, 2, linf, seed=0)
    f_clean, _ = train_clean(f, data, GameConfig(epochs=100, batch_size=32, seed=0))
    x, y = data.X[data.train_idx], data.y[data.train_idx]
    assert np.mean(f_clean.predict(x) == y) >= 0.95


@pytest.mark.slow
def test_pgd_training_resists_pgd_better_than_clean_training(linf):
    data = generate_2d("circles", 1000, 0.05, seed=0)
    f, _ = build_classification_pair(2, 2, linf, seed=0)
    cfg = GameConfig(epochs=30, batch_size=32, constraint=linf, seed=0)
    f_pgd, _ = train_pgd_baseline(f, data, cfg, PgdConfig(linf, steps=10, restarts=2, seed=0))
    f_clean, _ = train_clean(f, data, cfg)
    spec = AttackSpec("pgd", "pgd", pgd=PgdConfig(linf, seed=0))
    matrix = evaluate_matrix({"f_pgd": f_pgd, "f_clean": f_clean}, [spec], data)
    assert matrix.cell("f_pgd", "pgd").error < matrix.cell("f_clean", "pgd").error
