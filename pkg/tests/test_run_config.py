import json

import numpy as np
import pytest

from errors import ConfigError, DataIOError
from run_config import DEFAULTS, RunConfig, load_properties_config


def test_defaults_validate():
    cfg = RunConfig().validate()
    assert cfg.constraint().p == np.inf
    assert cfg.game_config().epochs == DEFAULTS["training"]["epochs"]
    assert cfg.pgd_config().ascent_norm == np.inf


def test_properties_file_values_are_parsed(tmp_path):
    path = tmp_path / "run.properties"
    path.write_text("# l2 circles\ntraining.epochs=5\nconstraint.p=2\nrun_name=first try\npgd.early_stop=true\n\n")
    assert load_properties_config(path)["training.epochs"] == 5
    cfg = RunConfig.load(path).validate()
    assert cfg.get("training.epochs") == 5
    assert cfg.constraint().p == 2.0
    assert cfg.get("run_name") == "first try"
    assert cfg.pgd_config().early_stop_on_misclassify is True
    assert cfg.pgd_config().ascent_norm == 2.0


def test_json_file_and_round_trip(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"seed": 4, "data": {"family": "moons"}}))
    cfg = RunConfig.load(path)
    assert cfg.seed == 4 and cfg.get("data.family") == "moons"
    again = RunConfig.load(cfg.write(tmp_path / "copy.json"))
    assert again.to_dict() == cfg.to_dict()


def test_unreadable_config_files(tmp_path):
    with pytest.raises(DataIOError):
        RunConfig.load(tmp_path / "absent.json")
    with pytest.raises(DataIOError):
        RunConfig.load(tmp_path / "absent.properties")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2")
    with pytest.raises(ConfigError):
        RunConfig.load(bad)


def test_unknown_keys_are_all_reported():
    with pytest.raises(ConfigError) as info:
        RunConfig({"bogus": 1, "training": {"epoch": 3}, "data": 5})
    assert len(info.value.violations) == 3


def test_override_skips_unset_flags():
    cfg = RunConfig().override({"training.epochs": 7, "constraint.delta": None})
    assert cfg.get("training.epochs") == 7
    assert cfg.get("constraint.delta") == DEFAULTS["constraint"]["delta"]


def test_validation_collects_every_violation():
    cfg = RunConfig({
        "constraint": {"p": "3"},
        "pgd": {"steps": 0},
        "training": {"defense_lr": -1.0},
        "evaluation": {"label_mode": "guess", "attacks": ["none", "cw"]},
    })
    with pytest.raises(ConfigError) as info:
        cfg.validate()
    text = " ".join(info.value.violations)
    for key in ("constraint.p", "pgd.steps", "training.defense_lr", "evaluation.label_mode", "evaluation.attacks"):
        assert key in text


def test_type_errors_are_reported_before_ranges():
    with pytest.raises(ConfigError, match="training.epochs: must be an integer"):
        RunConfig({"training": {"epochs": "many"}}).validate()
    with pytest.raises(ConfigError, match="pgd.early_stop: must be true or false"):
        RunConfig({"pgd": {"early_stop": "yes"}}).validate()


def test_fgsm_needs_linf():
    with pytest.raises(ConfigError, match="fgsm"):
        RunConfig({"constraint": {"p": 2}, "evaluation": {"attacks": ["none", "fgsm"]}}).validate()
    RunConfig({"constraint": {"p": 2}, "evaluation": {"attacks": ["none", "pgd"]}}).validate()


@pytest.mark.parametrize("p", [1, 2])
def test_default_attacks_follow_the_ball(p):
    cfg = RunConfig({"constraint": {"p": p, "delta": 0.1}}).validate()
    assert cfg.eval_attacks() == ["none", "net", "pgd"]
    assert cfg.to_dict()["evaluation"]["attacks"] == ["none", "net", "pgd"]
    assert RunConfig().validate().eval_attacks() == ["none", "net", "pgd", "fgsm"]
