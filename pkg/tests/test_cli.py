import json

import pandas as pd
import pytest

import advgame
from advgame import AdvGameApp, main
from data import read_dataset

SMALL = {
    "data": {"n": 60},
    "training": {"epochs": 2},
    "pgd": {"steps": 5, "restarts": 2},
    "evaluation": {"resolution": 5},
}


def write_config(tmp_path, name="small.json", **sections):
    values = json.loads(json.dumps(SMALL))
    for key, value in sections.items():
        if isinstance(value, dict):
            values.setdefault(key, {}).update(value)
        else:
            values[key] = value
    path = tmp_path / name
    path.write_text(json.dumps(values))
    return path


def test_every_command_is_registered():
    app = AdvGameApp().load_commands()
    assert sorted(app.loaded) == ["attack", "evaluate", "flow", "gen_data", "reproduce", "train"]
    commands = set(app.subparsers.choices)
    assert commands == {
        "gen-data", "train-clean", "train-game", "train-pgd", "attack", "flow", "eval", "export-grid", "reproduce",
    }


def test_a_broken_command_module_is_logged_and_skipped(monkeypatch, caplog):
    real_import = advgame.importlib.import_module

    def import_module(name):
        if name == "commands.flow":
            raise ImportError("no flow today")
        return real_import(name)

    monkeypatch.setattr(advgame.importlib, "import_module", import_module)
    app = AdvGameApp().load_commands()
    assert "flow" not in app.loaded and "train" in app.loaded
    assert "flow" not in app.subparsers.choices
    assert "Failed to load flow" in caplog.text
    assert "no flow today" in caplog.text


def test_gen_data_writes_a_readable_dataset(tmp_path):
    out = tmp_path / "moons.csv"
    assert main(["gen-data", "--family", "moons", "--n", "50", "--seed", "2", "--out", str(out)]) == 0
    ds = read_dataset(out)
    assert ds.n == 50 and ds.provenance["generator"] == "moons"


def test_invalid_p_exits_with_a_config_error(tmp_path, caplog):
    config = write_config(tmp_path, constraint={"p": "3"}, output_dir=str(tmp_path / "runs"))
    assert main(["reproduce", "circles-linf", "--config", str(config)]) == 2
    assert "constraint.p" in caplog.text


def test_missing_checkpoint_exits_with_an_io_error(tmp_path):
    data = tmp_path / "d.csv"
    main(["gen-data", "--n", "20", "--out", str(data)])
    assert main(["eval", "--defense", str(tmp_path / "absent.json"), "--data", str(data), "--out", str(tmp_path)]) == 4


def _reproduce(tmp_path, run_name):
    config = write_config(tmp_path, output_dir=str(tmp_path / "runs"), run_name=run_name)
    assert main(["reproduce", "circles-linf", "--config", str(config)]) == 0
    return tmp_path / "runs" / run_name


def test_reproduce_writes_every_artifact(tmp_path):
    run = _reproduce(tmp_path, "first")
    for name in ("config.json", "data.csv", "curves.csv", "matrix.csv", "field.csv", "manifest.json"):
        assert (run / name).exists(), name

    curves = pd.read_csv(run / "curves.csv")
    assert list(curves.columns) == ["epoch", "defense", "attack", "metric", "value"]
    assert len(curves) == 24 * 2
    assert set(curves.defense) == {"f", "f_pgd", "f_clean"}
    assert set(curves.attack) == {"none", "net", "pgd", "fgsm"}

    matrix = pd.read_csv(run / "matrix.csv")
    assert list(matrix.columns) == ["defense", "attack", "loss_mean", "loss_sum", "error"]
    assert len(matrix) == 12
    assert len(pd.read_csv(run / "field.csv")) == 25

    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["epochs_completed"] == 2
    assert manifest["dataset_fingerprint"] == read_dataset(run / "data.csv").fingerprint
    resolved = json.loads((run / "config.json").read_text())
    assert resolved["pgd"]["steps"] == 5 and resolved["training"]["batch_size"] == 32


def test_reproduce_is_deterministic(tmp_path):
    first = _reproduce(tmp_path, "first")
    second = _reproduce(tmp_path, "second")
    for name in ("curves.csv", "matrix.csv", "field.csv", "data.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes(), name


def test_train_then_attack_and_evaluate(tmp_path):
    data = tmp_path / "circles.csv"
    main(["gen-data", "--n", "60", "--seed", "1", "--out", str(data)])
    config = write_config(tmp_path, output_dir=str(tmp_path / "runs"))
    assert main(["train-game", "--config", str(config), "--data", str(data), "--run-name", "game"]) == 0
    assert main(["train-clean", "--config", str(config), "--data", str(data), "--run-name", "clean"]) == 0
    game = tmp_path / "runs" / "game" / "checkpoints"
    clean = tmp_path / "runs" / "clean" / "checkpoints" / "clean-final-defense.json"

    adv = tmp_path / "adv.csv"
    assert main(["attack", "--method", "fgsm", "--model", str(clean), "--data", str(data), "--out", str(adv)]) == 0
    frame = pd.read_csv(adv)
    assert len(frame) == 12
    assert (frame.loss_adv >= frame.loss_clean - 1e-12).mean() > 0.5

    out = tmp_path / "eval"
    args = [
        "eval", "--defense", f"f={game / 'game-final-defense.json'}", f"f_clean={clean}",
        "--attack", "none", "pgd", f"net:{game / 'game-final-attack.json'}",
        "--data", str(data), "--config", str(config), "--out", str(out),
    ]
    assert main(args) == 0
    matrix = pd.read_csv(out / "matrix.csv")
    assert len(matrix) == 6
    assert set(matrix.defense) == {"f", "f_clean"}

    field = tmp_path / "field.csv"
    assert main([
        "export-grid", "--defense", str(clean), "--attack-model", str(game / "game-final-attack.json"),
        "--labeler", str(clean), "--resolution", "4", "--out", str(field),
    ]) == 0
    assert len(pd.read_csv(field)) == 16


@pytest.mark.parametrize("saddle", ["none", "deflect"])
def test_flow_command_writes_trajectory_and_certificates(tmp_path, saddle):
    out = tmp_path / "flow.csv"
    assert main(["flow", "--function", "saddle", "--saddle", saddle, "--grid-check", "--out", str(out)]) == 0
    assert list(pd.read_csv(out).columns) == ["t", "x1", "x2", "F"]
    kkt = json.loads((tmp_path / "flow.kkt.json").read_text())
    assert kkt["converged"] is True
    grid = json.loads((tmp_path / "flow.grid.json").read_text())
    assert grid["relative_gap"] <= 0.01
