import logging

from commands._common import add_config_args, base_manifest, build_models, dataset_from_args, resolve_config, run_dir
from eval_report import emit_curves, write_manifest
from training import train_clean, train_game, train_pgd_baseline


class TrainCommands:
    """Single-model training runs"""

    def __init__(self, app):
        for name, handler, help in (
            ("train-clean", self.train_clean, "train a defense on clean data"),
            ("train-game", self.train_game, "train defense and attack networks against each other"),
            ("train-pgd", self.train_pgd, "adversarial training on PGD examples"),
        ):
            sub = app.add_command(name, handler, help)
            add_config_args(sub)
            sub.add_argument("--epochs", type=int, default=None)
            sub.add_argument("--run-name", type=str, default=None)

    def _prepare(self, args):
        cfg = resolve_config(args, overrides={"training.epochs": args.epochs, "run_name": args.run_name})
        data = dataset_from_args(args, cfg)
        f, attack = build_models(cfg, data)
        out = run_dir(cfg)
        return cfg, data, f, attack, out

    def _finish(self, cfg, data, record, out, extra=None):
        emit_curves(record, out / "curves.csv")
        manifest = base_manifest(cfg, data)
        manifest["trainer"] = record.name
        manifest["epochs_completed"] = len(record)
        manifest["final"] = {
            "train_loss": record.epochs[-1].train_loss,
            "test_loss": record.epochs[-1].test_loss,
            "test_error": record.epochs[-1].test_error,
        }
        manifest.update(extra or {})
        write_manifest(out, manifest)
        logging.info(f"{record.name} training finished, artifacts in {out}")
        return 0

    def train_clean(self, args) -> int:
        cfg, data, f, _, out = self._prepare(args)
        _, record = train_clean(f, data, cfg.game_config(), out / "checkpoints")
        return self._finish(cfg, data, record, out)

    def train_game(self, args) -> int:
        cfg, data, f, attack, out = self._prepare(args)
        _, _, record = train_game(f, attack, data, cfg.game_config(), out / "checkpoints")
        return self._finish(cfg, data, record, out)

    def train_pgd(self, args) -> int:
        cfg, data, f, _, out = self._prepare(args)
        _, record = train_pgd_baseline(f, data, cfg.game_config(), cfg.pgd_config(), out / "checkpoints")
        return self._finish(cfg, data, record, out)


def setup(app):
    """Setup function called by the entry point when loading this module"""
    TrainCommands(app)
