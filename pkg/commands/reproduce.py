import copy
import logging

import config
from commands._common import attack_specs, base_manifest, build_models, make_dataset, resolve_config, run_dir
from data import write_dataset
from eval_report import emit_curves, evaluate_matrix, export_field, write_manifest
from training import CleanTrainer, GameTrainer, PgdTrainer, TrainRecord, lockstep, oscillation

_MINIBATCH = {"training": {"batch_size": config.PRESET_BATCH_SIZE}}

PRESETS = {
    "circles-linf": {"data": {"family": "circles"}, "constraint": {"p": "inf"}},
    "circles-l2": {"data": {"family": "circles"}, "constraint": {"p": "2"},
                   "evaluation": {"attacks": ["none", "net", "pgd"]}},
    "moons-linf": {"data": {"family": "moons"}, "constraint": {"p": "inf"}},
    "streaks-linf": {"data": {"family": "streaks"}, "constraint": {"p": "inf"}},
    "polynomials-linf": {"data": {"family": "polynomials"}, "constraint": {"p": "inf"}},
    "regression-l2": {"data": {"family": "regression"}, "model": {"task": "regression"}, "constraint": {"p": "2"},
                      "evaluation": {"attacks": ["none", "net", "pgd"]}},
}


def preset_values(name: str, full_scale: bool = False) -> dict:
    values = copy.deepcopy(PRESETS[name])
    for section, items in _MINIBATCH.items():
        values.setdefault(section, {}).update(items)
    if full_scale:
        regression = values.get("model", {}).get("task") == "regression"
        values["training"]["epochs"] = config.EPOCHS_REGRESSION if regression else config.EPOCHS_CLASSIFICATION
        values.setdefault("data", {})["n"] = config.FULL_N
    return values


class ReproduceCommands:
    """The full pipeline: clean, game and PGD training side by side, then
    the evaluation matrix and the field export"""

    def __init__(self, app):
        sub = app.add_command("reproduce", self.reproduce, "run a complete experiment preset")
        sub.add_argument("preset", choices=sorted(PRESETS))
        sub.add_argument("--config", type=str, default=None)
        sub.add_argument("--epochs", type=int, default=None)
        sub.add_argument("--n", type=int, default=None)
        sub.add_argument("--full-scale", action="store_true", help="full epoch count and sample size")
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("--out", type=str, default=None)
        sub.add_argument("--run-name", type=str, default=None)
        sub.add_argument("--with-early-stop-pgd", action="store_true", help="add the early-stopped PGD column")

    def reproduce(self, args) -> int:
        cfg = resolve_config(
            args,
            base=preset_values(args.preset, args.full_scale),
            overrides={
                "training.epochs": args.epochs,
                "data.n": args.n,
                "run_name": args.run_name,
                "evaluation.early_stop_pgd": True if args.with_early_stop_pgd else None,
            },
        )
        out = run_dir(cfg)
        data = make_dataset(cfg)
        write_dataset(data, out / "data.csv")
        f, attack = build_models(cfg, data)
        game_cfg = cfg.game_config()
        checkpoints = out / "checkpoints"
        trainers = {
            "f": GameTrainer(f, attack, data, game_cfg, checkpoints),
            "f_pgd": PgdTrainer(f, data, game_cfg, cfg.pgd_config(), checkpoints),
            "f_clean": CleanTrainer(f, data, game_cfg, checkpoints),
        }
        names = cfg.eval_attacks()
        if cfg.values["evaluation"]["early_stop_pgd"] and "pgd_early" not in names:
            names.append("pgd_early")
        curves = TrainRecord("lockstep")

        def evaluate(epoch, current):
            specs = attack_specs(cfg, names, attack=current["f"].attack, labeler=current["f_clean"].f)
            defenses = {name: trainer.f for name, trainer in current.items()}
            curves.matrices[epoch] = evaluate_matrix(defenses, specs, data, cfg.loss_kind())

        lockstep(trainers, game_cfg.epochs, evaluate)

        emit_curves(curves, out / "curves.csv")
        final = curves.matrices[game_cfg.epochs]
        final.write(out / "matrix.csv")
        artifacts = ["config.json", "data.csv", "curves.csv", "matrix.csv"]
        if data.dim == 2:
            game = trainers["f"]
            field = export_field(game.f, game.attack, trainers["f_clean"].f, cfg.values["evaluation"]["resolution"], cfg.loss_kind())
            field.write(out / "field.csv")
            artifacts.append("field.csv")
        else:
            logging.warning(f"skipping field export for D={data.dim}")

        game_losses = trainers["f"].record.test_losses().tolist()
        manifest = base_manifest(cfg, data)
        manifest.update({
            "preset": args.preset,
            "artifacts": artifacts,
            "epochs_completed": len(game_losses),
            "game_loss_first": game_losses[0],
            "game_loss_final": game_losses[-1],
            "game_loss_oscillation": oscillation(game_losses),
            "wall_clock": {name: sum(e.wall_clock for e in t.record.epochs) for name, t in trainers.items()},
        })
        write_manifest(out, manifest)
        logging.info(f"reproduce {args.preset} finished in {out}")
        return 0


def setup(app):
    """Setup function called by the entry point when loading this module"""
    ReproduceCommands(app)
