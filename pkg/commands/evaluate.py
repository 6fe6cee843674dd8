import logging
from pathlib import Path

from checkpoint import load_attack, load_defense
from commands._common import attack_specs, base_manifest, load_dataset, load_models, load_net_attacks, resolve_config
from eval_report import evaluate_matrix, export_field, write_manifest


class EvalCommands:
    """Evaluation matrix and grid field export for saved models"""

    def __init__(self, app):
        sub = app.add_command("eval", self.evaluate, "defense x attack evaluation matrix on the test split")
        sub.add_argument("--defense", nargs="+", required=True, help="NAME=PATH or PATH of defense checkpoints")
        sub.add_argument("--attack", nargs="+", default=["none", "pgd", "fgsm"],
                         help="none, pgd, pgd_early, fgsm or net:PATH")
        sub.add_argument("--data", type=str, required=True)
        sub.add_argument("--labeler", type=str, default=None, help="defense checkpoint imputing labels for net attacks")
        sub.add_argument("--config", type=str, default=None)
        sub.add_argument("--seed", type=int, default=None)
        sub.add_argument("--out", type=str, required=True)

        sub = app.add_command("export-grid", self.export_grid, "loss, gradient and attack field on a 2D grid")
        sub.add_argument("--defense", type=str, required=True)
        sub.add_argument("--attack-model", type=str, required=True)
        sub.add_argument("--labeler", type=str, required=True, help="defense checkpoint imputing the grid labels")
        sub.add_argument("--resolution", type=int, default=None)
        sub.add_argument("--config", type=str, default=None)
        sub.add_argument("--out", type=str, required=True, help="field CSV")

    def evaluate(self, args) -> int:
        defenses = load_models(args.defense)
        task = next(iter(defenses.values())).task
        cfg = resolve_config(args, overrides={
            "model.task": task,
            "output_dir": None,
            "evaluation.label_mode": "imputed" if args.labeler else None,
        })
        data = load_dataset(args.data, cfg)
        labeler = load_defense(args.labeler) if args.labeler else None
        specs = attack_specs(cfg, args.attack, labeler=labeler, net_models=load_net_attacks(args.attack))
        matrix = evaluate_matrix(defenses, specs, data, cfg.loss_kind())
        out = Path(args.out)
        matrix.write(out / "matrix.csv")
        manifest = base_manifest(cfg, data)
        manifest["defenses"] = args.defense
        manifest["attacks"] = args.attack
        write_manifest(out, manifest)
        for (d, a), cell in matrix.cells.items():
            logging.info(f"{d:>10} x {a:<10} loss {cell.loss_mean:.6f} error {cell.error:.4f}")
        return 0

    def export_grid(self, args) -> int:
        f = load_defense(args.defense)
        cfg = resolve_config(args, overrides={"model.task": f.task, "output_dir": None})
        resolution = args.resolution or cfg.values["evaluation"]["resolution"]
        field = export_field(f, load_attack(args.attack_model), load_defense(args.labeler), resolution, cfg.loss_kind())
        path = field.write(args.out)
        logging.info(f"wrote {resolution}x{resolution} field to {path}")
        return 0


def setup(app):
    """Setup function called by the entry point when loading this module"""
    EvalCommands(app)
