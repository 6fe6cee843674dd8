import logging
from pathlib import Path

import pandas as pd

from attacks import DefenseObjective, PgdConfig, fgsm, pgd_objective
from checkpoint import load_defense
from commands._common import load_dataset
from eval_report import FLOAT_FORMAT, error_rate
from losses import LossKind, loss
from models import LpConstraint
from run_config import RunConfig


class AttackCommands:
    """Gradient attacks against a saved defense"""

    def __init__(self, app):
        sub = app.add_command("attack", self.attack, "FGSM or PGD adversarial examples for a dataset")
        sub.add_argument("--method", choices=("fgsm", "pgd"), default="pgd")
        sub.add_argument("--p", type=str, default="inf")
        sub.add_argument("--delta", type=float, default=0.2)
        sub.add_argument("--gamma", type=float, default=0.01)
        sub.add_argument("--steps", type=int, default=50)
        sub.add_argument("--restarts", type=int, default=10)
        sub.add_argument("--early-stop", action="store_true", help="stop a row once it is misclassified")
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--split", choices=("test", "train", "all"), default="test")
        sub.add_argument("--model", type=str, required=True, help="defense checkpoint")
        sub.add_argument("--data", type=str, required=True)
        sub.add_argument("--out", type=str, required=True, help="CSV of adversarial examples")

    def attack(self, args) -> int:
        f = load_defense(args.model)
        data = load_dataset(args.data, RunConfig({"model": {"task": f.task}}))
        if args.split == "test":
            x, y = data.test()
        elif args.split == "train":
            x, y = data.train()
        else:
            x, y = data.X, data.y
        kind = LossKind.for_task(f.task)
        constraint = LpConstraint(args.p, args.delta)
        if args.method == "fgsm":
            x_adv = fgsm(f, kind, x, y, constraint)
        else:
            cfg = PgdConfig(
                constraint,
                gamma=args.gamma,
                steps=args.steps,
                restarts=args.restarts,
                early_stop_on_misclassify=args.early_stop,
                ascent_norm=constraint.p,
                seed=args.seed,
            )
            objective = DefenseObjective(f, kind, y)
            misclassified = objective.misclassified if f.task == "classification" else None
            x_adv = pgd_objective(objective, x, cfg, misclassified).x_adv

        frame = pd.DataFrame({f"x{i + 1}": x_adv[:, i] for i in range(x.shape[1])})
        frame["label" if f.task == "classification" else "target"] = y
        frame["loss_clean"] = loss(kind, f.forward(x), y).per_sample
        frame["loss_adv"] = loss(kind, f.forward(x_adv), y).per_sample
        if f.task == "classification":
            frame["misclassified"] = (f.predict(x_adv) != y).astype(int)
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False, float_format=FLOAT_FORMAT)
        logging.info(
            f"{args.method} {constraint.label}: mean loss {frame['loss_clean'].mean():.6f} -> {frame['loss_adv'].mean():.6f}, "
            f"error {error_rate(f, x, y):.4f} -> {error_rate(f, x_adv, y):.4f}; wrote {out}"
        )
        return 0


def setup(app):
    """Setup function called by the entry point when loading this module"""
    AttackCommands(app)
