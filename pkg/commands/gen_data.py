import logging

import config
from data import FAMILIES, generate_2d, generate_regression, write_dataset


class DataCommands:
    """Synthetic dataset generation"""

    def __init__(self, app):
        sub = app.add_command("gen-data", self.gen_data, "generate a synthetic dataset CSV")
        sub.add_argument("--family", choices=FAMILIES + ("regression",), default="circles")
        sub.add_argument("--n", type=int, default=config.FULL_N)
        sub.add_argument("--noise", type=float, default=config.NOISE)
        sub.add_argument("--seed", type=int, default=config.DEFAULT_SEED)
        sub.add_argument("--dim", type=int, default=2, help="feature count (regression only)")
        sub.add_argument("--split-fraction", type=float, default=0.8)
        sub.add_argument("--out", type=str, required=True, help="dataset CSV path")

    def gen_data(self, args) -> int:
        if args.family == "regression":
            ds = generate_regression(args.n, args.dim, args.noise, args.seed, args.split_fraction)
        else:
            ds = generate_2d(args.family, args.n, args.noise, args.seed, args.split_fraction)
        path = write_dataset(ds, args.out)
        logging.info(f"{args.family}: {ds.n} rows ({len(ds.train_idx)} train / {len(ds.test_idx)} test) -> {path}")
        return 0


def setup(app):
    """Setup function called by the entry point when loading this module"""
    DataCommands(app)
