"""
Helpers shared by the command modules
"""

import logging
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

import config
from checkpoint import load_attack, load_defense
from data import FAMILIES, Dataset, generate_2d, generate_regression, load_regression_csv, meta_path, read_dataset
from errors import ConfigError
from eval_report import AttackSpec
from models import AttackModel, DefenseNet, build_pair
from nn_core import Mlp
from run_config import RunConfig


def add_config_args(parser, data: bool = True):
    parser.add_argument("--config", type=str, default=None, help="JSON or .properties run configuration")
    if data:
        parser.add_argument("--data", type=str, default=None, help="dataset CSV (written by gen-data) or a raw regression CSV")
    parser.add_argument("--out", type=str, default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None)


def resolve_config(args, base: Optional[dict] = None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then `base`, then the --config file, then flags"""
    cfg = RunConfig(base)
    if getattr(args, "config", None):
        cfg.merge(RunConfig.read(args.config))
    flags = {"seed": getattr(args, "seed", None), "output_dir": getattr(args, "out", None)}
    flags.update(overrides or {})
    cfg.override(flags)
    return cfg.validate()


def run_dir(cfg: RunConfig) -> Path:
    name = cfg.values["run_name"] or f"{datetime.now().strftime('%Y%m%d-%H%M%S')}-seed{cfg.seed}"
    path = Path(cfg.values["output_dir"]) / name
    path.mkdir(parents=True, exist_ok=True)
    cfg.write(path / "config.json")
    logging.info(f"run directory {path}")
    return path


def make_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.values["data"]
    if d["path"]:
        return load_dataset(d["path"], cfg)
    if cfg.task == "regression":
        return generate_regression(d["n"], d["dim"], d["noise"], cfg.seed, d["split_fraction"], d["standardize"])
    if d["family"] not in FAMILIES:
        raise ConfigError(f"data.family must be one of {', '.join(FAMILIES)}, got {d['family']!r}")
    return generate_2d(d["family"], d["n"], d["noise"], cfg.seed, d["split_fraction"])


def load_dataset(path, cfg: RunConfig) -> Dataset:
    """A gen-data file when it has a sidecar, a raw regression CSV otherwise"""
    if meta_path(path).exists():
        return read_dataset(path)
    d = cfg.values["data"]
    if not d["target_column"]:
        raise ConfigError(f"{path} has no metadata sidecar; set data.target_column to load it as regression data")
    return load_regression_csv(path, d["target_column"], d["split_fraction"], cfg.seed, d["standardize"])


def dataset_from_args(args, cfg: RunConfig) -> Dataset:
    if getattr(args, "data", None):
        return load_dataset(args.data, cfg)
    return make_dataset(cfg)


def check_task(cfg: RunConfig, data: Dataset):
    if cfg.task != data.task:
        raise ConfigError(f"model.task is {cfg.task} but the dataset is {data.task}")


def build_models(cfg: RunConfig, data: Dataset):
    check_task(cfg, data)
    f, attack = build_pair(data.task, data.dim, data.n_classes, cfg.constraint(), cfg.seed)
    kappa = cfg.values["model"]["kappa"]
    if kappa is not None:
        net = Mlp(f.net.layers, f.params, kappa=kappa, seed=f.net.seed)
        f = DefenseNet(net, f.task, f.n_classes)
    return f, attack


def base_manifest(cfg: RunConfig, data: Dataset) -> dict:
    return {
        "app": config.APP_NAME,
        "app_version": config.APP_VERSION,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "dataset_fingerprint": data.fingerprint,
        "dataset_provenance": data.provenance,
        "label_mode": cfg.values["evaluation"]["label_mode"],
    }


def attack_specs(
    cfg: RunConfig,
    names: List[str],
    attack: Optional[AttackModel] = None,
    labeler: Optional[DefenseNet] = None,
    net_models: Optional[Dict[str, AttackModel]] = None,
) -> List[AttackSpec]:
    """Evaluation columns for attack names (`net:NAME` picks from net_models)"""
    label_mode = cfg.values["evaluation"]["label_mode"]
    specs = []
    for name in names:
        if name == "none":
            specs.append(AttackSpec("none", "none"))
        elif name == "net" or name.startswith("net:"):
            model = attack if name == "net" else (net_models or {}).get(name)
            specs.append(AttackSpec(name, "net", model=model, label_mode=label_mode, labeler=labeler))
        elif name == "pgd_early":
            specs.append(AttackSpec(name, "pgd_early", pgd=cfg.pgd_config(early_stop=True)))
        elif name in ("pgd", "fgsm"):
            specs.append(AttackSpec(name, name, pgd=cfg.pgd_config()))
        else:
            raise ConfigError(f"unknown attack {name!r}")
    return specs


def load_models(defense_paths: List[str]) -> Dict[str, DefenseNet]:
    """NAME=PATH or PATH (named by file stem)"""
    defenses = {}
    for item in defense_paths:
        name, _, path = item.rpartition("=")
        defenses[name or Path(path).stem] = load_defense(path)
    return defenses


def load_net_attacks(names: List[str]) -> Dict[str, AttackModel]:
    return {name: load_attack(name.split(":", 1)[1]) for name in names if name.startswith("net:")}
