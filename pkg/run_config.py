"""
Declarative run configuration

Read from a JSON document or a .properties file with dotted keys
(`training.epochs=30`). Unknown sections and keys are rejected, and
validation reports every violation at once.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

import config
from attacks import PgdConfig
from errors import AdvGameError, ConfigError, DataIOError
from flow_oracle import FlowConfig
from losses import LossKind
from models import LpConstraint
from training import GameConfig

DEFAULTS: Dict[str, object] = {
    "seed": config.DEFAULT_SEED,
    "output_dir": config.OUTPUT_DIR,
    "run_name": None,
    "data": {
        "family": "circles",
        "n": config.DESK_N,
        "noise": config.NOISE,
        "split_fraction": 0.8,
        "path": None,
        "target_column": None,
        "dim": 2,
        "standardize": True,
    },
    "model": {
        "task": "classification",
        "kappa": None,
    },
    "constraint": {
        "p": "inf",
        "delta": config.DELTA,
    },
    "training": {
        "epochs": config.DESK_EPOCHS,
        "defense_steps": config.DEFENSE_STEPS,
        "attack_steps": config.ATTACK_STEPS,
        "defense_lr": config.DEFENSE_LR,
        "attack_lr": config.ATTACK_LR,
        "batch_size": None,
        "mix": "plain",
        "alpha": 0.0,
        "checkpoint_every": config.CHECKPOINT_EVERY,
        "clip_input": False,
        "clip_kappa": False,
    },
    "pgd": {
        "gamma": config.PGD_GAMMA,
        "steps": config.PGD_STEPS,
        "restarts": config.PGD_RESTARTS,
        "early_stop": False,
        "ascent_norm": None,
        "step_mode": "normalized",
    },
    "flow": {
        "integrator": "rk4",
        "dt": None,
        "max_time": 50.0,
        "stationarity_tol": 1e-6,
        "saddle": "none",
        "epsilon": None,
        "sigma": 1e-3,
        "noise_horizon": 5.0,
    },
    "evaluation": {
        # None: none, net, pgd, plus fgsm when the ball is linf
        "attacks": None,
        "label_mode": "true",
        "resolution": config.GRID_RESOLUTION,
        "early_stop_pgd": False,
    },
}

INT_KEYS = {
    "seed", "data.n", "data.dim", "training.epochs", "training.defense_steps", "training.attack_steps",
    "training.batch_size", "training.checkpoint_every", "pgd.steps", "pgd.restarts", "evaluation.resolution",
}
BOOL_KEYS = {
    "data.standardize", "training.clip_input", "training.clip_kappa", "pgd.early_stop", "evaluation.early_stop_pgd",
}


def load_properties_config(path) -> dict:
    """key=value lines, '#' comments; values are JSON scalars when they parse"""
    config_data = {}
    p = Path(path)
    if not p.exists():
        raise DataIOError(f"Properties file not found: {path}")
    with p.open('r', encoding='utf-8') as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' in line:
                k, v = line.split('=', 1)
                config_data[k.strip()] = _scalar(v.strip())
    return config_data


def _scalar(text: str):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _nest(flat: dict) -> dict:
    nested: dict = {}
    for key, value in flat.items():
        parts = key.split(".")
        node = nested
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return nested


class RunConfig:
    """Fully resolved experiment settings"""

    def __init__(self, values: Optional[dict] = None):
        self.values = copy.deepcopy(DEFAULTS)
        self.merge(values or {})

    # -- loading --------------------------------------------------------

    @staticmethod
    def read(path) -> dict:
        """The values a config file sets, without defaults"""
        path = Path(path)
        if path.suffix == ".properties":
            return _nest(load_properties_config(path))
        try:
            values = json.loads(path.read_text())
        except OSError as e:
            raise DataIOError(f"cannot read config {path}: {e}")
        except ValueError as e:
            raise ConfigError(f"{path} is not valid JSON: {e}")
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return values

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls(cls.read(path))

    def merge(self, values: dict) -> "RunConfig":
        problems = []
        for key, value in values.items():
            if key not in DEFAULTS:
                problems.append(f"{key}: unknown key")
            elif isinstance(DEFAULTS[key], dict):
                if not isinstance(value, dict):
                    problems.append(f"{key}: must be a section")
                    continue
                for sub, sub_value in value.items():
                    if sub not in DEFAULTS[key]:
                        problems.append(f"{key}.{sub}: unknown key")
                    else:
                        self.values[key][sub] = sub_value
            else:
                self.values[key] = value
        if problems:
            raise ConfigError(problems)
        return self

    def override(self, dotted: dict) -> "RunConfig":
        """Apply `section.key` overrides, skipping None values"""
        return self.merge(_nest({k: v for k, v in dotted.items() if v is not None}))

    def get(self, dotted: str):
        node = self.values
        for part in dotted.split("."):
            node = node[part]
        return node

    def to_dict(self) -> dict:
        values = copy.deepcopy(self.values)
        values["evaluation"]["attacks"] = self.eval_attacks()
        return values

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))
        return path

    # -- typed views ----------------------------------------------------

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @property
    def task(self) -> str:
        return self.values["model"]["task"]

    def constraint(self) -> LpConstraint:
        c = self.values["constraint"]
        return LpConstraint(c["p"], c["delta"])

    def eval_attacks(self) -> List[str]:
        attacks = self.values["evaluation"]["attacks"]
        if attacks is not None:
            return list(attacks) if isinstance(attacks, list) else [attacks]
        names = ["none", "net", "pgd"]
        try:
            if np.isinf(self.constraint().p):
                names.append("fgsm")
        except ConfigError:
            pass
        return names

    def loss_kind(self) -> LossKind:
        t = self.values["training"]
        return LossKind.for_task(self.task, t["mix"], t["alpha"])

    def game_config(self, constraint: Optional[LpConstraint] = None) -> GameConfig:
        t = self.values["training"]
        return GameConfig(
            epochs=t["epochs"],
            defense_steps=t["defense_steps"],
            attack_steps=t["attack_steps"],
            defense_lr=t["defense_lr"],
            attack_lr=t["attack_lr"],
            loss=self.loss_kind(),
            constraint=constraint or self.constraint(),
            batch_size=t["batch_size"],
            seed=self.seed,
            checkpoint_every=t["checkpoint_every"],
            clip_input=t["clip_input"],
            clip_kappa=t["clip_kappa"],
        )

    def pgd_config(self, early_stop: Optional[bool] = None, constraint: Optional[LpConstraint] = None) -> PgdConfig:
        g = self.values["pgd"]
        constraint = constraint or self.constraint()
        ascent = g["ascent_norm"] if g["ascent_norm"] is not None else constraint.p
        return PgdConfig(
            constraint,
            gamma=g["gamma"],
            steps=g["steps"],
            restarts=g["restarts"],
            early_stop_on_misclassify=g["early_stop"] if early_stop is None else early_stop,
            ascent_norm=ascent,
            step_mode=g["step_mode"],
            seed=self.seed,
        )

    def flow_config(self, constraint: Optional[LpConstraint] = None) -> FlowConfig:
        f = self.values["flow"]
        return FlowConfig(
            constraint or self.constraint(),
            integrator=f["integrator"],
            dt=f["dt"],
            max_time=f["max_time"],
            stationarity_tol=f["stationarity_tol"],
            saddle_handling=f["saddle"],
            epsilon=f["epsilon"],
            sigma=f["sigma"],
            noise_horizon=f["noise_horizon"],
            seed=self.seed,
        )

    # -- validation -----------------------------------------------------

    def _type_problems(self) -> List[str]:
        problems = []
        for section, defaults in DEFAULTS.items():
            items = defaults.items() if isinstance(defaults, dict) else [(None, defaults)]
            for key, default in items:
                dotted = section if key is None else f"{section}.{key}"
                value = self.get(dotted)
                if dotted in INT_KEYS:
                    if value is None and default is None:
                        continue
                    if isinstance(value, bool) or not isinstance(value, int):
                        problems.append(f"{dotted}: must be an integer, got {value!r}")
                elif dotted in BOOL_KEYS:
                    if not isinstance(value, bool):
                        problems.append(f"{dotted}: must be true or false, got {value!r}")
                elif isinstance(default, float) and not (isinstance(value, (int, float)) and not isinstance(value, bool)):
                    problems.append(f"{dotted}: must be a number, got {value!r}")
        return problems

    def validate(self) -> "RunConfig":
        problems = self._type_problems()
        if problems:
            raise ConfigError(problems)
        if self.task not in ("classification", "regression"):
            problems.append(f"model.task: must be classification or regression, got {self.task!r}")
        try:
            constraint = self.constraint()
        except ConfigError as e:
            problems += e.violations
            # keep checking the other sections against a valid ball
            constraint = LpConstraint(np.inf, config.DELTA)
        builders = [
            self.loss_kind,
            lambda: self.game_config(constraint),
            lambda: self.pgd_config(constraint=constraint),
            lambda: self.flow_config(constraint),
        ]
        for build in builders:
            try:
                build()
            except ConfigError as e:
                problems += [v for v in e.violations if v not in problems]
            except AdvGameError as e:
                problems.append(str(e))
        ev = self.values["evaluation"]
        known = ("none", "net", "pgd", "pgd_early", "fgsm")
        attacks = self.eval_attacks()
        for name in attacks:
            if name not in known:
                problems.append(f"evaluation.attacks: unknown attack {name!r}")
        if "fgsm" in attacks:
            try:
                if not np.isinf(self.constraint().p):
                    problems.append("evaluation.attacks: fgsm is defined for p=inf only")
            except ConfigError:
                pass
        if ev["label_mode"] not in ("true", "imputed"):
            problems.append(f"evaluation.label_mode: must be true or imputed, got {ev['label_mode']!r}")
        if isinstance(ev["resolution"], int) and ev["resolution"] < 2:
            problems.append(f"evaluation.resolution: must be >= 2, got {ev['resolution']}")
        if problems:
            raise ConfigError(problems)
        return self
