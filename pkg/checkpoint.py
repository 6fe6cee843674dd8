"""
Model checkpoints as JSON documents

Floats go through json's shortest round-trip repr, so parameters reload
bit-exact.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

import config
from errors import ConfigError, DataIOError
from models import AttackModel, DefenseNet, LpConstraint
from nn_core import LayerSpec, Mlp

FORMAT = "advgame-checkpoint"
VERSION = 1


def _net_to_dict(net: Mlp) -> dict:
    return {
        "layers": [layer.to_dict() for layer in net.layers],
        "params": [float(v) for v in net.params],
        "seed": net.seed,
        "kappa": net.kappa,
        "bound": net.bound,
    }


def _net_from_dict(data: dict) -> Mlp:
    layers = [LayerSpec.from_dict(layer) for layer in data["layers"]]
    return Mlp(
        layers,
        np.array(data["params"], dtype=np.float64),
        kappa=data.get("kappa"),
        bound=data.get("bound"),
        seed=data.get("seed"),
    )


@dataclass
class Checkpoint:
    kind: str
    model: Union[DefenseNet, AttackModel]
    manifest: dict


def save_checkpoint(path, model: Union[DefenseNet, AttackModel], manifest: Optional[dict] = None) -> Path:
    path = Path(path)
    manifest = dict(manifest or {})
    manifest.setdefault("app_version", config.APP_VERSION)
    if isinstance(model, DefenseNet):
        kind = "defense"
        manifest.setdefault("task", model.task)
        manifest.setdefault("n_classes", model.n_classes)
        networks = {"defense": _net_to_dict(model.net)}
    else:
        kind = "attack"
        manifest.setdefault("task", model.task)
        manifest.setdefault("n_classes", model.n_branches if model.task == "classification" else None)
        manifest["constraint"] = model.constraint.to_dict()
        networks = {name: _net_to_dict(net) for name, net in model.networks()}
    document = {"format": FORMAT, "version": VERSION, "kind": kind, "manifest": manifest, "networks": networks}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(document))
    logging.info(f"saved {kind} checkpoint {path}")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except (OSError, ValueError) as e:
        raise DataIOError(f"cannot read checkpoint {path}: {e}")
    if not isinstance(document, dict) or document.get("format") != FORMAT:
        raise DataIOError(f"{path} is not an advgame checkpoint")
    if document.get("version") != VERSION:
        raise DataIOError(f"{path}: unsupported checkpoint version {document.get('version')}")

    manifest = document.get("manifest", {})
    try:
        networks = document["networks"]
        if document["kind"] == "defense":
            model = DefenseNet(_net_from_dict(networks["defense"]), manifest["task"], manifest.get("n_classes"))
        elif document["kind"] == "attack":
            decoders = sorted(k for k in networks if k.startswith("decoder_"))
            scalers = sorted(k for k in networks if k.startswith("scaler_"))
            encoder = _net_from_dict(networks["encoder"]) if "encoder" in networks else None
            model = AttackModel(
                LpConstraint.from_dict(manifest["constraint"]),
                encoder,
                [_net_from_dict(networks[k]) for k in sorted(decoders, key=lambda k: int(k.split("_")[1]))],
                [_net_from_dict(networks[k]) for k in sorted(scalers, key=lambda k: int(k.split("_")[1]))],
                manifest["task"],
            )
        else:
            raise DataIOError(f"{path}: unknown checkpoint kind {document['kind']!r}")
    except KeyError as e:
        raise DataIOError(f"{path}: checkpoint lacks {e}")
    return Checkpoint(document["kind"], model, manifest)


def load_defense(path) -> DefenseNet:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "defense":
        raise ConfigError(f"{path} holds an {ckpt.kind} model, expected a defense")
    return ckpt.model


def load_attack(path) -> AttackModel:
    ckpt = load_checkpoint(path)
    if ckpt.kind != "attack":
        raise ConfigError(f"{path} holds a {ckpt.kind} model, expected an attack")
    return ckpt.model
