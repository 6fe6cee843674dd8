"""
Evaluation matrix (defenses x attacks), grid field exports and the CSV/JSON
artifacts of a run
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from attacks import DefenseObjective, PgdConfig, fgsm, pgd_objective
from data import Dataset, grid
from errors import ConfigError, StateError, UnsupportedError
from flow_oracle import Trajectory
from losses import LossKind, loss
from models import AttackModel, DefenseNet, impute_labels
from nn_core import counters

FLOAT_FORMAT = "%.17g"
ATTACK_KINDS = ("none", "net", "pgd", "pgd_early", "fgsm")
METRICS = ("loss", "error")


@dataclass
class AttackSpec:
    """One evaluation column

    net: the trained attack network, evaluated without gradients through the
    defense; labels come from the data or, with label_mode "imputed", from
    `labeler`.
    """

    name: str
    kind: str
    model: Optional[AttackModel] = None
    pgd: Optional[PgdConfig] = None
    label_mode: str = "true"
    labeler: Optional[DefenseNet] = None

    def __post_init__(self):
        problems = []
        if self.kind not in ATTACK_KINDS:
            problems.append(f"attack kind must be one of {', '.join(ATTACK_KINDS)}, got {self.kind!r}")
        if self.kind == "net" and self.model is None:
            problems.append(f"attack {self.name}: net attack needs a model")
        if self.kind in ("pgd", "pgd_early", "fgsm") and self.pgd is None:
            problems.append(f"attack {self.name}: {self.kind} needs a constraint configuration")
        if self.label_mode not in ("true", "imputed"):
            problems.append(f"evaluation.label_mode must be true or imputed, got {self.label_mode!r}")
        if self.label_mode == "imputed" and self.labeler is None:
            problems.append(f"attack {self.name}: imputed labels need a labeler")
        if problems:
            raise ConfigError(problems)

    def generate(self, f: DefenseNet, kind: LossKind, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return x.copy()
        if self.kind == "net":
            labels = y if self.label_mode == "true" else impute_labels(self.labeler, x)
            before = counters["backward"]
            x_adv = self.model.adversarial_example(x, labels)
            if counters["backward"] != before:
                raise StateError("network attack ran a backward pass")
            return x_adv
        if self.kind == "fgsm":
            return fgsm(f, kind, x, y, self.pgd.constraint)
        objective = DefenseObjective(f, kind, y)
        misclassified = objective.misclassified if f.task == "classification" else None
        cfg = self.pgd
        if self.kind == "pgd_early" and not cfg.early_stop_on_misclassify:
            cfg = replace(cfg, early_stop_on_misclassify=True)
        return pgd_objective(objective, x, cfg, misclassified).x_adv


@dataclass
class Cell:
    loss_mean: float
    loss_sum: float
    error: float


@dataclass
class EvalMatrix:
    defenses: List[str]
    attacks: List[str]
    cells: Dict[Tuple[str, str], Cell] = field(default_factory=dict)
    n_test: int = 0

    def cell(self, defense: str, attack: str) -> Cell:
        return self.cells[(defense, attack)]

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for d in self.defenses:
            for a in self.attacks:
                c = self.cells[(d, a)]
                rows.append({"defense": d, "attack": a, "loss_mean": c.loss_mean, "loss_sum": c.loss_sum, "error": c.error})
        return pd.DataFrame(rows, columns=["defense", "attack", "loss_mean", "loss_sum", "error"])

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path


def error_rate(f: DefenseNet, x: np.ndarray, y: np.ndarray) -> float:
    """Misclassification rate, or mean squared error for regression"""
    if f.task == "classification":
        return float(np.mean(f.predict(x) != y))
    return float(np.mean((f.predict(x) - y) ** 2))


def evaluate_matrix(
    defenses: Dict[str, DefenseNet],
    attacks: List[AttackSpec],
    data: Dataset,
    kind: Optional[LossKind] = None,
) -> EvalMatrix:
    """Every (defense, attack) cell on the test split

    Gradient attacks are generated against the row's defense; the network
    attack only runs forward.
    """
    x, y = data.test()
    if x.shape[0] == 0:
        raise ConfigError("evaluation needs a nonempty test split")
    kind = kind or LossKind.for_task(data.task)
    for name, f in defenses.items():
        if f.in_dim != data.dim or f.task != data.task:
            raise ConfigError(f"defense {name} ({f.task}, D={f.in_dim}) does not fit the data ({data.task}, D={data.dim})")
    for spec in attacks:
        if spec.model is not None and spec.model.dim != data.dim:
            raise ConfigError(f"attack {spec.name} has input dim {spec.model.dim}, data has {data.dim}")

    matrix = EvalMatrix(list(defenses), [spec.name for spec in attacks], n_test=x.shape[0])
    for d_name, f in defenses.items():
        for spec in attacks:
            x_adv = spec.generate(f, kind, x, y)
            per_sample = loss(kind, f.forward(x_adv), y).per_sample
            matrix.cells[(d_name, spec.name)] = Cell(float(per_sample.mean()), float(per_sample.sum()), error_rate(f, x_adv, y))
            logging.debug(f"eval {d_name} x {spec.name}: loss {per_sample.mean():.6f}")
    return matrix


# -- curves ---------------------------------------------------------------

def curve_rows(epoch: int, matrix: EvalMatrix) -> List[dict]:
    rows = []
    for d in matrix.defenses:
        for a in matrix.attacks:
            c = matrix.cells[(d, a)]
            rows.append({"epoch": epoch, "defense": d, "attack": a, "metric": "loss", "value": c.loss_mean})
            rows.append({"epoch": epoch, "defense": d, "attack": a, "metric": "error", "value": c.error})
    return rows


def emit_curves(record, out) -> Path:
    """Long-format epoch, defense, attack, metric, value CSV

    Uses the record's per-epoch matrices when present, otherwise the
    trainer's own per-epoch test metrics.
    """
    rows = []
    if record.matrices:
        for epoch in sorted(record.matrices):
            rows += curve_rows(epoch, record.matrices[epoch])
    else:
        for stats in record.epochs:
            for attack, value in stats.test_error.items():
                rows.append({"epoch": stats.epoch, "defense": record.name, "attack": attack, "metric": "error", "value": value})
            rows.append({"epoch": stats.epoch, "defense": record.name, "attack": "own", "metric": "loss", "value": stats.test_loss})
    if not rows:
        raise ConfigError("cannot emit curves for an empty record")
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=["epoch", "defense", "attack", "metric", "value"]).to_csv(out, index=False, float_format=FLOAT_FORMAT)
    return out


# -- fields ---------------------------------------------------------------

@dataclass
class FieldExport:
    points: np.ndarray
    y_hat: np.ndarray
    loss: np.ndarray
    grad_dir: np.ndarray
    attack: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "x1": self.points[:, 0],
            "x2": self.points[:, 1],
            "y_hat": self.y_hat,
            "loss": self.loss,
            "g1": self.grad_dir[:, 0],
            "g2": self.grad_dir[:, 1],
            "a1": self.attack[:, 0],
            "a2": self.attack[:, 1],
        })

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
        return path


def unit_rows(v: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    return np.where(norm > 0, v / np.where(norm > 0, norm, 1.0), 0.0)


def export_field(f: DefenseNet, attack: AttackModel, labeler: DefenseNet, resolution: int, kind: Optional[LossKind] = None) -> FieldExport:
    """Loss, unit loss gradient and attack vector at every grid point, with
    labels imputed by `labeler`"""
    if f.in_dim != 2 or attack.dim != 2:
        raise UnsupportedError(f"field export needs 2D inputs, got D={f.in_dim}")
    kind = kind or LossKind.for_task(f.task)
    points = grid(resolution)
    if f.task == "classification":
        y_hat = impute_labels(labeler, points)
    else:
        y_hat = labeler.predict(points)
    values, grads = DefenseObjective(f, kind, y_hat).value_and_grad(points)
    lam = attack.forward(points, y_hat if attack.task == "classification" else None)
    return FieldExport(points, y_hat, values, unit_rows(grads), lam)


def angles_deg(vectors: np.ndarray) -> np.ndarray:
    """Direction angles in (-180, 180] of the nonzero rows"""
    v = np.asarray(vectors, dtype=np.float64)
    v = v[np.linalg.norm(v, axis=1) > 0]
    return np.degrees(np.arctan2(v[:, 1], v[:, 0]))


def angle_histogram(vectors: np.ndarray, bin_width: float = 5.0) -> Tuple[np.ndarray, np.ndarray]:
    edges = np.arange(-180.0, 180.0 + bin_width, bin_width)
    counts, edges = np.histogram(angles_deg(vectors), bins=edges)
    return counts, edges


def histogram_modes(vectors: np.ndarray, bin_width: float = 5.0, top: int = 4) -> np.ndarray:
    """Centers of the `top` fullest bins"""
    counts, edges = angle_histogram(vectors, bin_width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    order = np.argsort(-counts, kind="stable")[:top]
    return centers[order[counts[order] > 0]]


def diagonal_distance(angle_deg) -> np.ndarray:
    """Distance in degrees to the nearest of ±45°, ±135°"""
    a = np.mod(np.asarray(angle_deg, dtype=np.float64) - 45.0, 90.0)
    return np.minimum(a, 90.0 - a)


def mean_angular_deviation(a: np.ndarray, b: np.ndarray) -> float:
    """Mean angle in degrees between paired rows, over rows where both are nonzero"""
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    keep = (na > 0) & (nb > 0)
    if not keep.any():
        return float("nan")
    cos = np.sum(a[keep] * b[keep], axis=1) / (na[keep] * nb[keep])
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))).mean())


# -- flow and run artifacts -------------------------------------------------

def write_trajectory(trajectory: Trajectory, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    states = trajectory.states
    frame = pd.DataFrame({"t": trajectory.times})
    for i in range(states.shape[1]):
        frame[f"x{i + 1}"] = states[:, i]
    frame["F"] = trajectory.values
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    sidecar = {"converged": trajectory.converged, "terminal": trajectory.terminal.tolist()}
    if trajectory.kkt is not None:
        sidecar["kkt"] = trajectory.kkt.to_dict()
    path.with_name(path.stem + ".kkt.json").write_text(json.dumps(sidecar, indent=2))
    return path


def write_manifest(run_dir, manifest: dict) -> Path:
    path = Path(run_dir) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))
    return path
