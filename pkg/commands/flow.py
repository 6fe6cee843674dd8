import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from attacks import DefenseObjective
from checkpoint import load_defense
from commands._common import load_dataset
from errors import ConfigError
from eval_report import write_trajectory
from flow_oracle import SADDLE_MODES, FlowConfig, analytic_suite, grid_max_over_ball, integrate_flow
from losses import LossKind
from models import LpConstraint
from run_config import RunConfig


def _point(text: str) -> np.ndarray:
    try:
        return np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"--start must be comma separated numbers, got {text!r}")


class FlowCommands:
    """Best-attack oracle by projected gradient flow"""

    def __init__(self, app):
        sub = app.add_command("flow", self.flow, "integrate the projected gradient flow from one point")
        sub.add_argument("--p", type=str, default="inf")
        sub.add_argument("--delta", type=float, default=0.2)
        sub.add_argument("--dt", type=float, default=None)
        sub.add_argument("--max-time", type=float, default=50.0)
        sub.add_argument("--integrator", choices=("euler", "rk4"), default="rk4")
        sub.add_argument("--saddle", choices=SADDLE_MODES, default="none")
        sub.add_argument("--epsilon", type=float, default=None, help="deflection bump radius")
        sub.add_argument("--sigma", type=float, default=1e-3, help="noise scale")
        sub.add_argument("--seed", type=int, default=0)
        sub.add_argument("--function", choices=tuple(analytic_suite(np.zeros(2))), default=None)
        sub.add_argument("--start", type=str, default="0.5,0.5", help="start point for --function")
        sub.add_argument("--model", type=str, default=None, help="defense checkpoint")
        sub.add_argument("--data", type=str, default=None)
        sub.add_argument("--index", type=int, default=0, help="test row to attack with --model")
        sub.add_argument("--grid-check", action="store_true", help="compare with a brute-force grid maximum")
        sub.add_argument("--out", type=str, required=True, help="trajectory CSV")

    def _objective(self, args):
        if args.function:
            x_s = _point(args.start)
            if x_s.size != 2:
                raise ConfigError(f"analytic objectives are 2D, got a {x_s.size}-dim start")
            return analytic_suite(x_s)[args.function], x_s
        if not (args.model and args.data):
            raise ConfigError("flow needs --function or both --model and --data")
        f = load_defense(args.model)
        data = load_dataset(args.data, RunConfig({"model": {"task": f.task}}))
        x, y = data.test()
        if not 0 <= args.index < x.shape[0]:
            raise ConfigError(f"--index must lie in [0, {x.shape[0] - 1}], got {args.index}")
        objective = DefenseObjective(f, LossKind.for_task(f.task), y[args.index:args.index + 1])
        return objective, x[args.index]

    def flow(self, args) -> int:
        F, x_s = self._objective(args)
        cfg = FlowConfig(
            LpConstraint(args.p, args.delta),
            integrator=args.integrator,
            dt=args.dt,
            max_time=args.max_time,
            saddle_handling=args.saddle,
            epsilon=args.epsilon,
            sigma=args.sigma,
            seed=args.seed,
        )
        if args.saddle == "deflect" and hasattr(F, "saddles"):
            cfg = replace(cfg, saddles=tuple(F.saddles()))
        trajectory = integrate_flow(F, x_s, cfg)
        out = write_trajectory(trajectory, args.out)
        kkt = trajectory.kkt.to_dict()
        logging.info(
            f"flow from {x_s.tolist()}: F {trajectory.values[0]:.6g} -> {trajectory.values[-1]:.6g}, "
            f"converged={trajectory.converged}, KKT passed={kkt['passed']}; wrote {out}"
        )
        if args.grid_check:
            if x_s.size > 3:
                raise ConfigError("--grid-check needs D <= 3")
            best = grid_max_over_ball(F, x_s, cfg.constraint)
            gap = best.value - float(trajectory.values[-1])
            report = {"grid_max": best.value, "grid_point": best.point.tolist(), "flow_value": float(trajectory.values[-1]),
                      "gap": gap, "relative_gap": gap / best.span if best.span > 0 else 0.0}
            Path(out).with_name(Path(out).stem + ".grid.json").write_text(json.dumps(report, indent=2))
            logging.info(f"grid maximum {best.value:.6g}, flow gap {gap:.3g}")
        return 0


def setup(app):
    """Setup function called by the entry point when loading this module"""
    FlowCommands(app)
