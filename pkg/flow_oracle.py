"""
Best-attack oracle: projected gradient flow on lp balls

    dx/dt = P(x) [∇F(x) + Σ_η ψ_ε^η(x) ν_η]

integrated with explicit Euler or RK4 until the projected drive vanishes,
plus the KKT certificate for the terminal point and the closed-form attacks
for linear and logistic models.

For p < inf there is one constraint g(x) = ‖x - x_s‖_p^p - δ^p; for p = inf
there are D constraints g_i(x) = |(x - x_s)_i| - δ.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from attacks import DefenseObjective, Objective, project_offset
from errors import ConfigError, SingularityError, UnsupportedError
from models import LpConstraint
from nn_core import as_batch, numeric_check

INTEGRATORS = ("euler", "rk4")
SADDLE_MODES = ("none", "deflect", "noise")
ACTIVATION_TOL = 1e-8


# -- analytic test objectives ---------------------------------------------

class LinearObjective:
    def __init__(self, c: Sequence[float]):
        self.c = np.asarray(c, dtype=np.float64)

    def value_and_grad(self, x):
        x = as_batch(x, self.c.size)
        return x @ self.c, np.tile(self.c, (x.shape[0], 1))


class QuadraticObjective:
    """F(x) = Σ_i s_i (x_i - a_i)^2; all s_i = -1 is the concave bowl"""

    def __init__(self, center: Sequence[float], signs: Sequence[float]):
        self.center = np.asarray(center, dtype=np.float64)
        self.signs = np.asarray(signs, dtype=np.float64)

    def value_and_grad(self, x):
        x = as_batch(x, self.center.size)
        z = x - self.center
        return np.sum(self.signs * z * z, axis=1), 2.0 * self.signs * z

    def saddles(self) -> List["Saddle"]:
        if np.all(self.signs < 0) or np.all(self.signs > 0):
            return []
        top = np.zeros_like(self.center)
        top[int(np.argmax(self.signs))] = 1.0
        return [Saddle(self.center.copy(), top)]


def concave_quadratic(center) -> QuadraticObjective:
    center = np.asarray(center, dtype=np.float64)
    return QuadraticObjective(center, -np.ones_like(center))


def saddle_quadratic(center) -> QuadraticObjective:
    """x1² - x2² (shifted to `center`), a saddle at the center"""
    center = np.asarray(center, dtype=np.float64)
    signs = -np.ones_like(center)
    signs[0] = 1.0
    return QuadraticObjective(center, signs)


class TwoBumpObjective:
    """Mixture of two Gaussian bumps"""

    def __init__(self, centers, heights=(1.0, 0.5), width: float = 0.1):
        self.centers = np.asarray(centers, dtype=np.float64)
        self.heights = np.asarray(heights, dtype=np.float64)
        self.width = width

    def value_and_grad(self, x):
        x = as_batch(x, self.centers.shape[1])
        value = np.zeros(x.shape[0])
        grad = np.zeros_like(x)
        for center, height in zip(self.centers, self.heights):
            z = x - center
            bump = height * np.exp(-np.sum(z * z, axis=1) / (2 * self.width ** 2))
            value += bump
            grad += -(z / self.width ** 2) * bump[:, None]
        return value, grad


def analytic_suite(x_s) -> Dict[str, object]:
    """The 2D test objectives around a start point, each with an interesting
    maximum inside a δ=0.2 ball"""
    x_s = np.asarray(x_s, dtype=np.float64)
    return {
        "linear": LinearObjective([1.0, -2.0]),
        "quadratic": concave_quadratic(x_s + [0.06, -0.04]),
        "saddle": saddle_quadratic(x_s + [0.05, 0.03]),
        "two-bump": TwoBumpObjective([x_s + [0.15, 0.05], x_s + [-0.5, -0.5]]),
    }


# -- closed forms ---------------------------------------------------------

@dataclass
class ClosedFormAttack:
    perturbation: np.ndarray
    notes: List[str] = field(default_factory=list)


def closed_form_attack(model: str, beta, x, y, delta: float) -> ClosedFormAttack:
    """Best linf point-wise attack on a linear or logistic model

    linear:   δ · sign((β·x - y) / β)
    logistic: δ · sign(0.5 - y) · sign(β)
    """
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    x = as_batch(x, beta.size)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    notes = []
    if np.any(beta == 0):
        notes.append(f"zero coefficient at {np.flatnonzero(beta == 0).tolist()}: sign(0)=0 applied")
    if model == "linear":
        residual = x @ beta - y
        pert = delta * np.sign(residual)[:, None] * np.sign(beta)[None, :]
    elif model == "logistic":
        pert = delta * np.sign(0.5 - y)[:, None] * np.sign(beta)[None, :]
    else:
        raise ConfigError(f"closed form exists for linear or logistic models, got {model!r}")
    return ClosedFormAttack(pert, notes)


# -- constraints ----------------------------------------------------------

@dataclass
class ActiveSet:
    J: np.ndarray
    I: np.ndarray


def constraint_values(x, x_s, constraint: LpConstraint) -> np.ndarray:
    z = np.asarray(x, dtype=np.float64) - x_s
    if np.isinf(constraint.p):
        return np.abs(z) - constraint.delta
    return np.array([np.sum(np.abs(z) ** constraint.p) - constraint.delta ** constraint.p])


def active_set(x, x_s, constraint: LpConstraint) -> ActiveSet:
    g = constraint_values(x, x_s, constraint)
    scale = constraint.delta if np.isinf(constraint.p) else constraint.delta ** constraint.p
    # g > 0 only by round-off after projection; count it as active
    J = g >= -ACTIVATION_TOL * scale
    return ActiveSet(J, np.flatnonzero(J))


def constraint_normals(x, x_s, constraint: LpConstraint, indices: np.ndarray) -> np.ndarray:
    """Rows ∇g_i(x) for the given constraint indices"""
    z = np.asarray(x, dtype=np.float64) - x_s
    if np.isinf(constraint.p):
        rows = np.zeros((len(indices), z.size))
        rows[np.arange(len(indices)), indices] = np.sign(z[indices])
        return rows
    if len(indices) == 0:
        return np.zeros((0, z.size))
    p = constraint.p
    normal = p * np.abs(z) ** (p - 1) * np.sign(z)
    return normal[None, :]


def projection_matrix(x, x_s, constraint: LpConstraint, drive: Optional[np.ndarray] = None) -> np.ndarray:
    """P(x) = I - DCᵀ(DC DCᵀ)⁻¹DC over the active constraints

    With `drive` given only binding constraints count: active ones whose
    normal points along the drive.
    """
    x = np.asarray(x, dtype=np.float64)
    dim = x.size
    active = active_set(x, x_s, constraint)
    if active.I.size == 0:
        return np.eye(dim)
    normals = constraint_normals(x, x_s, constraint, active.I)
    if drive is not None:
        normals = normals[normals @ drive > 0]
        if normals.shape[0] == 0:
            return np.eye(dim)
    if np.isinf(constraint.p):
        mask = np.ones(dim)
        mask[np.flatnonzero(np.any(normals != 0, axis=0))] = 0.0
        return np.diag(mask)
    n = normals[0]
    nn = float(n @ n)
    if nn == 0.0:
        raise SingularityError("constraint normal vanishes on the boundary")
    return np.eye(dim) - np.outer(n, n) / nn


def _projected_drive(x, x_s, constraint: LpConstraint, drive: np.ndarray) -> np.ndarray:
    if np.isinf(constraint.p):
        z = x - x_s
        binding = (np.abs(z) - constraint.delta >= -ACTIVATION_TOL * constraint.delta) & (drive * np.sign(z) > 0)
        return np.where(binding, 0.0, drive)
    active = active_set(x, x_s, constraint)
    if active.I.size == 0:
        return drive
    n = constraint_normals(x, x_s, constraint, active.I)[0]
    along = float(n @ drive)
    if along <= 0:
        return drive
    nn = float(n @ n)
    if nn == 0.0:
        raise SingularityError("constraint normal vanishes on the boundary")
    return drive - (along / nn) * n


# -- saddles --------------------------------------------------------------

@dataclass
class Saddle:
    point: np.ndarray
    direction: Optional[np.ndarray] = None


def _value_grad(F: Objective, x: np.ndarray) -> Tuple[float, np.ndarray]:
    value, grad = F.value_and_grad(x.reshape(1, -1))
    return float(np.asarray(value).reshape(-1)[0]), np.asarray(grad, dtype=np.float64).reshape(-1)


def top_hessian_direction(F: Objective, point, h: float = 1e-5, tol: float = 1e-8, max_iter: int = 500) -> np.ndarray:
    """Unit eigenvector of the largest Hessian eigenvalue (power iteration on
    a finite-difference Hessian)"""
    point = np.asarray(point, dtype=np.float64)
    dim = point.size
    hess = np.zeros((dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = h
        hess[:, j] = (_value_grad(F, point + e)[1] - _value_grad(F, point - e)[1]) / (2 * h)
    hess = 0.5 * (hess + hess.T)
    shifted = hess + (np.linalg.norm(hess) + 1e-12) * np.eye(dim)
    v = 1.0 + 0.1 * np.arange(dim)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = shifted @ v
        w /= np.linalg.norm(w)
        if np.linalg.norm(w - v) < tol:
            return w
        v = w
    logging.warning("power iteration did not reach tolerance; using last iterate")
    return v


def bump(x, eta, eps: float) -> float:
    r2 = float(np.sum((x - eta) ** 2))
    if r2 >= eps * eps:
        return 0.0
    return float(np.exp(-1.0 / (eps * eps - r2)))


# -- integration ----------------------------------------------------------

@dataclass(frozen=True)
class FlowConfig:
    constraint: LpConstraint
    integrator: str = "rk4"
    dt: Optional[float] = None
    max_time: float = 50.0
    stationarity_tol: float = 1e-6
    saddle_handling: str = "none"
    epsilon: Optional[float] = None
    saddles: Tuple[Saddle, ...] = ()
    sigma: float = 1e-3
    noise_horizon: float = 5.0
    seed: int = 0
    record_every: int = 1

    def __post_init__(self):
        if self.dt is None:
            object.__setattr__(self, "dt", self.constraint.delta / 100)
        if self.epsilon is None:
            object.__setattr__(self, "epsilon", 0.95 * self.constraint.delta)
        object.__setattr__(self, "saddles", tuple(self.saddles))
        problems = []
        if self.integrator not in INTEGRATORS:
            problems.append(f"flow.integrator must be one of {', '.join(INTEGRATORS)}, got {self.integrator!r}")
        if self.saddle_handling not in SADDLE_MODES:
            problems.append(f"flow.saddle must be one of {', '.join(SADDLE_MODES)}, got {self.saddle_handling!r}")
        if not 0 < self.dt < self.constraint.delta:
            problems.append(f"flow.dt must lie in (0, delta), got {self.dt}")
        if self.max_time <= 0:
            problems.append(f"flow.max_time must be positive, got {self.max_time}")
        if self.stationarity_tol <= 0:
            problems.append(f"flow.stationarity_tol must be positive, got {self.stationarity_tol}")
        if self.saddle_handling == "deflect" and not 0 < self.epsilon < self.constraint.delta:
            problems.append(f"flow.epsilon must lie in (0, delta), got {self.epsilon}")
        if self.sigma < 0:
            problems.append(f"flow.sigma must be non-negative, got {self.sigma}")
        if self.record_every < 1:
            problems.append(f"flow.record_every must be >= 1, got {self.record_every}")
        if problems:
            raise ConfigError(problems)


@dataclass
class KKTReport:
    interior: bool
    primal_feasible: bool
    stationarity_residual: float
    multipliers: List[float]
    dual_feasible: bool
    active: List[int]
    tol: float

    @property
    def passed(self) -> bool:
        return self.primal_feasible and self.dual_feasible and self.stationarity_residual <= self.tol

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "interior": self.interior,
            "primal_feasible": self.primal_feasible,
            "stationarity_residual": self.stationarity_residual,
            "multipliers": self.multipliers,
            "dual_feasible": self.dual_feasible,
            "active_constraints": self.active,
            "complementary_slackness": True,
            "tol": self.tol,
        }


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    values: np.ndarray
    converged: bool
    kkt: Optional[KKTReport] = None

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]


class _Drive:
    """∇F plus the deflection terms of the configured saddles"""

    def __init__(self, F: Objective, cfg: FlowConfig):
        self.F = F
        self.cfg = cfg
        self.saddles: List[Saddle] = []
        if cfg.saddle_handling == "deflect":
            for saddle in cfg.saddles:
                direction = saddle.direction
                if direction is None:
                    direction = top_hessian_direction(F, saddle.point)
                direction = np.asarray(direction, dtype=np.float64)
                self.saddles.append(Saddle(np.asarray(saddle.point, dtype=np.float64), direction / np.linalg.norm(direction)))

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray, bool]:
        value, grad = _value_grad(self.F, x)
        numeric_check(grad, "flow gradient")
        in_bump = False
        for saddle in self.saddles:
            weight = bump(x, saddle.point, self.cfg.epsilon)
            if weight > 0.0 or float(np.sum((x - saddle.point) ** 2)) < self.cfg.epsilon ** 2:
                in_bump = True
            grad = grad + weight * saddle.direction
        return value, grad, in_bump


def integrate_flow(F: Objective, x_s, cfg: FlowConfig) -> Trajectory:
    """Integrate the projected (deflected or noisy) gradient flow from x_s"""
    x_s = np.asarray(x_s, dtype=np.float64).reshape(-1)
    c = cfg.constraint
    drive = _Drive(F, cfg)
    rng = np.random.default_rng(cfg.seed)
    noisy = cfg.saddle_handling == "noise" and cfg.sigma > 0

    def project(x):
        return x_s + project_offset(x - x_s, c)[0]

    def rhs(x):
        value, d, in_bump = drive(x)
        return value, _projected_drive(x, x_s, c, d), in_bump

    x = x_s.copy()
    value, k1, in_bump = rhs(x)
    times, states, values = [0.0], [x.copy()], [value]
    n_steps = int(np.ceil(cfg.max_time / cfg.dt))
    converged = False
    step = 0
    while True:
        t = step * cfg.dt
        noise_on = noisy and t < cfg.noise_horizon
        if not noise_on and not in_bump and np.linalg.norm(k1) <= cfg.stationarity_tol:
            converged = True
            break
        if step >= n_steps:
            break
        dt = cfg.dt
        if cfg.integrator == "euler":
            x_next = x + dt * k1
        else:
            k2 = rhs(project(x + 0.5 * dt * k1))[1]
            k3 = rhs(project(x + 0.5 * dt * k2))[1]
            k4 = rhs(project(x + dt * k3))[1]
            x_next = x + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
        if noise_on:
            xi = cfg.sigma * np.sqrt(dt) * rng.standard_normal(x.size)
            x_next = x_next + projection_matrix(x, x_s, c) @ xi
        x = project(x_next)
        step += 1
        value, k1, in_bump = rhs(x)
        if step % cfg.record_every == 0:
            times.append(step * cfg.dt)
            states.append(x.copy())
            values.append(value)

    if times[-1] != step * cfg.dt:
        times.append(step * cfg.dt)
        states.append(x.copy())
        values.append(value)
    if not converged:
        logging.warning(f"flow stopped at t={step * cfg.dt:g} without reaching stationarity (|P drive|={np.linalg.norm(k1):.3g})")
    trajectory = Trajectory(np.array(times), np.array(states), np.array(values), converged)
    trajectory.kkt = kkt_report(F, x, x_s, c, 10 * cfg.stationarity_tol)
    return trajectory


@dataclass
class FlowAttack:
    perturbation: np.ndarray
    converged: bool
    trajectory: Trajectory


def best_attack_flow(F: Objective, x_s, cfg: FlowConfig) -> FlowAttack:
    """λ = terminal state of the flow minus the start"""
    trajectory = integrate_flow(F, x_s, cfg)
    x_s = np.asarray(x_s, dtype=np.float64).reshape(-1)
    return FlowAttack(trajectory.terminal - x_s, trajectory.converged, trajectory)


def flow_attack_batch(f, kind, x, y, cfg: FlowConfig) -> np.ndarray:
    """Flow attack against a defense, one integration per row"""
    x = as_batch(x, f.in_dim)
    objective = DefenseObjective(f, kind, y)
    out = np.zeros_like(x)
    for i in range(x.shape[0]):
        out[i] = best_attack_flow(objective.rows(np.array([i])), x[i], cfg).perturbation
    return out


def kkt_report(F: Objective, x_terminal, x_s, constraint: LpConstraint, tol: float) -> KKTReport:
    """KKT check for max F s.t. g_i <= 0 at a terminal point

    Stationarity: ∇F = Σ μ_i ∇g_i over the active set (least squares), dual
    feasibility μ_i >= -tol, complementary slackness holds because inactive
    constraints get μ_i = 0.
    """
    x = np.asarray(x_terminal, dtype=np.float64).reshape(-1)
    x_s = np.asarray(x_s, dtype=np.float64).reshape(-1)
    _, grad = _value_grad(F, x)
    feasible = bool(np.all(constraint_values(x, x_s, constraint) <= 1e-9 * max(constraint.delta, 1.0)))
    active = active_set(x, x_s, constraint)
    if active.I.size == 0:
        return KKTReport(True, feasible, float(np.linalg.norm(grad)), [], True, [], tol)
    normals = constraint_normals(x, x_s, constraint, active.I)
    mu, *_ = np.linalg.lstsq(normals.T, grad, rcond=None)
    residual = float(np.linalg.norm(grad - normals.T @ mu))
    return KKTReport(
        interior=False,
        primal_feasible=feasible,
        stationarity_residual=residual,
        multipliers=[float(m) for m in mu],
        dual_feasible=bool(np.all(mu >= -tol)),
        active=[int(i) for i in active.I],
        tol=tol,
    )


# -- brute force ----------------------------------------------------------

@dataclass
class GridMax:
    point: np.ndarray
    value: float
    minimum: float

    @property
    def span(self) -> float:
        return self.value - self.minimum


def grid_max_over_ball(F: Objective, x_s, constraint: LpConstraint, step: float = 0.005) -> GridMax:
    """Exhaustive search over a regular grid of the δ-ball around x_s"""
    x_s = np.asarray(x_s, dtype=np.float64).reshape(-1)
    if x_s.size > 3:
        raise UnsupportedError(f"grid search is limited to D <= 3, got D={x_s.size}")
    ticks = np.arange(-constraint.delta, constraint.delta + step / 2, step)
    mesh = np.stack(np.meshgrid(*([ticks] * x_s.size), indexing="ij"), axis=-1).reshape(-1, x_s.size)
    mesh = mesh[constraint.norm(mesh) <= constraint.delta * (1 + 1e-12)]
    values, _ = F.value_and_grad(x_s + mesh)
    values = np.asarray(values)
    best = int(np.argmax(values))
    return GridMax(x_s + mesh[best], float(values[best]), float(values.min()))
