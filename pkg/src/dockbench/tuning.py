"""Offline Bayesian optimization of the outer-loop PID gains.

Gaussian-process surrogate with a fixed squared-exponential kernel, expected
improvement maximized over random candidate sets, Latin-hypercube start.
The objective is a weighted sum of step-response metrics from a noise-free
single-vehicle simulation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import ndtr
from scipy.stats import qmc

from .control import (
    ControllerState,
    PidGains,
    StepMetrics,
    pid_step,
    step_response_metrics,
)
from .estimation import EstimatedState
from .world import RigidState, WorldParams, step_vehicle

log = logging.getLogger(__name__)

GAIN_NAMES = ("kp_pos", "ki_pos", "kd_pos", "kp_yaw")
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class GpFitError(ArithmeticError):
    pass


@dataclass(frozen=True)
class GainBounds:
    lower: tuple[float, ...] = (1.0, 0.0, 0.5, 0.5)
    upper: tuple[float, ...] = (12.0, 2.0, 8.0, 8.0)

    def validate(self) -> list[str]:
        errs = []
        if len(self.lower) != len(self.upper):
            errs.append("tune.bounds.lower and tune.bounds.upper differ in length")
        elif not all(0 <= lo < hi for lo, hi in zip(self.lower, self.upper)):
            errs.append("tune.bounds requires 0 <= lower < upper elementwise")
        return errs


@dataclass(frozen=True)
class BoConfig:
    budget: int = 40
    n_init: int = 8
    kernel_lengthscale: tuple[float, ...] = (0.25,)
    kernel_variance: float = 1.0
    noise_floor: float = 1e-6
    acquisition_restarts: int = 10
    n_candidates: int = 1000
    seed: int = 0
    log_transform: bool = True

    def validate(self) -> list[str]:
        errs = []
        if not self.n_init >= 2:
            errs.append(f"tune.bo.n_init ({self.n_init}) must be >= 2")
        if not self.budget >= self.n_init:
            errs.append(f"tune.bo.budget ({self.budget}) must be >= tune.bo.n_init ({self.n_init})")
        if not all(ls > 0 for ls in self.kernel_lengthscale) or not self.kernel_lengthscale:
            errs.append("tune.bo.kernel_lengthscale must be positive")
        if not self.kernel_variance > 0:
            errs.append("tune.bo.kernel_variance must be > 0")
        if not self.noise_floor >= 0:
            errs.append("tune.bo.noise_floor must be >= 0")
        if self.acquisition_restarts < 0 or self.n_candidates < 1:
            errs.append("tune.bo.acquisition_restarts must be >= 0 and n_candidates >= 1")
        return errs


@dataclass(frozen=True)
class StepScenario:
    """Deterministic step maneuver used as the tuning objective."""

    start: tuple[float, float, float] = (0.0, 0.0, 1.0)
    lateral_step: float = 1.0  # m along x
    altitude_step: float = 0.5  # m along z
    yaw_step: float = 0.5  # rad
    horizon: float = 10.0  # s
    weights: tuple[float, float, float] = (1.0, 5.0, 2.0)  # settling, overshoot, itae
    penalty: float = 1e3


@dataclass
class TuneResult:
    best_gains: PidGains
    best_objective: float
    history: list = field(default_factory=list)  # (PidGains, objective)

    def incumbents(self) -> list[float]:
        out, best = [], math.inf
        for _, j in self.history:
            best = min(best, j)
            out.append(best)
        return out


# objective


def weighted_objective(m: StepMetrics, weights=(1.0, 5.0, 2.0)) -> float:
    w1, w2, w3 = weights
    return w1 * m.settling_time + w2 * m.overshoot + w3 * m.itae


def simulate_step(gains: PidGains, world: WorldParams, dt: float, scenario: StepScenario, fence=None):
    """Fly the step maneuver on the noise-free plant; returns (x, z, yaw) traces or None on divergence."""
    start = np.asarray(scenario.start, dtype=float)
    target = start + np.array([scenario.lateral_step, 0.0, scenario.altitude_step])
    state = RigidState.at(start, 0.0)
    ctrl = ControllerState()
    n = int(round(scenario.horizon / dt)) + 1
    xs, zs, ys = np.empty(n), np.empty(n), np.empty(n)
    zero = np.zeros(3)
    lo = hi = None
    if fence is not None:
        lo, hi = np.asarray(fence[0]), np.asarray(fence[1])
    for k in range(n):
        p = state.position
        xs[k], zs[k], ys[k] = p[0] - start[0], p[2] - start[2], state.yaw
        if not state.is_finite() or (lo is not None and (np.any(p < lo) or np.any(p > hi))):
            return None
        if k == n - 1:
            break
        est = EstimatedState(np.concatenate([p, state.velocity, [state.yaw]]), np.eye(7), k * dt)
        cmd, ctrl = pid_step(est, target, scenario.yaw_step, gains, ctrl, dt)
        state = step_vehicle(state, cmd, world, zero, dt)
    return xs, zs, ys


def tuning_objective(gains: PidGains, scenario_cfg, scenario: StepScenario = StepScenario()) -> float:
    """Weighted settling/overshoot/ITAE cost of the step maneuver.

    ``scenario_cfg`` supplies ``world``, ``dt`` and ``safety`` (a trial config).
    Settling and overshoot are the worst over the x, z and yaw channels; ITAE
    is summed. Divergence beyond the geofence costs ``scenario.penalty``.
    """
    safety = getattr(scenario_cfg, "safety", None)
    fence = (safety.geofence_min, safety.geofence_max) if safety is not None else None
    world = scenario_cfg.world
    quiet = WorldParams(
        world.max_accel, world.max_speed, world.drag_coeff, world.max_yaw_rate, world.latch
    )
    traces = simulate_step(gains, quiet, scenario_cfg.dt, scenario, fence)
    if traces is None:
        log.info("tuning trajectory diverged for %s; penalty applied", gains)
        return float(scenario.penalty)
    xs, zs, ys = traces
    dt = scenario_cfg.dt
    ms = [
        step_response_metrics(xs, scenario.lateral_step, dt),
        step_response_metrics(zs, scenario.altitude_step, dt),
        step_response_metrics(ys, scenario.yaw_step, dt),
    ]
    agg = StepMetrics(
        overshoot=max(m.overshoot for m in ms),
        settling_time=max(m.settling_time for m in ms),
        itae=sum(m.itae for m in ms),
    )
    return float(weighted_objective(agg, scenario.weights))


# Gaussian process


def _lengthscales(cfg: BoConfig, d: int) -> np.ndarray:
    ls = np.asarray(cfg.kernel_lengthscale, dtype=float)
    return np.full(d, ls[0]) if ls.size == 1 else ls


def se_kernel(A: np.ndarray, B: np.ndarray, lengthscale: np.ndarray, variance: float) -> np.ndarray:
    a = A / lengthscale
    b = B / lengthscale
    d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
    return variance * np.exp(-0.5 * np.maximum(d2, 0.0))


@dataclass
class GpPosterior:
    X: np.ndarray
    y: np.ndarray
    mean0: float
    lengthscale: np.ndarray
    variance: float
    factor: tuple
    alpha: np.ndarray
    jitter: float

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = se_kernel(Xq, self.X, self.lengthscale, self.variance)
        mean = self.mean0 + Ks @ self.alpha
        v = cho_solve(self.factor, Ks.T)
        var = self.variance - np.sum(Ks * v.T, axis=1)
        return mean, np.maximum(var, 0.0)


def gp_fit(X, y, cfg: BoConfig, max_tries: int = 8) -> GpPosterior:
    """Exact GP regression with a constant prior mean equal to the data mean."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] < 1 or X.shape[0] != y.size:
        raise ValueError("need matching, non-empty observations")
    ls = _lengthscales(cfg, X.shape[1])
    K = se_kernel(X, X, ls, cfg.kernel_variance)
    mean0 = float(np.mean(y))
    jitter = 0.0
    for attempt in range(max_tries):
        try:
            factor = cho_factor(K + (cfg.noise_floor + jitter) * np.eye(len(y)), lower=True)
            break
        except np.linalg.LinAlgError:
            jitter = cfg.kernel_variance * 1e-12 * 10.0 ** (2 * attempt)
    else:
        raise GpFitError("Cholesky failed after maximum jitter")
    alpha = cho_solve(factor, y - mean0)
    return GpPosterior(X, y, mean0, ls, cfg.kernel_variance, factor, alpha, jitter)


def expected_improvement(mean, std, best):
    """EI for minimization; reduces to max(0, best - mean) where std is 0."""
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    imp = best - mean
    safe = np.where(std > 0, std, 1.0)
    with np.errstate(over="ignore", invalid="ignore"):  # subnormal std gives z = inf
        z = imp / safe
        ei = imp * ndtr(z) + safe * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    out = np.where(std > 0, ei, np.maximum(imp, 0.0))
    return float(out) if out.ndim == 0 else out


# optimizer


def _propose(post: GpPosterior, best: float, Xobs: np.ndarray, yobs: np.ndarray, cfg: BoConfig, rng) -> np.ndarray:
    d = Xobs.shape[1]
    cands = [rng.random((cfg.n_candidates, d))]
    if cfg.acquisition_restarts:
        order = np.argsort(yobs, kind="stable")[: cfg.acquisition_restarts]
        for i in order:
            local = Xobs[i] + 0.05 * rng.standard_normal((50, d))
            cands.append(np.clip(local, 0.0, 1.0))
    C = np.vstack(cands)
    mean, var = post.predict(C)
    ei = expected_improvement(mean, np.sqrt(var), best)
    return C[int(np.argmax(ei))]


def bo_minimize(
    f: Callable[[np.ndarray], float],
    lower: Sequence[float],
    upper: Sequence[float],
    cfg: BoConfig,
) -> tuple[np.ndarray, float, list]:
    """Minimize ``f`` over a box. Returns (best_x, best_y, [(x, y), ...])."""
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    d = lo.size
    rng = np.random.default_rng(cfg.seed)
    U = qmc.LatinHypercube(d=d, seed=rng).random(cfg.n_init)
    history: list = []
    Xn: list = []
    ys: list = []

    def evaluate(u):
        x = lo + u * (hi - lo)
        y = float(f(x))
        Xn.append(u)
        ys.append(y)
        history.append((x, y))

    for u in U:
        evaluate(u)
    for _ in range(cfg.budget - cfg.n_init):
        Xa = np.asarray(Xn)
        ya = np.asarray(ys)
        yt = np.log1p(np.maximum(ya, 0.0)) if cfg.log_transform else ya
        sd = float(np.std(yt))
        yt = (yt - np.mean(yt)) / (sd if sd > 0 else 1.0)
        try:
            post = gp_fit(Xa, yt, cfg)
            u = _propose(post, float(np.min(yt)), Xa, yt, cfg, rng)
        except (GpFitError, np.linalg.LinAlgError, ValueError) as exc:
            log.warning("GP step failed (%s); falling back to a random candidate", exc)
            u = rng.random(d)
        evaluate(u)
    i = int(np.argmin(ys))
    return history[i][0], ys[i], history


def random_search(f, lower, upper, budget: int, seed: int) -> tuple[np.ndarray, float]:
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    rng = np.random.default_rng(seed)
    best_x, best_y = None, math.inf
    for _ in range(budget):
        x = lo + rng.random(lo.size) * (hi - lo)
        y = float(f(x))
        if y < best_y:
            best_x, best_y = x, y
    return best_x, best_y


def bo_tune(
    scenario_cfg,
    bounds: GainBounds = GainBounds(),
    cfg: BoConfig = BoConfig(),
    base: Optional[PidGains] = None,
    scenario: StepScenario = StepScenario(),
) -> TuneResult:
    """Tune (kp_pos, ki_pos, kd_pos, kp_yaw); i_limit and z overrides come from ``base``."""
    base = base or PidGains()

    def f(v):
        return tuning_objective(base.with_vector(v), scenario_cfg, scenario)

    best_x, best_y, hist = bo_minimize(f, bounds.lower, bounds.upper, cfg)
    return TuneResult(
        best_gains=base.with_vector(best_x),
        best_objective=best_y,
        history=[(base.with_vector(x), y) for x, y in hist],
    )
