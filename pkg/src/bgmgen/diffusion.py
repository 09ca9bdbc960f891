"""Gaussian diffusion over scaled piano rolls.

Schedules are stored with a leading unused slot so that ``beta[t]``,
``alpha[t]`` and ``alpha_bar[t]`` are indexed by the 1-based timestep
(``alpha_bar[0] == 1``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .denoiser import select_condition
from .pianoroll import repair_roll


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    kind: str
    n_steps: int
    beta_start: float
    beta_end: float
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def check_timestep(self, t) -> None:
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.n_steps):
            raise ValueError(f"timestep must lie in 1..{self.n_steps}, got {t}")


def make_schedule(kind: str = "linear", n_steps: int = 1000, beta_start: float = 1e-4,
                  beta_end: float = 0.02) -> NoiseSchedule:
    if n_steps < 1:
        raise ScheduleError(f"n_steps must be >= 1, got {n_steps}")
    if kind == "linear":
        if not 0 < beta_start <= beta_end < 1:
            raise ScheduleError(
                f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
        if n_steps == 1:
            betas = np.array([beta_start], dtype=np.float64)
        else:
            frac = np.arange(n_steps, dtype=np.float64) / (n_steps - 1)
            betas = beta_start + frac * (beta_end - beta_start)
    elif kind == "constant":
        if not 0 < beta_start < 1:
            raise ScheduleError(f"need 0 < beta < 1, got {beta_start}")
        betas = np.full(n_steps, float(beta_start))
    else:
        raise ScheduleError(f"unknown schedule kind {kind!r}")
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    alpha_bar = np.empty_like(alpha)
    alpha_bar[0] = 1.0
    for t in range(1, n_steps + 1):
        alpha_bar[t] = alpha_bar[t - 1] * alpha[t]
    return NoiseSchedule(kind, n_steps, float(beta_start), float(beta_end),
                         beta, alpha, alpha_bar)


def scale_roll(roll) -> np.ndarray:
    """Map {0, 1} entries to {-1, +1}."""
    return np.asarray(roll, dtype=np.float64) * 2.0 - 1.0


def unscale(x) -> np.ndarray:
    """Threshold at 0 and repair into a valid roll."""
    roll, _ = repair_roll(np.asarray(x) > 0)
    return roll


def _per_sample(values, t, ndim):
    # broadcast a per-timestep coefficient over a batch with ndim dims
    v = values[np.asarray(t)]
    if np.ndim(v) == 0:
        return float(v)
    return v.reshape(v.shape + (1,) * (ndim - 1))


def q_sample(x0, t, eps, sched: NoiseSchedule) -> np.ndarray:
    """Closed-form forward process: ``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``.

    ``t`` may be a scalar or hold one timestep per leading-axis entry.
    """
    sched.check_timestep(t)
    x0 = np.asarray(x0, dtype=np.float64)
    ab = _per_sample(sched.alpha_bar, t, x0.ndim)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * np.asarray(eps, dtype=np.float64)


def q_step(x_prev, t: int, noise, sched: NoiseSchedule) -> np.ndarray:
    """One forward transition ``x_{t-1} -> x_t``."""
    sched.check_timestep(t)
    return np.sqrt(sched.alpha[t]) * x_prev + np.sqrt(sched.beta[t]) * noise


def training_loss(x0, t, eps, cond, net, sched: NoiseSchedule) -> float:
    """Mean-square error between ``eps`` and the net's prediction at ``x_t``."""
    x_t = q_sample(x0, t, eps, sched)
    pred = np.asarray(net(x_t, t, cond))
    eps = np.asarray(eps, dtype=np.float64)
    if pred.shape != eps.shape:
        raise ValueError(f"net output shape {pred.shape} != noise shape {eps.shape}")
    return float(np.mean((eps - pred) ** 2))


def p_sample_step(x_t, t: int, cond, net, noise, sched: NoiseSchedule) -> np.ndarray:
    """Ancestral step with fixed variance ``beta_t``; no noise at ``t == 1``."""
    sched.check_timestep(t)
    x_t = np.asarray(x_t, dtype=np.float64)
    eps_hat = np.asarray(net(x_t, t, cond))
    mean = (x_t - sched.beta[t] / np.sqrt(1.0 - sched.alpha_bar[t]) * eps_hat) \
        / np.sqrt(sched.alpha[t])
    if t == 1:
        return mean
    return mean + np.sqrt(sched.beta[t]) * noise


def generate(net, condition, sched: NoiseSchedule, seed: int, t0: int | None = None,
             shape=None, return_continuous: bool = False):
    """Sample a roll from ``x_N ~ N(0, I)``.

    ``condition`` is a :class:`~bgmgen.conditioning.ConditionFeatures` (the
    feature selector picks visual or language rows per step) or ``None`` for
    unconditional sampling. ``t0`` and ``shape`` default to the net's
    architecture.
    """
    arch = getattr(net, "arch", None)
    if t0 is None:
        t0 = arch.t0
    if shape is None:
        shape = arch.roll_shape
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    for t in range(sched.n_steps, 0, -1):
        cond = None
        if condition is not None:
            cond = select_condition(condition.fv, condition.fl, t, t0)
        noise = rng.standard_normal(shape) if t > 1 else None
        x = p_sample_step(x, t, cond, net, noise, sched)
    roll = unscale(x)
    return (roll, x) if return_continuous else roll
