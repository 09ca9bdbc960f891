"""Adam training loop for the denoiser."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .denoiser import DenoiserNet, backward, loss_graph, select_condition
from .diffusion import NoiseSchedule, q_sample, scale_roll
from .pianoroll import Segment

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, losses: list[float]):
        super().__init__(f"non-finite loss at step {step}")
        self.step = step
        self.losses = losses


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 5e-5
    batch_size: int = 1
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


class Adam:
    def __init__(self, size: int, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        """Update ``params`` in place."""
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _roll_of(item) -> np.ndarray:
    return item.roll if isinstance(item, Segment) else np.asarray(item)


def train(net: DenoiserNet, corpus, config: TrainConfig, sched: NoiseSchedule,
          callback=None) -> tuple[DenoiserNet, list[float]]:
    """Fit ``net`` in place on ``corpus``, a list of ``(roll, condition)`` pairs.

    ``condition`` is a ``ConditionFeatures`` or ``None`` for unconditional
    items. ``callback(step, net, loss)`` runs after every update.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    rng = np.random.default_rng(config.seed)
    x0_all = [scale_roll(_roll_of(r)) for r, _ in corpus]
    conds = [c for _, c in corpus]
    n_missing = sum(c is None for c in conds)
    if 0 < n_missing < len(conds):
        raise ValueError("corpus mixes conditioned and unconditioned items")
    opt = Adam(net.param_count, config.lr, config.beta1, config.beta2, config.adam_eps)
    t0 = net.arch.t0
    losses: list[float] = []
    for step in range(1, config.steps + 1):
        idx = rng.integers(len(corpus), size=config.batch_size)
        t = rng.integers(1, sched.n_steps + 1, size=config.batch_size)
        x0 = np.stack([x0_all[i] for i in idx])
        eps = rng.standard_normal(x0.shape)
        selected = None
        if conds[idx[0]] is not None:
            selected = [select_condition(conds[i].fv, conds[i].fl, ti, t0)
                        for i, ti in zip(idx, t)]
        graph = loss_graph(net, q_sample(x0, t, eps, sched), t, selected, eps)
        loss = float(graph.loss.data)
        losses.append(loss)
        if not np.isfinite(loss):
            raise TrainingDiverged(step, losses)
        grad = backward(net, graph)
        opt.step(net.params, grad)
        if callback is not None:
            callback(step, net, loss)
        if step % 500 == 0:
            log.info("step %d loss %.5f", step, np.mean(losses[-100:]))
    return net, losses


def smoothed(losses, window: int = 100) -> float:
    """Mean of the last ``window`` losses."""
    return float(np.mean(losses[-window:]))
