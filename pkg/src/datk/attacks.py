"""l-infinity attacks: FGSM, PGD-K and the KL-augmented efficient generator.

All attacks run the classifier in eval mode (no running-statistic updates)
through a caller-chosen BN bank, and always return images inside both the
epsilon ball and [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses
from . import tensor as T
from .errors import ConfigurationError

LOSS_KINDS = ("ce-only", "eaeg", "kl")
INITS = ("gaussian-1e-3", "uniform-eps", "none")


@dataclass
class AttackConfig:
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 10
    beta: float = 15.0
    loss_kind: str = "ce-only"
    init: str = "uniform-eps"

    def validate(self):
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be non-negative")
        if self.steps < 0:
            raise ConfigurationError("steps must be non-negative")
        if self.steps > 0 and self.alpha <= 0:
            raise ConfigurationError("alpha must be positive when steps > 0")
        if self.beta < 0:
            raise ConfigurationError("beta must be non-negative")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigurationError(f"unknown attack loss {self.loss_kind!r}")
        if self.init not in INITS:
            raise ConfigurationError(f"unknown attack init {self.init!r}")
        return self


def project_linf(candidate, center, epsilon: float) -> np.ndarray:
    out = np.clip(candidate, center - epsilon, center + epsilon)
    return np.clip(out, 0.0, 1.0)


def _input_grad(net, x_adv, loss_fn, bank):
    xt = T.Tensor(x_adv, requires_grad=True)
    logits = net.forward(xt, mode="eval", bank=bank)
    return T.backward(loss_fn(logits), inputs=xt).input_grad


def fgsm(x, y, net, epsilon: float, bank: str = "A") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if epsilon < 0:
        raise ConfigurationError("epsilon must be non-negative")
    g = _input_grad(net, x, lambda z: losses.cross_entropy(z, y), bank)
    return project_linf(x + epsilon * np.sign(g), x, epsilon)


def _initial_point(x, cfg: AttackConfig, rng):
    if cfg.init == "gaussian-1e-3":
        start = x + 0.001 * rng.standard_normal(x.shape)
    elif cfg.init == "uniform-eps":
        start = x + rng.uniform(-cfg.epsilon, cfg.epsilon, x.shape)
    else:
        start = x
    return project_linf(start, x, cfg.epsilon)


def attack(x, y, net, cfg: AttackConfig, rng, bank: str = "A") -> np.ndarray:
    """Projected sign-gradient ascent on the loss selected by ``cfg.loss_kind``."""
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    if cfg.loss_kind == "ce-only":
        loss_fn = lambda z: losses.cross_entropy(z, y)  # noqa: E731
    else:
        benign = net.forward(x, mode="eval", bank=bank).data.copy()
        if cfg.loss_kind == "eaeg":
            loss_fn = lambda z: losses.loss_ae(benign, z, y, cfg.beta)  # noqa: E731
        else:
            loss_fn = lambda z: losses.kl_divergence(T.softmax(z), T.softmax(T.Tensor(benign)))  # noqa: E731
    x_adv = _initial_point(x, cfg, rng)
    for _ in range(cfg.steps):
        g = _input_grad(net, x_adv, loss_fn, bank)
        x_adv = project_linf(x_adv + cfg.alpha * np.sign(g), x, cfg.epsilon)
    return x_adv


def pgd(x, y, net, cfg: AttackConfig, rng, bank: str = "A") -> np.ndarray:
    if cfg.loss_kind != "ce-only":
        raise ConfigurationError("pgd expects loss_kind='ce-only'")
    return attack(x, y, net, cfg, rng, bank)


def eaeg(x, y, net, cfg: AttackConfig, rng, bank: str = "A") -> np.ndarray:
    """Efficient generation: gaussian start, ascent on CE + beta * KL(adv || benign)."""
    if cfg.loss_kind != "eaeg":
        raise ConfigurationError("eaeg expects loss_kind='eaeg'")
    return attack(x, y, net, cfg, rng, bank)
