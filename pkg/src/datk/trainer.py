"""Training loops: standard, PGD-AT, TRADES, DAT, and generator-augmented baselines."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import attacks, losses, spectral
from . import tensor as T
from .attacks import AttackConfig
from .errors import ConfigurationError, ContractError, NumericalError
from .models import AagNet, AmplitudeScale, SmallConvNet, conditioning, recombine_tensor

log = logging.getLogger(__name__)

METHODS = ("standard", "pgd-at", "trades", "dat")
AE_MODES = ("dual", "single")
AAG_WITH = ("dat", "pgd-at", "trades")
# full-length CIFAR schedule; DESK_SCHEDULE is the 30-epoch default
FULL_SCHEDULE = [(0, 0.1), (100, 0.01), (110, 0.001)]
DESK_SCHEDULE = [(0, 0.1), (20, 0.01), (25, 0.001)]


@dataclass
class TrainConfig:
    method: str = "dat"
    epochs: int = 30
    batch_size: int = 64
    lr_schedule: list = field(default_factory=lambda: list(DESK_SCHEDULE))
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epsilon: float = 8 / 255
    alpha: float = 2 / 255
    steps: int = 5
    beta: float = 15.0
    omega: float = 2.0
    aag_lr: float = 0.1
    tau: int = 100
    lambda_max: float = 1.0
    ae_mode: str = "dual"
    aag_input_mode: str = "noise+logits"
    aag_with: str = "dat"
    eval_steps: int = 10
    eval_every: int = 1
    seed: int = 0

    def validate(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}")
        if self.ae_mode not in AE_MODES:
            raise ConfigurationError(f"unknown ae_mode {self.ae_mode!r}")
        if self.aag_with not in AAG_WITH:
            raise ConfigurationError(f"unknown aag_with {self.aag_with!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0 and batch_size >= 1")
        for name in ("aag_lr", "tau"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.beta < 0 or self.omega < 0:
            raise ConfigurationError("weight_decay, beta and omega must be non-negative")
        if not 0 <= self.lambda_max <= 1:
            raise ConfigurationError("lambda_max must lie in [0, 1]")
        _check_schedule(self.lr_schedule)
        self.attack("eaeg").validate()
        return self

    def attack(self, loss_kind: str, init: str | None = None, steps: int | None = None) -> AttackConfig:
        if init is None:
            init = "uniform-eps" if loss_kind == "ce-only" else "gaussian-1e-3"
        return AttackConfig(
            epsilon=self.epsilon,
            alpha=self.alpha,
            steps=self.steps if steps is None else steps,
            beta=self.beta,
            loss_kind=loss_kind,
            init=init,
        )

    def eval_attack(self) -> AttackConfig:
        return self.attack("ce-only", "uniform-eps", self.eval_steps)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    components: dict
    natural_acc: float | None
    pgd_acc: float | None
    wall_seconds: float


@dataclass
class TrainResult:
    net: SmallConvNet
    gen: AagNet | None
    scale: AmplitudeScale | None
    metrics: list


def _check_schedule(schedule):
    if not schedule:
        raise ConfigurationError("learning-rate schedule is empty")
    epochs = [e for e, _ in schedule]
    if epochs[0] != 0:
        raise ConfigurationError("learning-rate schedule must start at epoch 0")
    if any(b < a for a, b in zip(epochs, epochs[1:])):
        raise ConfigurationError("learning-rate schedule epochs must be non-decreasing")
    if any(lr <= 0 for _, lr in schedule):
        raise ConfigurationError("learning rates must be positive")


def lr_at(schedule, epoch: int) -> float:
    """Step schedule: rate of the last entry whose start epoch is <= ``epoch``."""
    _check_schedule(schedule)
    lr = schedule[0][1]
    for start, rate in schedule:
        if start <= epoch:
            lr = rate
    return float(lr)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i : i + batch_size]


def _finite(value, epoch, batch_index):
    if not np.isfinite(value):
        raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {batch_index}")


def evaluate(net, x, y, cfg: TrainConfig, seed: int, batch_size: int = 256):
    """(natural accuracy, PGD accuracy) on bank A."""
    from .experiments import evaluate_accuracy

    rng = np.random.default_rng(seed)
    nat = evaluate_accuracy(net, (x, y), None, batch_size=batch_size)
    rob = evaluate_accuracy(net, (x, y), cfg.eval_attack(), rng=rng, batch_size=batch_size)
    return nat, rob


def _should_eval(cfg, epoch):
    last = epoch == cfg.epochs - 1
    return last or (cfg.eval_every > 0 and (epoch + 1) % cfg.eval_every == 0)


class _Loop:
    """Shared epoch/batch scaffolding; subclasses implement ``step``."""

    def __init__(self, net: SmallConvNet, cfg: TrainConfig, rng=None):
        self.net = net
        self.cfg = cfg.validate()
        self.rng = np.random.default_rng(cfg.seed) if rng is None else rng

    def step(self, x, y, lr):  # pragma: no cover - abstract
        raise NotImplementedError

    def run(self, data, eval_data=None, on_epoch=None) -> list:
        """Train for ``cfg.epochs``; ``on_epoch(metrics)`` is called after each epoch."""
        x_all, y_all = np.asarray(data[0], dtype=np.float64), np.asarray(data[1], dtype=np.int64)
        if eval_data is None:
            eval_data = (x_all[:256], y_all[:256])
        metrics = []
        for epoch in range(self.cfg.epochs):
            start = time.perf_counter()
            lr = lr_at(self.cfg.lr_schedule, epoch)
            totals, comps, count = 0.0, {}, 0
            for bi, idx in enumerate(_batches(len(x_all), self.cfg.batch_size, self.rng)):
                loss, parts = self.step(x_all[idx], y_all[idx], lr)
                _finite(loss, epoch, bi)
                totals += loss
                for k, v in parts.items():
                    comps[k] = comps.get(k, 0.0) + v
                count += 1
            nat = rob = None
            if _should_eval(self.cfg, epoch):
                nat, rob = evaluate(self.net, eval_data[0], eval_data[1], self.cfg, seed=self.cfg.seed * 1000 + epoch)
            m = EpochMetrics(
                epoch=epoch,
                train_loss=totals / max(count, 1),
                components={k: v / max(count, 1) for k, v in comps.items()},
                natural_acc=nat,
                pgd_acc=rob,
                wall_seconds=time.perf_counter() - start,
            )
            log.info("epoch %d loss %.4f nat %s pgd %s (%.1fs)", epoch, m.train_loss, nat, rob, m.wall_seconds)
            metrics.append(m)
            if on_epoch is not None:
                on_epoch(m)
        return metrics


class _SingleBankLoop(_Loop):
    def descend(self, loss):
        names = self.net.trainable_names(banks=("A",))
        rec = T.backward(loss, self.net.params)
        for n in names:
            rec.grads.setdefault(n, np.zeros_like(self.net.params[n].data))
        T.sgd_momentum_step(
            self.net.params, rec, self._lr, self.cfg.momentum, self.cfg.weight_decay, "descent", names
        )


class StandardLoop(_SingleBankLoop):
    def step(self, x, y, lr):
        self._lr = lr
        loss = losses.cross_entropy(self.net.forward(x, "train", "A"), y)
        self.descend(loss)
        return loss.item(), {}


class PgdAtLoop(_SingleBankLoop):
    def step(self, x, y, lr):
        self._lr = lr
        x_adv = attacks.pgd(x, y, self.net, self.cfg.attack("ce-only"), self.rng)
        loss = losses.cross_entropy(self.net.forward(x_adv, "train", "A"), y)
        self.descend(loss)
        return loss.item(), {}


class TradesLoop(_SingleBankLoop):
    def step(self, x, y, lr):
        self._lr = lr
        x_adv = attacks.attack(x, y, self.net, self.cfg.attack("kl"), self.rng)
        lx = self.net.forward(x, "train", "A")
        la = self.net.forward(x_adv, "train", "A")
        loss = losses.loss_trades(lx, la, y, self.cfg.beta)
        self.descend(loss)
        return loss.item(), {}


@dataclass
class DatBatch:
    """Everything drawn for one DAT batch; reused for every evaluation of the objective."""

    x: np.ndarray
    y: np.ndarray
    x_adv: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    cond: np.ndarray
    x_hat: np.ndarray
    x_hat_adv: np.ndarray
    cond_adv: np.ndarray | None = None


class DatLoop(_Loop):
    """Joint min-max loop: classifier descends, generator ascends the same loss.

    With ``cfg.aag_with`` set to ``pgd-at`` or ``trades`` the generator is
    paired with that baseline's loss instead of the DAT objective.
    """

    def __init__(self, net, gen: AagNet, cfg: TrainConfig, scale: AmplitudeScale | None = None, rng=None):
        super().__init__(net, cfg, rng)
        if gen.tau != cfg.tau:
            raise ConfigurationError(f"generator tau {gen.tau} differs from config tau {cfg.tau}")
        self.gen = gen
        self.scale = AmplitudeScale() if scale is None else scale

    @property
    def baseline(self):
        return self.cfg.aag_with

    def _ae_config(self):
        if self.baseline == "pgd-at":
            return self.cfg.attack("ce-only")
        if self.baseline == "trades":
            return self.cfg.attack("kl")
        return self.cfg.attack("eaeg")

    def prepare(self, x, y) -> DatBatch:
        """Draw AEs, noise and mixing weights for one batch (no parameter updates)."""
        cfg, rng = self.cfg, self.rng
        self.scale.update_from_images(x)
        atk = self._ae_config()
        x_adv = attacks.attack(x, y, self.net, atk, rng, bank="A")
        n = len(x)
        z = rng.standard_normal((n, self.gen.tau))
        lam = rng.uniform(0.0, cfg.lambda_max, n)
        cond = conditioning(self.gen, self.net, x, y)
        x_hat = recombine_tensor(x, self.gen, self.scale, lam, z, cond).data
        cond_adv = None
        if cfg.ae_mode == "dual" or self.baseline != "dat":
            x_hat_adv = attacks.attack(x_hat, y, self.net, atk, rng, bank="B")
        else:
            cond_adv = conditioning(self.gen, self.net, x_adv, y)
            x_hat_adv = recombine_tensor(x_adv, self.gen, self.scale, lam, z, cond_adv).data
        return DatBatch(x, y, x_adv, z, lam, cond, x_hat, x_hat_adv, cond_adv)

    def objective(self, b: DatBatch):
        """Loss tensor (graph into both parameter sets) and its component values."""
        net, cfg = self.net, self.cfg
        x_hat = recombine_tensor(b.x, self.gen, self.scale, b.lam, b.z, b.cond)
        if b.cond_adv is not None:
            x_hat_adv = recombine_tensor(b.x_adv, self.gen, self.scale, b.lam, b.z, b.cond_adv)
        elif self.baseline == "pgd-at":
            # AE offset held fixed; the generator sees the AE through its base image
            x_hat_adv = x_hat + (b.x_hat_adv - x_hat.data)
        else:
            x_hat_adv = T.Tensor(b.x_hat_adv)
        if self.baseline == "pgd-at":
            at_b = losses.cross_entropy(net.forward(b.x_adv, "train", "A"), b.y)
            at_r = losses.cross_entropy(net.forward(x_hat_adv, "train", "B"), b.y)
            return (at_b + at_r) * 0.5, {"at_benign": at_b.item(), "at_recombined": at_r.item()}
        lx = net.forward(b.x, "train", "A")
        lxa = net.forward(b.x_adv, "train", "A")
        lh = net.forward(x_hat, "train", "B")
        lha = net.forward(x_hat_adv, "train", "B")
        if self.baseline == "trades":
            at_b = losses.loss_trades(lx, lxa, b.y, cfg.beta)
            at_r = losses.loss_trades(lh, lha, b.y, cfg.beta)
            return (at_b + at_r) * 0.5, {"at_benign": at_b.item(), "at_recombined": at_r.item()}
        return losses.loss_dat(lx, lxa, lh, lha, b.y, cfg.beta, cfg.omega)

    def update(self, loss, lr, theta=True, psi=True):
        rec_net, rec_gen = T.backward_many(loss, self.net.params, self.gen.params)
        if theta:
            T.sgd_momentum_step(self.net.params, rec_net, lr, self.cfg.momentum, self.cfg.weight_decay, "descent")
        if psi:
            T.sgd_momentum_step(self.gen.params, rec_gen, self.cfg.aag_lr, self.cfg.momentum, self.cfg.weight_decay, "ascent")

    def step(self, x, y, lr):
        b = self.prepare(x, y)
        loss, parts = self.objective(b)
        if not np.isfinite(loss.item()):
            return loss.item(), parts
        self.update(loss, lr)
        return loss.item(), parts


def _finish_single_bank(net: SmallConvNet):
    net.sync_banks("A", "B")


def train_standard(data, net, cfg: TrainConfig, eval_data=None, on_epoch=None):
    if cfg.method != "standard":
        raise ContractError("train_standard needs method='standard'")
    metrics = StandardLoop(net, cfg).run(data, eval_data, on_epoch)
    _finish_single_bank(net)
    return TrainResult(net, None, None, metrics)


def train_pgd_at(data, net, cfg: TrainConfig, eval_data=None, on_epoch=None):
    if cfg.method != "pgd-at":
        raise ContractError("train_pgd_at needs method='pgd-at'")
    metrics = PgdAtLoop(net, cfg).run(data, eval_data, on_epoch)
    _finish_single_bank(net)
    return TrainResult(net, None, None, metrics)


def train_trades(data, net, cfg: TrainConfig, eval_data=None, on_epoch=None):
    if cfg.method != "trades":
        raise ContractError("train_trades needs method='trades'")
    metrics = TradesLoop(net, cfg).run(data, eval_data, on_epoch)
    _finish_single_bank(net)
    return TrainResult(net, None, None, metrics)


def train_dat(data, net, gen, cfg: TrainConfig, eval_data=None, scale=None, on_epoch=None):
    if cfg.method != "dat" or cfg.aag_with != "dat":
        raise ContractError("train_dat needs method='dat' and aag_with='dat'")
    loop = DatLoop(net, gen, cfg, scale)
    metrics = loop.run(data, eval_data, on_epoch)
    return TrainResult(net, gen, loop.scale, metrics)


def train_with_aag_baseline(data, net, gen, cfg: TrainConfig, eval_data=None, scale=None, on_epoch=None):
    if cfg.aag_with not in ("pgd-at", "trades"):
        raise ContractError("train_with_aag_baseline needs aag_with in {'pgd-at', 'trades'}")
    loop = DatLoop(net, gen, cfg, scale)
    metrics = loop.run(data, eval_data, on_epoch)
    return TrainResult(net, gen, loop.scale, metrics)


def make_generator(cfg: TrainConfig, image_shape, num_classes, hidden=(256, 512, 1024)) -> AagNet:
    return AagNet(image_shape, num_classes, cfg.tau, cfg.aag_input_mode, hidden, seed=cfg.seed + 1)


def train(data, net, cfg: TrainConfig, gen=None, eval_data=None, on_epoch=None) -> TrainResult:
    """Dispatch on ``cfg.method`` (and ``cfg.aag_with`` for generator-augmented baselines)."""
    cfg.validate()
    if cfg.method == "dat" or cfg.aag_with != "dat":
        if gen is None:
            gen = make_generator(cfg, np.asarray(data[0]).shape[1:], net.num_classes)
        if cfg.aag_with == "dat":
            return train_dat(data, net, gen, cfg, eval_data, on_epoch=on_epoch)
        return train_with_aag_baseline(data, net, gen, cfg, eval_data, on_epoch=on_epoch)
    return {"standard": train_standard, "pgd-at": train_pgd_at, "trades": train_trades}[cfg.method](
        data, net, cfg, eval_data, on_epoch
    )
