"""Evaluation, the amplitude/phase motivation study, synthetic data and the linear-feature check."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import attacks, spectral
from .attacks import AttackConfig
from .errors import ConfigurationError, ContractError, NumericalError
from .models import SmallConvNet, predict_logits
from .trainer import PgdAtLoop, StandardLoop, TrainConfig, _batches, _finite, lr_at

log = logging.getLogger(__name__)


def evaluate_accuracy(net, data, attack: AttackConfig | None = None, bank: str = "A", rng=None, batch_size: int = 256) -> float:
    """Fraction of argmax-correct predictions, on attack outputs when ``attack`` is given."""
    x, y = np.asarray(data[0], dtype=np.float64), np.asarray(data[1], dtype=np.int64)
    if len(x) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    if attack is not None:
        rng = np.random.default_rng(0) if rng is None else rng
        x = np.concatenate(
            [attacks.attack(x[i : i + batch_size], y[i : i + batch_size], net, attack, rng, bank) for i in range(0, len(x), batch_size)]
        )
    pred = predict_logits(net, x, bank, batch_size).argmax(axis=1)
    return float(np.mean(pred == y))


@dataclass
class EvalSplits:
    d_ae: np.ndarray
    d_amp: np.ndarray
    d_pha: np.ndarray
    labels: np.ndarray


def swap_spectra(x, x_adv):
    """(adversarial amplitude + benign phase, benign amplitude + adversarial phase), clamped."""
    s, sa = spectral.dft_decompose(x), spectral.dft_decompose(x_adv)
    amp = spectral.idft_recombine(sa.amplitude, s.phase, clamp=True)
    pha = spectral.idft_recombine(s.amplitude, sa.phase, clamp=True)
    return amp, pha


def build_eval_splits(test_set, net, attack: AttackConfig, rng=None, bank: str = "A", batch_size: int = 256) -> EvalSplits:
    attack.validate()
    x, y = np.asarray(test_set[0], dtype=np.float64), np.asarray(test_set[1], dtype=np.int64)
    rng = np.random.default_rng(0) if rng is None else rng
    ae, amp, pha = [], [], []
    for i in range(0, len(x), batch_size):
        xb = x[i : i + batch_size]
        xa = attacks.attack(xb, y[i : i + batch_size], net, attack, rng, bank)
        a, p = swap_spectra(xb, xa)
        ae.append(xa)
        amp.append(a)
        pha.append(p)
    cat = lambda parts: np.concatenate(parts) if parts else x[:0]  # noqa: E731
    return EvalSplits(cat(ae), cat(amp), cat(pha), y.copy())


# -- synthetic data ---------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Images whose label lives in a per-class phase template; amplitude is random style."""

    classes: int = 4
    image_shape: tuple = (3, 16, 16)
    noise: float = 0.3
    contrast: float = 0.12
    template_seed: int = 1234

    def validate(self):
        if self.classes < 2:
            raise ConfigurationError("a synthetic dataset needs at least 2 classes")
        if len(self.image_shape) != 3 or min(self.image_shape[1:]) < 2:
            raise ConfigurationError(f"image shape must be [C,H,W] with H, W >= 2, got {self.image_shape}")
        if self.noise < 0 or self.contrast <= 0:
            raise ConfigurationError("noise must be >= 0 and contrast > 0")
        return self


def _self_paired(h, w):
    u = np.arange(h)[:, None]
    v = np.arange(w)[None, :]
    return ((u == 0) | (2 * u == h)) & ((v == 0) | (2 * v == w))


def _antisymmetric_phase(rng, shape):
    # phase of a real field's DFT is odd under (u,v) -> (-u,-v); zero out the
    # self-paired bins so that scaling keeps the field odd
    ph = np.angle(np.fft.fft2(rng.standard_normal(shape)))
    return np.where(_self_paired(*shape[-2:]), 0.0, ph)


def _radius(h, w):
    fu = np.fft.fftfreq(h)[:, None]
    fv = np.fft.fftfreq(w)[None, :]
    return np.sqrt(fu**2 + fv**2)


def class_templates(spec: SyntheticSpec) -> np.ndarray:
    """Per-class phase fields [classes, C, H, W]."""
    spec.validate()
    rng = np.random.default_rng(spec.template_seed)
    return np.stack([_antisymmetric_phase(rng, spec.image_shape) for _ in range(spec.classes)])


def _style_amplitude(rng, shape):
    c, h, w = shape
    alpha = rng.uniform(1.0, 2.0)
    # smooth multiplicative texture: symmetric because it is |DFT| of a blurred real field
    blur = np.exp(-((_radius(h, w) * 4.0) ** 2))
    texture = np.abs(np.fft.fft2(np.fft.ifft2(np.fft.fft2(rng.standard_normal(shape)) * blur).real))
    texture = texture / (texture.mean() + 1e-12)
    amp = (0.5 + texture) / (1.0 + _radius(h, w) * max(h, w)) ** alpha
    return amp


def make_synthetic_dataset(spec: SyntheticSpec, n_per_class: int, seed: int):
    """(x [N,C,H,W] in [0,1], y [N]) with classes interleaved."""
    spec.validate()
    if n_per_class < 1:
        raise ConfigurationError("n_per_class must be >= 1")
    templates = class_templates(spec)
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for _ in range(n_per_class):
        for label in range(spec.classes):
            amp = _style_amplitude(rng, spec.image_shape)
            phase = templates[label] + spec.noise * _antisymmetric_phase(rng, spec.image_shape)
            amp[:, 0, 0] = 0.0
            img = spectral.idft_recombine(amp, phase)
            img = img / (img.std(axis=(-2, -1), keepdims=True) + 1e-12) * spec.contrast
            xs.append(np.clip(0.5 + img, 0.0, 1.0))
            ys.append(label)
    return np.stack(xs), np.asarray(ys, dtype=np.int64)


def nearest_template_predict(x, spec: SyntheticSpec) -> np.ndarray:
    """Amplitude-weighted phase correlation against each class template."""
    templates = class_templates(spec)
    s = spectral.dft_decompose(np.asarray(x, dtype=np.float64))
    scores = np.stack(
        [np.sum(s.amplitude * np.cos(s.phase - t), axis=(1, 2, 3)) for t in templates], axis=1
    )
    return scores.argmax(axis=1)


# -- motivation experiment --------------------------------------------------


@dataclass
class MotivationConfig:
    train: TrainConfig = field(default_factory=lambda: TrainConfig(method="pgd-at", epochs=10, steps=5))
    eval_attack: AttackConfig = field(default_factory=lambda: AttackConfig(steps=10))
    seed: int = 0


class AmplitudeMixPgdAtLoop(PgdAtLoop):
    """PGD-AT on amplitude-mixed images; distractors are redrawn i.i.d. every batch."""

    def __init__(self, net, cfg, pool, rng=None):
        super().__init__(net, cfg, rng)
        self.pool = pool

    def step(self, x, y, lr):
        idx = self.rng.integers(0, len(self.pool), len(x))
        lam = self.rng.uniform(0.0, 1.0, len(x))
        s = spectral.dft_decompose(x)
        distract = spectral.dft_decompose(self.pool[idx]).amplitude
        mixed = spectral.mix_amplitudes(s.amplitude, distract, lam)
        x_mix = spectral.idft_recombine(mixed, s.phase, clamp=True)
        return super().step(x_mix, y, lr)


def _column_accuracies(net, test_set, attack, seed):
    rng = np.random.default_rng(seed)
    splits = build_eval_splits(test_set, net, attack, rng)
    y = splits.labels
    return {
        "natural": evaluate_accuracy(net, test_set),
        "d_ae": evaluate_accuracy(net, (splits.d_ae, y)),
        "d_amp": evaluate_accuracy(net, (splits.d_amp, y)),
        "d_pha": evaluate_accuracy(net, (splits.d_pha, y)),
    }


def motivation_experiment(train_set, test_set, cfg: MotivationConfig | None = None) -> dict:
    """Accuracy table {standard, robust, perturbed} x {natural, d_ae, d_amp, d_pha}."""
    cfg = MotivationConfig() if cfg is None else cfg
    x, y = np.asarray(train_set[0], dtype=np.float64), np.asarray(train_set[1], dtype=np.int64)
    classes = int(max(y.max(), np.max(test_set[1])) + 1)
    base = cfg.train
    table = {}
    for name in ("standard", "robust", "perturbed"):
        tc = TrainConfig(**{**base.__dict__, "method": "standard" if name == "standard" else "pgd-at", "seed": cfg.seed, "eval_every": 0})
        net = SmallConvNet(x.shape[1], classes, seed=cfg.seed)
        rng = np.random.default_rng(cfg.seed + 17)
        if name == "standard":
            loop = StandardLoop(net, tc, rng)
        elif name == "robust":
            loop = PgdAtLoop(net, tc, rng)
        else:
            loop = AmplitudeMixPgdAtLoop(net, tc, x, rng)
        _train_quiet(loop, (x, y))
        table[name] = _column_accuracies(net, test_set, cfg.eval_attack, cfg.seed + 99)
        log.info("motivation %s: %s", name, table[name])
    return table


def _train_quiet(loop, data):
    # skip per-epoch evaluation: the table is computed once at the end
    x_all, y_all = data
    for epoch in range(loop.cfg.epochs):
        lr = lr_at(loop.cfg.lr_schedule, epoch)
        for bi, idx in enumerate(_batches(len(x_all), loop.cfg.batch_size, loop.rng)):
            loss, _ = loop.step(x_all[idx], y_all[idx], lr)
            _finite(loss, epoch, bi)
    loop.net.sync_banks("A", "B")


# -- linear feature model ---------------------------------------------------


@dataclass
class Theorem1Task:
    """Linear softmax over [phase block | amplitude block] features.

    Both blocks carry the same class means; augmentation adds N(0, sigma_p^2)
    to the phase block and N(0, sigma_a^2) to the amplitude block.
    """

    dim_phase: int = 8
    dim_amp: int = 8
    sigma_p: float = 0.3
    sigma_a: float = 3.0
    classes: int = 4
    n_samples: int = 400
    seed: int = 0

    @property
    def variance_ratio(self) -> float:
        return (self.sigma_a / self.sigma_p) ** 2

    def validate(self):
        if self.sigma_p <= 0 or self.sigma_a <= 0:
            raise ConfigurationError("noise scales must be positive")
        if self.sigma_a < self.sigma_p:
            raise ConfigurationError("amplitude noise must be at least the phase noise")
        if self.classes < 2 or self.dim_phase < 1 or self.dim_amp < 1 or self.n_samples < 1:
            raise ConfigurationError("degenerate feature task")
        return self

    def sample(self):
        """Augmented features [n, dim_phase+dim_amp] and labels [n]."""
        self.validate()
        rng = np.random.default_rng(self.seed)
        means_p = rng.standard_normal((self.classes, self.dim_phase))
        means_a = rng.standard_normal((self.classes, self.dim_amp))
        y = np.arange(self.n_samples) % self.classes
        feats_p = means_p[y] + self.sigma_p * rng.standard_normal((self.n_samples, self.dim_phase))
        feats_a = means_a[y] + self.sigma_a * rng.standard_normal((self.n_samples, self.dim_amp))
        return np.concatenate([feats_p, feats_a], axis=1), y


def theorem1_experiment(task: Theorem1Task, steps: int = 2000, lr: float = 0.1) -> float:
    """Full-batch gradient descent on softmax CE from zero weights; returns ||W_amp|| / ||W_phase||."""
    feats, y = task.sample()
    n = len(y)
    onehot = np.eye(task.classes)[y]
    w = np.zeros((feats.shape[1], task.classes))
    b = np.zeros(task.classes)
    start = np.log(task.classes)
    for _ in range(steps):
        z = feats @ w + b
        z -= z.max(axis=1, keepdims=True)
        lse = np.log(np.exp(z).sum(axis=1))
        loss = float(np.mean(lse - z[np.arange(n), y]))
        # runaway growth counts as divergence well before float overflow
        if not np.isfinite(loss) or loss > 1e3 * start:
            raise NumericalError(f"linear model diverged at lr={lr} (loss {loss:.3g}); lower the learning rate")
        g = (np.exp(z - lse[:, None]) - onehot) / n
        w -= lr * feats.T @ g
        b -= lr * g.sum(axis=0)
    wp = np.linalg.norm(w[: task.dim_phase])
    wa = np.linalg.norm(w[task.dim_phase :])
    if wp == 0:
        raise NumericalError("phase-block weights are zero; the ratio is undefined")
    return float(wa / wp)
