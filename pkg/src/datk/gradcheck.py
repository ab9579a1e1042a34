"""Finite-difference audit of every layer kind, every loss and the input/generator paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers, losses, spectral
from . import tensor as T
from .models import AagNet, AmplitudeScale, SmallConvNet, recombine_tensor
from .tensor import ParameterSet, Tensor

TOLERANCE = 1e-3
# probes taken per input array; small arrays are probed exhaustively
MAX_PROBES = 12


@dataclass
class CheckResult:
    name: str
    seed: int
    rel_error: float
    passed: bool


def _away_from_zero(rng, shape, lo=0.05, hi=1.0):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _rel_error(a, n, floor=1e-6):
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))


def compare(fn, arrays, rng, step=1e-3, wrt=None) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``fn`` maps a list of Tensors to a scalar Tensor; ``wrt`` picks which
    arrays are differentiated (default: all).
    """
    wrt = range(len(arrays)) if wrt is None else wrt
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    grads = T._sweep(fn(tensors))
    worst = 0.0
    for k in wrt:
        analytic = grads.get(id(tensors[k]), np.zeros_like(arrays[k])).reshape(-1)
        size = arrays[k].size
        idx = np.arange(size) if size <= MAX_PROBES else rng.choice(size, MAX_PROBES, replace=False)

        def scalar(point, k=k):
            args = [Tensor(a) for a in arrays]
            args[k] = Tensor(point)
            return fn(args).item()

        numeric = T.finite_difference_gradient(scalar, arrays[k], step, idx).reshape(-1)
        worst = max(worst, _rel_error(analytic[idx], numeric[idx]))
    return worst


# -- individual checks: each takes an rng and returns a relative error ------


def _fixed_weights(rng, shape):
    w = rng.standard_normal(shape)
    return lambda out: T.sum_(out * w)


def check_conv(rng, stride):
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, 3, 3)) * 0.3
    b = rng.standard_normal(4)
    ho = (6 - 1) // stride + 1
    head = _fixed_weights(rng, (2, 4, ho, ho))
    return compare(lambda t: head(T.conv3x3(t[0], t[1], t[2], stride)), [x, w, b], rng)


def check_linear(rng):
    x, w, b = rng.standard_normal((3, 5)), rng.standard_normal((4, 5)), rng.standard_normal(4)
    head = _fixed_weights(rng, (3, 4))
    return compare(lambda t: head(layers.apply_layer("linear", t[0], _params(fc_weight=t[1], fc_bias=t[2]), prefix="fc")), [x, w, b], rng)


def _params(**named):
    p = ParameterSet()
    for k, v in named.items():
        p.entries[k.replace("_", ".", 1)] = v
    return p


def check_relu(rng):
    x = _away_from_zero(rng, (3, 7))
    head = _fixed_weights(rng, (3, 7))
    return compare(lambda t: head(layers.apply_layer("relu", t[0])), [x], rng)


def check_global_avg_pool(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    head = _fixed_weights(rng, (2, 3))
    return compare(lambda t: head(layers.apply_layer("global-avg-pool", t[0])), [x], rng)


def _bn_fn(mode, shape, rng):
    head = _fixed_weights(rng, shape)
    c = shape[1]
    rm, rv = rng.standard_normal(c) * 0.1, rng.uniform(0.5, 2.0, c)
    bank = layers.BANKS[int(rng.integers(2))]

    def fn(t):
        p = ParameterSet()
        layers.add_batch_norm(p, "bn", c)
        p.entries[f"bn.{bank}.gamma"], p.entries[f"bn.{bank}.beta"] = t[1], t[2]
        p.buffers[f"bn.{bank}.running_mean"], p.buffers[f"bn.{bank}.running_var"] = rm, rv
        return head(layers.apply_layer("batch-norm", t[0], p, prefix="bn", mode=mode, bank=bank))

    return fn


def check_batch_norm(rng, mode, spatial=True):
    shape = (4, 3, 3, 3) if spatial else (6, 3)
    x = rng.standard_normal(shape)
    gamma, beta = rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)
    return compare(_bn_fn(mode, shape, rng), [x, gamma, beta], rng)


def _logits(rng, n=4, c=5):
    return rng.standard_normal((n, c)) * 2.0


def check_ce(rng):
    y = rng.integers(0, 5, 4)
    return compare(lambda t: losses.cross_entropy(t[0], y), [_logits(rng)], rng)


def check_kl(rng):
    return compare(lambda t: losses.kl_divergence(T.softmax(t[0]), T.softmax(t[1])), [_logits(rng), _logits(rng)], rng)


def check_js(rng):
    return compare(lambda t: losses.js_divergence(T.softmax(t[0]), T.softmax(t[1])), [_logits(rng), _logits(rng)], rng)


def check_loss_ae(rng):
    y = rng.integers(0, 5, 4)
    # the benign branch is detached inside L_AE, so only the adversarial logits are probed
    return compare(lambda t: losses.loss_ae(t[0], t[1], y, 15.0), [_logits(rng), _logits(rng)], rng, wrt=[1])


def check_loss_at(rng):
    y = rng.integers(0, 5, 4)
    return compare(lambda t: losses.loss_at(t[0], t[1], y, 15.0), [_logits(rng), _logits(rng)], rng)


def check_trades(rng):
    y = rng.integers(0, 5, 4)
    return compare(lambda t: losses.loss_trades(t[0], t[1], y, 6.0), [_logits(rng), _logits(rng)], rng)


def check_loss_dat(rng):
    y = rng.integers(0, 5, 4)
    arrays = [_logits(rng) for _ in range(4)]
    return compare(lambda t: losses.loss_dat(t[0], t[1], t[2], t[3], y, 15.0, 2.0)[0], arrays, rng)


def check_input_grad_loss_ae(rng):
    """d L_AE / d x' through the whole classifier (eval mode, bank A)."""
    net = SmallConvNet(3, 4, seed=int(rng.integers(1 << 30)))
    x = rng.uniform(0.2, 0.8, (2, 3, 8, 8))
    y = rng.integers(0, 4, 2)
    benign = net.forward(x, "eval", "A").data
    x_adv = np.clip(x + rng.uniform(-0.03, 0.03, x.shape), 0, 1)
    # tiny probe step: a 1e-3 step crosses ReLU kinks inside the network
    return compare(lambda t: losses.loss_ae(benign, net.forward(t[0], "eval", "A"), y, 15.0), [x_adv], rng, step=1e-5)


def check_generator_path(rng):
    """d CE(f(x_hat)) / d (generator output layer) through the differentiable recombination."""
    net = SmallConvNet(3, 3, seed=int(rng.integers(1 << 30)))
    gen = AagNet((3, 6, 6), 3, tau=8, input_mode="noise-only", hidden=(6, 6, 6), seed=int(rng.integers(1 << 30)))
    x = rng.uniform(0.2, 0.8, (2, 3, 6, 6))
    y = rng.integers(0, 3, 2)
    scale = AmplitudeScale()
    scale.update_from_images(x)
    z = rng.standard_normal((2, 8))
    lam = rng.uniform(0.2, 0.8, 2)
    w0 = gen.params["fc4.weight"].data.copy()

    def fn(t):
        gen.params.entries["fc4.weight"] = t[0]
        xh = recombine_tensor(x, gen, scale, lam, z, None, clamp=False)
        return losses.cross_entropy(net.forward(xh, "eval", "B"), y)

    try:
        return compare(fn, [w0], rng, step=1e-5)
    finally:
        gen.params.entries["fc4.weight"] = Tensor(w0, requires_grad=True)


def check_spectral_inverse(rng):
    h, w = 5, 6
    phase = spectral.dft_decompose(rng.standard_normal((2, h, w))).phase
    half = rng.uniform(0.5, 2.0, (2, h, spectral.half_width(w)))
    head = _fixed_weights(rng, (2, h, w))
    return compare(lambda t: head(spectral.idft_amplitude_tensor(spectral.expand_half_tensor(t[0], h, w), phase)), [half], rng)


CHECKS = {
    "conv3x3/stride1": lambda r: check_conv(r, 1),
    "conv3x3/stride2": lambda r: check_conv(r, 2),
    "linear": check_linear,
    "relu": check_relu,
    "global-avg-pool": check_global_avg_pool,
    "batch-norm/train": lambda r: check_batch_norm(r, "train"),
    "batch-norm/train-2d": lambda r: check_batch_norm(r, "train", spatial=False),
    "batch-norm/eval": lambda r: check_batch_norm(r, "eval"),
    "loss/ce": check_ce,
    "loss/kl": check_kl,
    "loss/js": check_js,
    "loss/ae": check_loss_ae,
    "loss/at": check_loss_at,
    "loss/trades": check_trades,
    "loss/dat": check_loss_dat,
    "input-grad/loss-ae": check_input_grad_loss_ae,
    "generator/recombine": check_generator_path,
    "spectral/inverse": check_spectral_inverse,
}


def run(seeds=range(20), names=None, tolerance: float = TOLERANCE) -> list:
    results = []
    for name in CHECKS if names is None else names:
        for seed in seeds:
            err = CHECKS[name](np.random.default_rng(seed))
            results.append(CheckResult(name, seed, err, err <= tolerance))
    return results
