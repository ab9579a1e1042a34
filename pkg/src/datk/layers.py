"""Layer zoo on top of the tensor engine, including dual-bank batch norm.

Every batch-norm layer owns two independent banks ``A`` and ``B``; each bank
has its own affine parameters (``gamma``, ``beta``) and running statistics.
The bank is picked per forward call.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .tensor import ParameterSet, Tensor

BANKS = ("A", "B")
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LAYER_KINDS = ("conv3x3", "linear", "relu", "global-avg-pool", "batch-norm")


def add_conv3x3(params: ParameterSet, prefix: str, cin: int, cout: int, rng):
    std = np.sqrt(2.0 / (cin * 9))
    params.add(f"{prefix}.weight", rng.standard_normal((cout, cin, 3, 3)) * std)
    params.add(f"{prefix}.bias", np.zeros(cout))


def add_linear(params: ParameterSet, prefix: str, fan_in: int, fan_out: int, rng):
    bound = 1.0 / np.sqrt(fan_in)
    params.add(f"{prefix}.weight", rng.uniform(-bound, bound, (fan_out, fan_in)))
    params.add(f"{prefix}.bias", rng.uniform(-bound, bound, fan_out))


def add_batch_norm(params: ParameterSet, prefix: str, channels: int):
    for bank in BANKS:
        params.add(f"{prefix}.{bank}.gamma", np.ones(channels))
        params.add(f"{prefix}.{bank}.beta", np.zeros(channels))
        params.add(f"{prefix}.{bank}.running_mean", np.zeros(channels), trainable=False)
        params.add(f"{prefix}.{bank}.running_var", np.ones(channels), trainable=False)


def _batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, axes):
    """Normalize with batch statistics; returns (output, batch mean, unbiased var)."""
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x.data - mu) * inv
    bshape = mu.shape
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    m = x.data.size // mu.size

    def grad_fn(g):
        gg = gamma.data.reshape(bshape)
        gx = None
        if x.requires_grad:
            gmean = g.mean(axis=axes, keepdims=True)
            gxm = (g * xhat).mean(axis=axes, keepdims=True)
            gx = gg * inv * (g - gmean - xhat * gxm)
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    unbiased = var.reshape(-1) * (m / max(m - 1, 1))
    return T._make(out, (x, gamma, beta), grad_fn), mu.reshape(-1), unbiased


def _batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor, rm, rv, axes):
    bshape = [1] * x.ndim
    bshape[1] = -1
    inv = 1.0 / np.sqrt(rv + BN_EPS)
    scale = T.Tensor((inv).reshape(bshape))
    shift = T.Tensor((-rm * inv).reshape(bshape))
    xhat = x * scale + shift
    return xhat * T.reshape(gamma, bshape) + T.reshape(beta, bshape)


def batch_norm(x: Tensor, params: ParameterSet, prefix: str, mode: str, bank: str) -> Tensor:
    if bank not in BANKS:
        raise ConfigurationError(f"unknown batch-norm bank {bank!r}")
    if x.ndim not in (2, 4):
        raise ConfigurationError(f"batch-norm expects [N,C] or [N,C,H,W], got {x.shape}")
    gamma = params[f"{prefix}.{bank}.gamma"]
    beta = params[f"{prefix}.{bank}.beta"]
    if x.shape[1] != gamma.shape[0]:
        raise ConfigurationError(f"batch-norm channels {gamma.shape[0]} do not match input {x.shape}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    rm_key, rv_key = f"{prefix}.{bank}.running_mean", f"{prefix}.{bank}.running_var"
    if mode == "train":
        out, mu, var = _batch_norm_train(x, gamma, beta, axes)
        params.buffers[rm_key] = (1.0 - BN_MOMENTUM) * params.buffers[rm_key] + BN_MOMENTUM * mu
        params.buffers[rv_key] = (1.0 - BN_MOMENTUM) * params.buffers[rv_key] + BN_MOMENTUM * var
        return out
    if mode == "eval":
        return _batch_norm_eval(x, gamma, beta, params.buffers[rm_key], params.buffers[rv_key], axes)
    raise ConfigurationError(f"unknown mode {mode!r}")


def apply_layer(
    kind: str,
    x: Tensor,
    params: ParameterSet | None = None,
    *,
    prefix: str = "",
    mode: str = "eval",
    bank: str = "A",
    stride: int = 1,
) -> Tensor:
    """Run one layer. Parameters are looked up under ``prefix`` in ``params``."""
    if kind == "relu":
        return T.relu(x)
    if kind == "global-avg-pool":
        if x.ndim != 4:
            raise ConfigurationError(f"global-avg-pool expects [N,C,H,W], got {x.shape}")
        return T.global_avg_pool(x)
    if kind == "conv3x3":
        if x.ndim != 4:
            raise ConfigurationError(f"conv3x3 expects [N,C,H,W], got {x.shape}")
        return T.conv3x3(x, params[f"{prefix}.weight"], params[f"{prefix}.bias"], stride=stride)
    if kind == "linear":
        w = params[f"{prefix}.weight"]
        if x.ndim != 2 or x.shape[1] != w.shape[1]:
            raise ConfigurationError(f"linear {w.shape} cannot take input {x.shape}")
        return T.linear(x, w, params[f"{prefix}.bias"])
    if kind == "batch-norm":
        return batch_norm(x, params, prefix, mode, bank)
    raise ConfigurationError(f"unknown layer kind {kind!r}")
