"""Scalar training objectives over logits.

Divergences use ``D_KL(a, b) = sum a * ln(a / b)`` with the first argument in
the numerator, probabilities floored at 1e-12 and renormalized, and a mean over
the batch.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

PROB_FLOOR = 1e-12


def _floor_renorm(p: Tensor) -> Tensor:
    p = T.maximum_const(p, PROB_FLOOR)
    return p / T.sum_(p, axis=-1, keepdims=True)


def probabilities(logits) -> Tensor:
    return _floor_renorm(T.softmax(T.as_tensor(logits)))


def cross_entropy(logits, y) -> Tensor:
    logits = T.as_tensor(logits)
    y = np.asarray(y, dtype=np.int64)
    n, c = logits.shape
    if y.shape != (n,):
        raise ContractError(f"labels shape {y.shape} does not match batch {n}")
    if np.any(y < 0) or np.any(y >= c):
        raise ContractError(f"labels must lie in [0, {c})")
    logp = T.log_softmax(logits)
    return -T.mean(logp[np.arange(n), y])


def kl_divergence(p, q) -> Tensor:
    p = _floor_renorm(T.as_tensor(p))
    q = _floor_renorm(T.as_tensor(q))
    terms = T.sum_(p * (T.log(p) - T.log(q)), axis=-1)
    return T.mean(terms)


def js_divergence(p, q) -> Tensor:
    p, q = T.as_tensor(p), T.as_tensor(q)
    m = (p + q) * 0.5
    return (kl_divergence(p, m) + kl_divergence(q, m)) * 0.5


def _kl_logits(logits_num, logits_den, detach_den: bool) -> Tensor:
    den = T.as_tensor(logits_den)
    if detach_den:
        den = den.detach()
    return kl_divergence(T.softmax(T.as_tensor(logits_num)), T.softmax(den))


def loss_ae(logits_x, logits_adv, y, beta: float, detach_benign: bool = True) -> Tensor:
    """CE on the adversarial logits plus beta * KL(adv || benign)."""
    if beta < 0:
        raise ContractError("beta must be non-negative")
    return cross_entropy(logits_adv, y) + _kl_logits(logits_adv, logits_x, detach_benign) * beta


def loss_at(logits_x, logits_adv, y, beta: float, detach_benign: bool = False) -> Tensor:
    """CE on the benign logits plus beta * KL(adv || benign)."""
    if beta < 0:
        raise ContractError("beta must be non-negative")
    return cross_entropy(logits_x, y) + _kl_logits(logits_adv, logits_x, detach_benign) * beta


def loss_trades(logits_x, logits_adv, y, beta: float) -> Tensor:
    return loss_at(logits_x, logits_adv, y, beta)


def loss_dat(logits_x, logits_x_adv, logits_xhat, logits_xhat_adv, y, beta: float = 15.0, omega: float = 2.0):
    """Mean of the two adversarial-training terms plus omega * JS(benign, recombined).

    Returns ``(total, components)`` with components ``at_benign``,
    ``at_recombined`` and ``js`` as floats.
    """
    if omega < 0:
        raise ContractError("omega must be non-negative")
    at_benign = loss_at(logits_x, logits_x_adv, y, beta)
    at_recombined = loss_at(logits_xhat, logits_xhat_adv, y, beta)
    js = js_divergence(T.softmax(T.as_tensor(logits_x)), T.softmax(T.as_tensor(logits_xhat)))
    total = (at_benign + at_recombined) * 0.5 + js * omega
    components = {"at_benign": at_benign.item(), "at_recombined": at_recombined.item(), "js": js.item()}
    return total, components
