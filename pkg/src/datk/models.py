"""The split-BN classifier, the adversarial amplitude generator, and recombination."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layers
from . import spectral
from . import tensor as T
from .errors import ConfigurationError, ContractError
from .tensor import ParameterSet, Tensor

INPUT_MODES = ("noise-only", "noise+one-hot", "noise+logits")


class SmallConvNet:
    """conv(16,s1)-BN-ReLU, conv(32,s2)-BN-ReLU, conv(64,s2)-BN-ReLU, GAP, linear.

    Every BN layer has banks ``A`` and ``B`` initialised identically.
    """

    WIDTHS = (16, 32, 64)
    STRIDES = (1, 2, 2)

    def __init__(self, in_channels: int = 3, num_classes: int = 10, seed: int = 0):
        self.in_channels = in_channels
        self.num_classes = num_classes
        self.params = ParameterSet()
        rng = np.random.default_rng(seed)
        cin = in_channels
        for i, cout in enumerate(self.WIDTHS, start=1):
            layers.add_conv3x3(self.params, f"conv{i}", cin, cout, rng)
            layers.add_batch_norm(self.params, f"bn{i}", cout)
            cin = cout
        layers.add_linear(self.params, "fc", cin, num_classes, rng)

    @property
    def bn_layers(self):
        return [f"bn{i}" for i in range(1, len(self.WIDTHS) + 1)]

    def forward(self, x, mode: str = "eval", bank: str = "A") -> Tensor:
        x = T.as_tensor(x)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ConfigurationError(f"expected [N,{self.in_channels},H,W] input, got {x.shape}")
        h = x
        for i, stride in enumerate(self.STRIDES, start=1):
            h = layers.apply_layer("conv3x3", h, self.params, prefix=f"conv{i}", stride=stride)
            h = layers.apply_layer("batch-norm", h, self.params, prefix=f"bn{i}", mode=mode, bank=bank)
            h = layers.apply_layer("relu", h)
        h = layers.apply_layer("global-avg-pool", h)
        return layers.apply_layer("linear", h, self.params, prefix="fc")

    def bank_names(self, bank: str):
        return [n for n in self.params.names() if f".{bank}." in n]

    def trainable_names(self, banks=("A", "B")):
        skip = [b for b in layers.BANKS if b not in banks]
        return [n for n in self.params.names() if not any(f".{b}." in n for b in skip)]

    def sync_banks(self, src: str = "A", dst: str = "B"):
        """Copy one bank (affine, statistics and momentum) onto the other."""
        p = self.params
        for name in list(p.entries):
            if f".{src}." in name:
                other = name.replace(f".{src}.", f".{dst}.")
                p.entries[other] = Tensor(p.entries[name].data.copy(), requires_grad=True)
                if name in p.velocity:
                    p.velocity[other] = p.velocity[name].copy()
        for name in list(p.buffers):
            if f".{src}." in name:
                p.buffers[name.replace(f".{src}.", f".{dst}.")] = p.buffers[name].copy()

    def bank_snapshot(self, bank: str) -> dict:
        p = self.params
        snap = {n: p.entries[n].data.copy() for n in p.entries if f".{bank}." in n}
        snap.update({n: p.buffers[n].copy() for n in p.buffers if f".{bank}." in n})
        return snap


def model_forward(net: SmallConvNet, batch, mode: str = "eval", bank: str = "A") -> Tensor:
    return net.forward(batch, mode=mode, bank=bank)


def predict_logits(net: SmallConvNet, x, bank: str = "A", batch_size: int = 256) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = [net.forward(x[i : i + batch_size], "eval", bank).data for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, net.num_classes))


class AagNet:
    """Four linear layers with ReLU between them and a sigmoid output.

    Produces the non-redundant half of an amplitude spectrum, [N, C, H, W//2+1].
    """

    def __init__(
        self,
        image_shape=(3, 32, 32),
        num_classes: int = 10,
        tau: int = 100,
        input_mode: str = "noise+logits",
        hidden=(256, 512, 1024),
        seed: int = 0,
    ):
        if input_mode not in INPUT_MODES:
            raise ConfigurationError(f"unknown generator input mode {input_mode!r}")
        if len(hidden) != 3:
            raise ConfigurationError("the generator has exactly three hidden layers")
        c, h, w = image_shape
        self.image_shape = tuple(image_shape)
        self.num_classes = num_classes
        self.tau = tau
        self.input_mode = input_mode
        self.hidden = tuple(hidden)
        self.out_shape = (c, h, spectral.half_width(w))
        self.params = ParameterSet()
        rng = np.random.default_rng(seed)
        widths = [tau + self.cond_width, *hidden, int(np.prod(self.out_shape))]
        for i in range(4):
            layers.add_linear(self.params, f"fc{i + 1}", widths[i], widths[i + 1], rng)

    @property
    def cond_width(self) -> int:
        return 0 if self.input_mode == "noise-only" else self.num_classes

    @property
    def output_size(self) -> int:
        return int(np.prod(self.out_shape))

    def forward(self, z, conditioning=None) -> Tensor:
        z = np.asarray(z, dtype=np.float64)
        n = z.shape[0]
        if z.ndim != 2 or z.shape[1] != self.tau:
            raise ConfigurationError(f"noise must be [N,{self.tau}], got {z.shape}")
        cond = np.zeros((n, 0)) if conditioning is None else np.asarray(conditioning, dtype=np.float64)
        if cond.shape != (n, self.cond_width):
            raise ConfigurationError(f"conditioning must be [N,{self.cond_width}] for {self.input_mode}, got {cond.shape}")
        h = Tensor(np.concatenate([z, cond], axis=1))
        for i in range(1, 5):
            h = layers.apply_layer("linear", h, self.params, prefix=f"fc{i}")
            if i < 4:
                h = T.relu(h)
        return T.reshape(T.sigmoid(h), (n,) + self.out_shape)


def aag_forward(gen: AagNet, z, conditioning=None) -> Tensor:
    return gen.forward(z, conditioning)


@dataclass
class AmplitudeScale:
    """Running per-frequency mean of natural half amplitudes."""

    mean: np.ndarray | None = None
    momentum: float = 0.01

    def update(self, half_amplitude):
        batch_mean = np.asarray(half_amplitude, dtype=np.float64).mean(axis=0)
        if self.mean is None:
            self.mean = batch_mean
        else:
            self.mean = (1.0 - self.momentum) * self.mean + self.momentum * batch_mean

    def update_from_images(self, x):
        amp = spectral.dft_decompose(x).amplitude
        self.update(amp[..., : spectral.half_width(amp.shape[-1])])


def scale_generated_amplitude(raw, scale: AmplitudeScale):
    """raw * 2 * mean amplitude, so a raw value of 0.5 reproduces the running mean."""
    if scale.mean is None:
        raise ConfigurationError("amplitude scale has not been initialised from data")
    factor = 2.0 * scale.mean
    if isinstance(raw, Tensor):
        return raw * factor
    return np.asarray(raw, dtype=np.float64) * factor


def conditioning(gen: AagNet, net: SmallConvNet | None, x, labels) -> np.ndarray:
    """Generator side input; logits come from bank A in eval mode, detached."""
    n = len(x)
    if gen.input_mode == "noise-only":
        return np.zeros((n, 0))
    if gen.input_mode == "noise+one-hot":
        return np.eye(gen.num_classes)[np.asarray(labels, dtype=np.int64)]
    return net.forward(x, mode="eval", bank="A").data.copy()


def recombine_tensor(x, gen: AagNet, scale: AmplitudeScale, lam, z, cond, clamp: bool = True) -> Tensor:
    """Differentiable (in the generator parameters) recombined batch."""
    x = np.asarray(x, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64).reshape(-1, 1, 1, 1)
    if np.any(lam < 0) or np.any(lam > 1):
        raise ContractError("lambda must lie in [0, 1]")
    spec = spectral.dft_decompose(x)
    h, w = x.shape[-2:]
    generated = spectral.expand_half_tensor(scale_generated_amplitude(gen.forward(z, cond), scale), h, w)
    mixed = generated * lam + spec.amplitude * (1.0 - lam)
    out = spectral.idft_amplitude_tensor(mixed, spec.phase)
    return T.clamp(out, 0.0, 1.0) if clamp else out


def build_recombined(x, net, gen: AagNet, scale: AmplitudeScale, lam, labels, rng, z=None) -> np.ndarray:
    if z is None:
        z = rng.standard_normal((len(x), gen.tau))
    cond = conditioning(gen, net, x, labels)
    return recombine_tensor(x, gen, scale, lam, z, cond).data


def _cosine(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return (1.0 if na == nb else 0.0), True
    if np.array_equal(a, b):
        return 1.0, False
    if np.array_equal(a, -b):
        return -1.0, False
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0)), False


def bn_parameter_similarity(net: SmallConvNet) -> list:
    """Per-layer cosine similarity between the two banks' parameters and statistics."""
    if not net.bn_layers:
        raise ConfigurationError("network has no batch-norm layers")
    out = []
    p = net.params
    for layer in net.bn_layers:
        row = {"layer": layer, "degenerate": False}
        pairs = {
            "gamma": (p[f"{layer}.A.gamma"].data, p[f"{layer}.B.gamma"].data),
            "beta": (p[f"{layer}.A.beta"].data, p[f"{layer}.B.beta"].data),
            "running_mean": (p.buffers[f"{layer}.A.running_mean"], p.buffers[f"{layer}.B.running_mean"]),
            "running_var": (p.buffers[f"{layer}.A.running_var"], p.buffers[f"{layer}.B.running_var"]),
        }
        for key, (a, b) in pairs.items():
            row[key], degenerate = _cosine(a, b)
            row["degenerate"] |= degenerate
        out.append(row)
    return out
