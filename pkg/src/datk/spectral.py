"""2-D DFT amplitude/phase machinery for real images.

Convention: unscaled forward transform, ``1/(H*W)`` on the inverse, phase from
``atan2`` folded into (-pi, pi]. All functions act on the last two axes, so
[C,H,W] images and [N,C,H,W] batches are both accepted.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ContractError, NumericalError
from .tensor import Tensor

IMAG_TOLERANCE = 1e-4
SYMMETRY_TOLERANCE = 1e-5


@dataclass
class Spectrum:
    amplitude: np.ndarray
    phase: np.ndarray


def dft2(x, method: str = "fast") -> np.ndarray:
    """Complex unscaled DFT over the last two axes.

    ``direct`` sums the transform explicitly (compiled kernel when built);
    ``fast`` uses numpy's FFT.
    """
    x = np.asarray(x, dtype=np.float64)
    if method == "fast":
        return np.fft.fft2(x)
    if method == "direct":
        lead = x.shape[:-2]
        flat = np.ascontiguousarray(x.reshape((-1,) + x.shape[-2:]))
        re, im = kernels.dft2_direct(flat)
        return (re + 1j * im).reshape(lead + x.shape[-2:])
    raise ContractError(f"unknown DFT method {method!r}")


def _fold_phase(phase):
    # atan2 returns -pi for (-0.0, negative); keep the half-open interval (-pi, pi]
    return np.where(phase <= -np.pi, np.pi, phase)


def dft_decompose(x, method: str = "fast") -> Spectrum:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ContractError(f"need H, W >= 2, got shape {x.shape}")
    f = dft2(x, method)
    return Spectrum(np.abs(f), _fold_phase(np.arctan2(f.imag, f.real)))


def idft_recombine(amplitude, phase, clamp: bool = False) -> np.ndarray:
    """Real image from an amplitude/phase pair.

    Raises NumericalError when the inverse carries an imaginary residue of
    1e-4 or more, which means the inputs were not conjugate-symmetric.
    """
    amplitude = np.asarray(amplitude, dtype=np.float64)
    phase = np.asarray(phase, dtype=np.float64)
    if amplitude.shape != phase.shape:
        raise ContractError(f"amplitude {amplitude.shape} and phase {phase.shape} differ in shape")
    if np.any(amplitude < 0):
        raise ContractError("amplitude must be non-negative")
    z = np.fft.ifft2(amplitude * np.exp(1j * phase))
    residue = np.abs(z.imag).max() if z.size else 0.0
    if residue >= IMAG_TOLERANCE:
        raise NumericalError(f"imaginary residue {residue:.3g} after inverse DFT (asymmetric spectrum?)")
    out = z.real
    return np.clip(out, 0.0, 1.0) if clamp else out


def mix_amplitudes(a_primary, a_other, lam):
    """lam * a_other + (1 - lam) * a_primary.

    ``lam`` is a scalar or a per-sample vector broadcast over trailing axes.
    """
    lam_arr = np.asarray(lam, dtype=np.float64)
    if np.any(lam_arr < 0) or np.any(lam_arr > 1):
        raise ContractError("lambda must lie in [0, 1]")
    a_primary = np.asarray(a_primary, dtype=np.float64)
    a_other = np.asarray(a_other, dtype=np.float64)
    if a_primary.shape != a_other.shape:
        raise ContractError(f"shape mismatch {a_primary.shape} vs {a_other.shape}")
    lam_arr = lam_arr.reshape(lam_arr.shape + (1,) * (a_primary.ndim - lam_arr.ndim))
    return lam_arr * a_other + (1.0 - lam_arr) * a_primary


def half_width(w: int) -> int:
    return w // 2 + 1


def _expand_index(h: int, w: int) -> np.ndarray:
    """Flat index into the [H, W//2+1] half plane for every full-plane position.

    Columns v > W//2 mirror to ((H-u) % H, W-v). In the self-paired columns
    (0 and, for even W, W/2) rows u > H//2 mirror as well, so the output is
    exactly symmetric even if the half array is not.
    """
    hw = half_width(w)
    u, v = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    flip = v > w // 2
    self_paired = (v == 0) | ((w % 2 == 0) & (v == w // 2))
    flip |= self_paired & (u > h // 2)
    src_u = np.where(flip, (h - u) % h, u)
    src_v = np.where(flip, (w - v) % w, v)
    return (src_u * hw + src_v).reshape(-1)


def expand_half_amplitude(half, h: int, w: int) -> np.ndarray:
    half = np.asarray(half, dtype=np.float64)
    if half.shape[-2:] != (h, half_width(w)):
        raise ContractError(f"half amplitude {half.shape} does not fit H={h}, W={w}")
    flat = half.reshape(half.shape[:-2] + (-1,))
    return np.take(flat, _expand_index(h, w), axis=-1).reshape(half.shape[:-2] + (h, w))


def expand_half_tensor(half: Tensor, h: int, w: int) -> Tensor:
    """Differentiable expand_half_amplitude for [..., H, W//2+1] tensors."""
    if half.shape[-2:] != (h, half_width(w)):
        raise ContractError(f"half amplitude {half.shape} does not fit H={h}, W={w}")
    lead = half.shape[:-2]
    flat = T.reshape(half, lead + (-1,))
    return T.reshape(T.take(flat, _expand_index(h, w), axis=len(lead)), lead + (h, w))


def is_conjugate_symmetric(full, tol=SYMMETRY_TOLERANCE) -> bool:
    full = np.asarray(full)
    return bool(np.all(np.abs(full - mirror(full)) <= tol))


def mirror(full):
    """full[(H-u) % H, (W-v) % W] for every (u, v)."""
    return np.roll(np.flip(full, axis=(-2, -1)), shift=(1, 1), axis=(-2, -1))


def extract_half(full) -> np.ndarray:
    full = np.asarray(full, dtype=np.float64)
    if not is_conjugate_symmetric(full):
        raise ContractError("amplitude is not conjugate-symmetric within 1e-5")
    return full[..., : half_width(full.shape[-1])].copy()


def idft_amplitude_tensor(amplitude: Tensor, phase: np.ndarray) -> Tensor:
    """Differentiable Re(IDFT(amplitude * exp(i*phase))) with the phase held fixed.

    The residue check of :func:`idft_recombine` applies.
    """
    h, w = amplitude.shape[-2:]
    rot = np.exp(1j * np.asarray(phase, dtype=np.float64))
    z = np.fft.ifft2(amplitude.data * rot)
    residue = np.abs(z.imag).max() if z.size else 0.0
    if residue >= IMAG_TOLERANCE:
        raise NumericalError(f"imaginary residue {residue:.3g} after inverse DFT (asymmetric spectrum?)")

    def grad_fn(g):
        return ((np.fft.fft2(g) * np.conj(rot)).real / (h * w),)

    return T._make(z.real, (amplitude,), grad_fn)
