import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from datk import spectral
from datk.errors import ContractError, NumericalError

from oracles import brute_amp_phase

images = st.tuples(st.integers(1, 3), st.integers(2, 8), st.integers(2, 8), st.integers(0, 2**31)).map(
    lambda t: np.random.default_rng(t[3]).uniform(size=t[:3])
)


def _phase_close(a, b, tol):
    d = np.angle(np.exp(1j * (a - b)))
    return np.abs(d) <= tol


def test_constant_image():
    s = spectral.dft_decompose(np.ones((1, 2, 2)))
    np.testing.assert_allclose(s.amplitude, [[[4, 0], [0, 0]]], atol=1e-12)
    assert s.phase[0, 0, 0] == 0


def test_impulse_image():
    x = np.zeros((1, 2, 2))
    x[0, 0, 0] = 1
    s = spectral.dft_decompose(x)
    np.testing.assert_allclose(s.amplitude, 1, atol=1e-12)
    np.testing.assert_allclose(s.phase, 0, atol=1e-12)


@pytest.mark.parametrize("size", [4, 5, 8])
def test_matches_brute_force_oracle(rng, size):
    x = rng.uniform(size=(2, size, size))
    amp, phase = brute_amp_phase(x)
    s = spectral.dft_decompose(x, method="direct")
    np.testing.assert_allclose(s.amplitude, amp, atol=1e-9)
    mask = amp > 1e-8
    assert _phase_close(s.phase, phase, 1e-9)[mask].all()


def test_direct_and_fast_agree(rng):
    x = rng.uniform(size=(3, 12, 10))
    np.testing.assert_allclose(spectral.dft2(x, "direct"), spectral.dft2(x, "fast"), atol=1e-8)


def test_unknown_method():
    with pytest.raises(ContractError):
        spectral.dft2(np.zeros((2, 2)), "slow")


def test_too_small_image():
    with pytest.raises(ContractError):
        spectral.dft_decompose(np.zeros((1, 1, 4)))


@settings(max_examples=40, deadline=None)
@given(images)
def test_conjugate_symmetry_and_phase_range(x):
    s = spectral.dft_decompose(x)
    np.testing.assert_allclose(s.amplitude, spectral.mirror(s.amplitude), atol=1e-5)
    mask = s.amplitude > 1e-8
    assert np.all(np.abs(s.phase + spectral.mirror(s.phase))[mask] <= 1e-5) or np.all(
        _phase_close(s.phase, -spectral.mirror(s.phase), 1e-5)[mask]
    )
    assert np.all(s.phase > -np.pi) and np.all(s.phase <= np.pi)


@settings(max_examples=40, deadline=None)
@given(images)
def test_round_trip_and_parseval(x):
    s = spectral.dft_decompose(x)
    assert np.max(np.abs(spectral.idft_recombine(s.amplitude, s.phase) - x)) < 1e-4
    h, w = x.shape[-2:]
    e_freq = (s.amplitude**2).sum(axis=(-2, -1))
    e_space = h * w * (x**2).sum(axis=(-2, -1))
    np.testing.assert_allclose(e_freq, e_space, rtol=1e-6)


def test_inverse_of_constant():
    amp = np.zeros((1, 2, 2))
    amp[0, 0, 0] = 4
    np.testing.assert_allclose(spectral.idft_recombine(amp, np.zeros_like(amp)), 1.0, atol=1e-12)


def test_swap_keeps_phase(rng):
    x1, x2 = rng.uniform(size=(2, 3, 4, 4))
    a1 = spectral.dft_decompose(x1).amplitude
    _, p2 = brute_amp_phase(x2)
    out = spectral.idft_recombine(a1, spectral.dft_decompose(x2).phase)
    s = spectral.dft_decompose(out)
    mask = a1 > 1e-6
    assert _phase_close(s.phase, p2, 1e-3)[mask].all()


def test_asymmetric_spectrum_raises():
    amp = np.ones((1, 4, 4))
    phase = np.zeros((1, 4, 4))
    phase[0, 1, 1] = 1.0
    with pytest.raises(NumericalError):
        spectral.idft_recombine(amp, phase)


def test_negative_amplitude_rejected():
    with pytest.raises(ContractError):
        spectral.idft_recombine(-np.ones((1, 2, 2)), np.zeros((1, 2, 2)))


def test_clamp_flag(rng):
    s = spectral.dft_decompose(rng.uniform(size=(1, 4, 4)))
    out = spectral.idft_recombine(s.amplitude * 5, s.phase, clamp=True)
    assert out.min() >= 0 and out.max() <= 1


@pytest.mark.parametrize("lam,expected", [(0.0, 2.0), (1.0, 4.0), (0.5, 3.0)])
def test_mix_amplitudes(lam, expected):
    np.testing.assert_array_equal(spectral.mix_amplitudes(np.full(3, 2.0), np.full(3, 4.0), lam), expected)


def test_mix_per_sample_lambda():
    out = spectral.mix_amplitudes(np.zeros((2, 1, 2, 2)), np.ones((2, 1, 2, 2)), np.array([0.25, 0.75]))
    np.testing.assert_array_equal(out[:, 0, 0, 0], [0.25, 0.75])


@pytest.mark.parametrize("lam", [-0.1, 1.1])
def test_mix_rejects_lambda(lam):
    with pytest.raises(ContractError):
        spectral.mix_amplitudes(np.ones(2), np.ones(2), lam)


def test_expand_2x2_is_identity(rng):
    half = rng.uniform(size=(3, 2, 2))
    np.testing.assert_array_equal(spectral.expand_half_amplitude(half, 2, 2), half)


def test_expand_reflects_entry():
    half = np.zeros((1, 4, 3))
    half[0, 1, 1] = 7.0
    full = spectral.expand_half_amplitude(half, 4, 4)
    assert full[0, 3, 3] == 7.0 and full[0, 1, 1] == 7.0


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 9), st.integers(2, 9), st.integers(0, 2**31))
def test_expand_is_symmetric_and_extract_inverts(h, w, seed):
    half = np.random.default_rng(seed).uniform(size=(2, h, spectral.half_width(w)))
    full = spectral.expand_half_amplitude(half, h, w)
    assert spectral.is_conjugate_symmetric(full, tol=0.0)
    # consistent halves (taken from a symmetric full array) round-trip exactly
    consistent = spectral.extract_half(full)
    np.testing.assert_array_equal(spectral.extract_half(spectral.expand_half_amplitude(consistent, h, w)), consistent)


def test_extract_matches_oracle_columns(rng):
    x = rng.uniform(size=(1, 4, 4))
    amp, _ = brute_amp_phase(x)
    half = spectral.extract_half(spectral.dft_decompose(x).amplitude)
    np.testing.assert_allclose(half, amp[..., :3], atol=1e-9)
    np.testing.assert_allclose(spectral.expand_half_amplitude(half, 4, 4), amp, atol=1e-6)


def test_extract_zero_and_asymmetric():
    np.testing.assert_array_equal(spectral.extract_half(np.zeros((1, 4, 4))), np.zeros((1, 4, 3)))
    bad = np.zeros((1, 4, 4))
    bad[0, 1, 1] = 1
    with pytest.raises(ContractError):
        spectral.extract_half(bad)


def test_expand_shape_mismatch():
    with pytest.raises(ContractError):
        spectral.expand_half_amplitude(np.zeros((1, 4, 4)), 4, 4)


@settings(max_examples=30, deadline=None)
@given(images, st.floats(0, 1), st.integers(0, 2**31))
def test_phase_preserved_under_any_replacement_amplitude(x, lam, seed):
    h, w = x.shape[-2:]
    s = spectral.dft_decompose(x)
    other = spectral.expand_half_amplitude(np.random.default_rng(seed).uniform(0, 10, x.shape[:-1] + (spectral.half_width(w),)), h, w)
    mixed = spectral.mix_amplitudes(s.amplitude, other, lam)
    out = spectral.dft_decompose(spectral.idft_recombine(mixed, s.phase))
    mask = (out.amplitude > 1e-6) & (mixed > 1e-6)
    assert _phase_close(out.phase, s.phase, 1e-3)[mask].all()
