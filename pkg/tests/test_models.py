import numpy as np
import pytest

from datk import spectral
from datk import tensor as T
from datk.errors import ConfigurationError, ContractError
from datk.models import (
    AagNet,
    AmplitudeScale,
    SmallConvNet,
    aag_forward,
    bn_parameter_similarity,
    build_recombined,
    conditioning,
    model_forward,
    scale_generated_amplitude,
)
from datk.tensor import Tensor

from oracles import brute_amp_phase


def _phase_close(a, b, tol):
    return np.abs(np.angle(np.exp(1j * (a - b)))) <= tol


def _zero_gen(gen):
    for k in gen.params.names():
        gen.params.entries[k] = Tensor(np.zeros_like(gen.params[k].data), requires_grad=True)
    return gen


def test_forward_shape_and_determinism(rng):
    net = SmallConvNet(3, 5, seed=1)
    x = rng.uniform(size=(2, 3, 9, 9))
    a = model_forward(net, x).data
    assert a.shape == (2, 5) and np.all(np.isfinite(a))
    np.testing.assert_array_equal(a, model_forward(net, x).data)


def test_banks_start_identical_and_isolated(rng):
    net = SmallConvNet(3, 4)
    x = rng.uniform(size=(4, 3, 8, 8))
    before = model_forward(net, x, "eval", "A").data
    np.testing.assert_array_equal(before, model_forward(net, x, "eval", "B").data)
    model_forward(net, rng.uniform(size=(4, 3, 8, 8)), "train", "B")
    np.testing.assert_array_equal(model_forward(net, x, "eval", "A").data, before)


def test_forward_rejects_wrong_channels():
    with pytest.raises(ConfigurationError):
        SmallConvNet(3, 4).forward(np.zeros((1, 1, 8, 8)))


def test_fits_two_class_set(synthetic):
    from datk.experiments import SyntheticSpec, make_synthetic_dataset
    from datk.losses import cross_entropy

    x, y = make_synthetic_dataset(SyntheticSpec(classes=2), 32, 0)
    net = SmallConvNet(3, 2, seed=0)
    for step in range(200):
        idx = np.arange(step * 16, step * 16 + 16) % len(x)
        rec = T.backward(cross_entropy(net.forward(x[idx], "train", "A"), y[idx]), net.params)
        T.sgd_momentum_step(net.params, rec, 0.05, 0.9, 0.0, names=net.trainable_names(("A",)))
    acc = np.mean(net.forward(x, "eval", "A").data.argmax(1) == y)
    assert acc > 0.9


def test_zero_generator_outputs_half():
    gen = _zero_gen(AagNet((3, 8, 8), 4, tau=10, hidden=(8, 8, 8)))
    out = aag_forward(gen, np.ones((2, 10)), np.ones((2, 4))).data
    assert out.shape == (2, 3, 8, 5)
    np.testing.assert_array_equal(out, 0.5)


def test_generator_output_size_and_range(rng):
    gen = AagNet((3, 32, 32), 10, hidden=(16, 16, 16))
    assert gen.output_size == 3 * 32 * 17 == 1632
    out = gen.forward(rng.standard_normal((2, 100)), rng.standard_normal((2, 10))).data
    assert np.all((out > 0) & (out < 1))


def test_generator_determinism(rng):
    gen = AagNet((3, 8, 8), 4, tau=6, hidden=(8, 8, 8))
    z, c = rng.standard_normal((3, 6)), rng.standard_normal((3, 4))
    np.testing.assert_array_equal(gen.forward(z, c).data, gen.forward(z, c).data)


@pytest.mark.parametrize("mode,width", [("noise-only", 0), ("noise+one-hot", 4), ("noise+logits", 4)])
def test_generator_conditioning_width(mode, width):
    gen = AagNet((1, 4, 4), 4, tau=3, input_mode=mode, hidden=(4, 4, 4))
    assert gen.cond_width == width
    with pytest.raises(ConfigurationError):
        gen.forward(np.zeros((1, 3)), np.zeros((1, width + 1)))


def test_generator_rejects_bad_config():
    with pytest.raises(ConfigurationError):
        AagNet(input_mode="noise+labels")
    with pytest.raises(ConfigurationError):
        AagNet(hidden=(4, 4))
    with pytest.raises(ConfigurationError):
        AagNet((1, 4, 4), 2, tau=3, hidden=(4, 4, 4)).forward(np.zeros((1, 4)), np.zeros((1, 2)))


def test_scale_examples(rng):
    s = AmplitudeScale()
    with pytest.raises(ConfigurationError):
        scale_generated_amplitude(np.ones((1, 2, 2)), s)
    s.update_from_images(rng.uniform(size=(4, 1, 4, 4)))
    np.testing.assert_array_equal(scale_generated_amplitude(np.full(s.mean.shape, 0.5), s), s.mean)
    np.testing.assert_array_equal(scale_generated_amplitude(np.zeros(s.mean.shape), s), 0)


def test_scale_from_constant_images_is_dc_only():
    s = AmplitudeScale()
    s.update_from_images(np.full((3, 1, 4, 4), 0.25))
    amp, _ = brute_amp_phase(np.full((1, 4, 4), 0.25))
    np.testing.assert_allclose(s.mean, amp[..., :3], atol=1e-12)
    out = scale_generated_amplitude(np.full(s.mean.shape, 0.7), s)
    assert out[0, 0, 0] > 0
    out[0, 0, 0] = 0
    np.testing.assert_allclose(out, 0, atol=1e-12)


def test_scale_momentum(rng):
    s = AmplitudeScale()
    a, b = rng.uniform(size=(2, 1, 2, 2)), rng.uniform(size=(2, 1, 2, 2))
    s.update(a)
    s.update(b)
    np.testing.assert_allclose(s.mean, 0.99 * a.mean(0) + 0.01 * b.mean(0))


def _setup(rng, mode="noise+logits"):
    net = SmallConvNet(3, 4, seed=0)
    gen = AagNet((3, 8, 8), 4, tau=5, input_mode=mode, hidden=(8, 8, 8), seed=2)
    x = rng.uniform(0.1, 0.9, (3, 3, 8, 8))
    scale = AmplitudeScale()
    scale.update_from_images(x)
    return net, gen, x, scale


def test_recombined_lambda_zero_is_identity(rng):
    net, gen, x, scale = _setup(rng)
    out = build_recombined(x, net, gen, scale, np.zeros(3), np.array([0, 1, 2]), rng)
    assert np.max(np.abs(out - x)) < 1e-4


@pytest.mark.parametrize("mode", ["noise-only", "noise+one-hot", "noise+logits"])
def test_recombined_keeps_phase(rng, mode):
    net, gen, x, scale = _setup(rng, mode)
    lam = rng.uniform(size=3)
    from datk.models import recombine_tensor

    cond = conditioning(gen, net, x, np.array([0, 1, 2]))
    raw = recombine_tensor(x, gen, scale, lam, rng.standard_normal((3, 5)), cond, clamp=False).data
    s = spectral.dft_decompose(raw)
    mask = s.amplitude > 1e-6
    assert _phase_close(s.phase, spectral.dft_decompose(x).phase, 1e-3)[mask].all()


def test_recombined_full_lambda_zero_generator_gives_mean_amplitude(rng):
    net, gen, x, scale = _setup(rng, "noise-only")
    _zero_gen(gen)
    from datk.models import recombine_tensor

    raw = recombine_tensor(x, gen, scale, np.ones(3), rng.standard_normal((3, 5)), None, clamp=False).data
    amp = spectral.dft_decompose(raw).amplitude
    np.testing.assert_allclose(amp, np.broadcast_to(spectral.expand_half_amplitude(scale.mean, 8, 8), amp.shape), atol=1e-9)


def test_recombined_rejects_lambda(rng):
    net, gen, x, scale = _setup(rng)
    with pytest.raises(ContractError):
        build_recombined(x, net, gen, scale, np.full(3, 1.5), np.zeros(3, int), rng)


def test_logit_conditioning_is_detached_eval_bank_a(rng):
    net, gen, x, _ = _setup(rng)
    c = conditioning(gen, net, x, None)
    np.testing.assert_array_equal(c, net.forward(x, "eval", "A").data)
    assert isinstance(c, np.ndarray)


def test_bn_similarity_cases():
    net = SmallConvNet(3, 4)
    for row in bn_parameter_similarity(net):
        assert row["gamma"] == row["running_var"] == 1.0
        # zero betas and running means are degenerate: both zero -> 1
        assert row["beta"] == 1.0 and row["degenerate"]
    p = net.params
    p.entries["bn1.B.gamma"] = Tensor(-p["bn1.A.gamma"].data, requires_grad=True)
    assert bn_parameter_similarity(net)[0]["gamma"] == -1.0
    p.entries["bn2.B.gamma"] = Tensor(np.zeros(32), requires_grad=True)
    row = bn_parameter_similarity(net)[1]
    assert row["gamma"] == 0.0 and row["degenerate"]


def test_sync_banks_copies_everything(rng):
    net = SmallConvNet(3, 4)
    net.forward(rng.uniform(size=(4, 3, 8, 8)), "train", "A")
    net.params.velocity["bn1.A.gamma"] = np.ones(16)
    net.sync_banks("A", "B")
    a, b = net.bank_snapshot("A"), net.bank_snapshot("B")
    for k, v in a.items():
        np.testing.assert_array_equal(v, b[k.replace(".A.", ".B.")])
    np.testing.assert_array_equal(net.params.velocity["bn1.B.gamma"], np.ones(16))
