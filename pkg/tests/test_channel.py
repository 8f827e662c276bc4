import math
from fractions import Fraction

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st

from roijscc.channel import (ChannelSpec, awgn, bandwidth_for_cpp, channel_noise, cpp, noise_variance,
                             parse_snr, power_normalize)


def test_unit_power_fixed_point():
    z = torch.tensor([1 + 0j, 1 + 0j], dtype=torch.complex128)
    assert torch.equal(power_normalize(z), z)


def test_closed_form_scaling():
    z = torch.tensor([2 + 0j, 0j], dtype=torch.complex128)
    out = power_normalize(z)
    assert torch.allclose(out, torch.tensor([math.sqrt(2) + 0j, 0j], dtype=torch.complex128))


def test_zero_vector_unchanged():
    z = torch.zeros(5, dtype=torch.complex64)
    assert torch.equal(power_normalize(z), z)


def test_power_target_and_transmitted_count():
    z = torch.tensor([[3 + 4j, 0j, 0j, 0j]], dtype=torch.complex128)
    assert torch.allclose(power_normalize(z, power=2.0).abs().square().mean(), torch.tensor(2.0, dtype=torch.float64))
    # only one symbol is actually transmitted: it carries all the energy budget
    out = power_normalize(z, k=torch.tensor([1]))
    assert out[0, 0].abs().item() == pytest.approx(1.0)


def test_batched_normalisation_over_multiple_dims():
    z = torch.randn(3, 4, 5, dtype=torch.complex128)
    out = power_normalize(z, dim=(1, 2))
    power = out.abs().square().mean(dim=(1, 2))
    assert torch.allclose(power, torch.ones(3, dtype=torch.float64))


@given(st.integers(1, 64), st.integers(0, 2**31 - 1))
def test_normalised_power_property(k, seed):
    g = torch.Generator().manual_seed(seed)
    z = torch.randn(k, dtype=torch.complex128, generator=g)
    out = power_normalize(z)
    assert abs(out.abs().square().sum().item() / k - 1) < 1e-6


def test_noise_variance_definition():
    assert noise_variance(0) == 1.0
    assert noise_variance(10) == pytest.approx(0.1)
    assert noise_variance(math.inf) == 0.0
    assert ChannelSpec(10).noise_var == pytest.approx(0.1)
    with pytest.raises(ValueError):
        ChannelSpec(10, power=0)


def test_noise_statistics_monte_carlo():
    g = torch.Generator().manual_seed(1234)
    n = channel_noise((1_000_000,), 10.0, g, dtype=torch.complex128)
    re, im = n.real.numpy(), n.imag.numpy()
    assert abs(np.mean(np.abs(n.numpy()) ** 2) / 0.1 - 1) < 0.01
    assert abs(re.var() / 0.05 - 1) < 0.01
    assert abs(im.var() / 0.05 - 1) < 0.01
    assert abs(np.corrcoef(re, im)[0, 1]) < 0.01


def test_identity_channel_is_exact():
    z = torch.randn(100, dtype=torch.complex64)
    assert torch.equal(awgn(z, math.inf), z)


def test_seeded_reproducibility():
    z = torch.randn(50, dtype=torch.complex64)
    a = awgn(z, 4.0, torch.Generator().manual_seed(7))
    b = awgn(z, 4.0, torch.Generator().manual_seed(7))
    c = awgn(z, 4.0, torch.Generator().manual_seed(8))
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_cpp_examples():
    assert cpp(16384, 256, 256) == Fraction(1, 12)
    assert cpp(3 * 64 * 64, 64, 64) == 1
    assert cpp(1024, 64, 64) == Fraction(1, 12)
    assert bandwidth_for_cpp("1/12", 64, 64) == 1024
    assert bandwidth_for_cpp(1 / 24, 64, 64) == 512
    with pytest.raises(ValueError):
        bandwidth_for_cpp("1/7", 64, 64)
    with pytest.raises(ValueError):
        cpp(0, 64, 64)


def test_parse_snr():
    assert parse_snr(" inf ") == math.inf
    assert parse_snr("4") == 4.0
