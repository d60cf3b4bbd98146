import math

import numpy as np
import pytest
import torch
from scipy import integrate

from msemcom.channel import (
    BitGenerator,
    ChannelConfig,
    ChannelError,
    bpp,
    bsc_transmit,
    lb_for_bpp,
    make_prob_table,
    sample_bits,
    transmit,
)
from msemcom.config import ConfigError


def _table(p1, rows):
    return torch.tensor([[1 - p1, p1]], dtype=torch.float64).expand(rows, 2).contiguous()


def _expected_soft_bit(delta, tau):
    """E[softmax((l + g) / tau)[1]] for logit gap delta = l1 - l0, by quadrature.

    The difference of two standard Gumbels is standard logistic.
    """

    def integrand(x):
        return 1 / (1 + math.exp(-(delta + x) / tau)) * math.exp(-x) / (1 + math.exp(-x)) ** 2

    val, _ = integrate.quad(integrand, -60, 60, limit=200)
    return val


class TestProbabilityTable:
    def test_rows_normalized(self):
        gen = BitGenerator(32, 20)
        p = make_prob_table(torch.randn(5, 32), gen)
        assert p.shape == (5, 20, 2)
        torch.testing.assert_close(p.sum(-1), torch.ones(5, 20), atol=1e-6, rtol=0)
        assert (p >= 0).all() and (p <= 1).all()

    def test_zero_weights_half(self):
        gen = BitGenerator(8, 6)
        torch.nn.init.zeros_(gen.linear.weight)
        torch.nn.init.zeros_(gen.linear.bias)
        p = make_prob_table(torch.zeros(8), gen)
        assert p.shape == (6, 2)
        assert torch.equal(p, torch.full((6, 2), 0.5))


class TestSampling:
    def test_degenerate_row(self):
        p = _table(1e-12, 10_000)
        bits = sample_bits(p, 1.0, torch.Generator().manual_seed(0))
        assert bits.sum().item() == 0

    def test_fair_coin(self):
        bits = sample_bits(_table(0.5, 100_000), 1.0, torch.Generator().manual_seed(1))
        assert 0.47 <= bits.mean().item() <= 0.53

    def test_hard_values(self):
        bits = sample_bits(torch.softmax(torch.randn(50, 2), -1), 0.7, torch.Generator().manual_seed(2))
        assert set(bits.unique().tolist()) <= {0.0, 1.0}

    def test_seeded(self):
        p = _table(0.3, 1000)
        a = sample_bits(p, 1.0, torch.Generator().manual_seed(5))
        b = sample_bits(p, 1.0, torch.Generator().manual_seed(5))
        assert torch.equal(a, b)

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            sample_bits(_table(0.5, 2), 0.0)

    def test_argmax_mode(self):
        p = torch.tensor([[0.2, 0.8], [0.9, 0.1], [0.5, 0.5]])
        assert sample_bits(p, hard_only=True).tolist() == [1.0, 0.0, 0.0]

    def test_quadrature_oracle_sanity(self):
        # at zero gap the expectation is 1/2 by symmetry
        assert _expected_soft_bit(0.0, 1.0) == pytest.approx(0.5, abs=1e-9)

    @pytest.mark.parametrize("delta", [-1.0, 0.0, 0.8])
    def test_relaxed_gradient_matches_finite_difference(self, delta):
        rows = 100_000
        logits = torch.tensor([[0.0, delta]], dtype=torch.float64).expand(rows, 2).clone().requires_grad_(True)
        bits = sample_bits(torch.softmax(logits, -1), 1.0, torch.Generator().manual_seed(11))
        bits.mean().backward()
        grad_gap = (logits.grad[:, 1].sum()).item()
        h = 1e-4
        fd = (_expected_soft_bit(delta + h, 1.0) - _expected_soft_bit(delta - h, 1.0)) / (2 * h)
        assert grad_gap == pytest.approx(fd, rel=5e-2)


class TestBSC:
    bits = torch.randint(0, 2, (100_000,), generator=torch.Generator().manual_seed(0)).double()

    def test_noiseless(self):
        assert torch.equal(bsc_transmit(self.bits, 0.0, torch.Generator().manual_seed(1)), self.bits)

    def test_complement(self):
        assert torch.equal(bsc_transmit(self.bits, 1.0, torch.Generator().manual_seed(1)), 1 - self.bits)

    def test_flip_rate(self):
        out = bsc_transmit(self.bits, 0.1, torch.Generator().manual_seed(2))
        frac = (out != self.bits).double().mean().item()
        assert 0.097 <= frac <= 0.103

    def test_length_preserved(self):
        assert bsc_transmit(self.bits[:17], 0.3).shape == (17,)

    def test_non_binary(self):
        with pytest.raises(ChannelError):
            bsc_transmit(torch.tensor([0.0, 0.5, 1.0]), 0.1)

    def test_bad_probability(self):
        with pytest.raises(ConfigError):
            bsc_transmit(self.bits, 1.5)
        with pytest.raises(ConfigError):
            ChannelConfig(p=-0.1)

    def test_half_is_independent_of_input(self):
        out = bsc_transmit(self.bits, 0.5, torch.Generator().manual_seed(3))
        joint = np.zeros((2, 2))
        for a in (0, 1):
            for b in (0, 1):
                joint[a, b] = ((self.bits == a) & (out == b)).double().mean().item()
        pa, pb = joint.sum(1), joint.sum(0)
        mi = sum(joint[a, b] * math.log2(joint[a, b] / (pa[a] * pb[b])) for a in (0, 1) for b in (0, 1))
        assert mi < 0.01

    def test_straight_through_gradient(self):
        x = torch.tensor([0.0, 1.0, 1.0, 0.0], requires_grad=True)
        y = bsc_transmit(x, 0.5, torch.Generator().manual_seed(0))
        (y * torch.arange(4.0)).sum().backward()
        assert torch.equal(x.grad, torch.arange(4.0))

    def test_detached(self):
        x = torch.tensor([0.0, 1.0], requires_grad=True)
        assert not bsc_transmit(x, 0.2, grad_mode="detached").requires_grad

    def test_seeded_transmit(self):
        cfg = ChannelConfig(p=0.2, seed=9)
        assert torch.equal(transmit(self.bits, cfg), transmit(self.bits, cfg))


class TestBpp:
    def test_values(self):
        assert bpp(28800, 480, 640) == 0.09375
        assert bpp(1200, 480, 640) == 0.00390625
        assert bpp(64 * 64, 64, 64) == 1.0

    def test_zero(self):
        with pytest.raises(ValueError):
            bpp(16, 0, 64)

    def test_inverse(self):
        assert lb_for_bpp(0.09375, 480, 640) == 28800
        assert lb_for_bpp(0.0039, 64, 64) == 16
