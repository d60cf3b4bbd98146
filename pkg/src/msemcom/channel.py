"""Bit generator (probability table + straight-through Gumbel-Softmax) and the
binary symmetric channel."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import torch
import torch.nn as nn

from .config import ConfigError

_LOG_FLOOR = 1e-12


class ChannelError(ValueError):
    pass


class _HardForward(torch.autograd.Function):
    """Return ``hard`` in the forward pass; route the gradient to ``soft``."""

    @staticmethod
    def forward(ctx, hard, soft):
        return hard.clone()

    @staticmethod
    def backward(ctx, grad):
        return None, grad


class _IdentityBackward(torch.autograd.Function):
    @staticmethod
    def forward(ctx, received, sent):
        return received.clone()

    @staticmethod
    def backward(ctx, grad):
        return None, grad


class BitGenerator(nn.Module):
    """Linear map z_s (B, L_s) -> (B, L_b, 2) logits, row-softmaxed into p_s."""

    def __init__(self, ls: int, lb: int):
        super().__init__()
        self.lb = lb
        self.linear = nn.Linear(ls, 2 * lb)

    def logits(self, z_s):
        return self.linear(z_s).view(z_s.shape[0], self.lb, 2)

    def forward(self, z_s):
        return torch.softmax(self.logits(z_s), dim=-1)


def make_prob_table(z_s, generator: BitGenerator):
    if z_s.dim() == 1:
        return generator(z_s[None])[0]
    return generator(z_s)


def gumbel_noise(shape, generator=None, dtype=None):
    u = torch.rand(shape, generator=generator, dtype=dtype or torch.get_default_dtype())
    exp_sample = -torch.log(u.clamp_min(1e-20))
    return -torch.log(exp_sample.clamp_min(1e-20))


def relaxed_sample(log_probs, temperature, noise):
    return torch.softmax((log_probs + noise) / temperature, dim=-1)


def sample_bits(p_s, temperature=1.0, generator=None, hard_only=False):
    """Draw one bit per row of ``p_s`` (..., 2).

    The forward value is the argmax of the Gumbel-perturbed log-probabilities
    (exactly 0.0 or 1.0); the backward pass uses the relaxed softmax sample.
    ``hard_only`` skips the noise and returns argmax(p_s).
    """
    if temperature <= 0:
        raise ConfigError("channel.temperature", f"must be positive, got {temperature}")
    log_p = torch.log(p_s.clamp_min(_LOG_FLOOR))
    if hard_only:
        return (p_s[..., 1] > p_s[..., 0]).to(p_s.dtype)
    noise = gumbel_noise(p_s.shape, generator, p_s.dtype)
    soft = relaxed_sample(log_p, temperature, noise)
    # ties resolve to bit 0 (argmax returns the first index)
    hard = torch.argmax(log_p + noise, dim=-1).to(p_s.dtype)
    return _HardForward.apply(hard, soft[..., 1])


@dataclass
class ChannelConfig:
    p: float = 0.0
    seed: int = 0
    grad_mode: str = "straight-through"

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError("channel.flip_prob", f"must lie in [0, 1], got {self.p}")
        if self.grad_mode not in ("straight-through", "detached"):
            raise ConfigError("channel.grad_mode", f"unknown mode {self.grad_mode!r}")


def bsc_transmit(bits, p: float, generator=None, grad_mode="straight-through"):
    """Flip each bit independently with probability ``p``.

    Under ``straight-through`` the backward pass treats the channel as the
    identity; under ``detached`` no gradient crosses the channel.
    """
    if not 0.0 <= p <= 1.0:
        raise ConfigError("channel.flip_prob", f"must lie in [0, 1], got {p}")
    values = bits.detach()
    if not torch.all((values == 0) | (values == 1)):
        raise ChannelError("BSC input must contain only 0 and 1")
    flips = torch.rand(bits.shape, generator=generator) < p
    received = torch.where(flips, 1 - values, values)
    if grad_mode == "detached" or not bits.requires_grad:
        return received
    return _IdentityBackward.apply(received, bits)


def transmit(bits, cfg: ChannelConfig, generator=None):
    if generator is None:
        generator = torch.Generator().manual_seed(cfg.seed)
    return bsc_transmit(bits, cfg.p, generator, cfg.grad_mode)


def bpp(lb: int, height: int, width: int) -> float:
    """Channel bits per pixel, lb / (height * width)."""
    if lb <= 0 or height <= 0 or width <= 0:
        raise ValueError(f"bpp needs positive sizes, got lb={lb} H={height} W={width}")
    return float(Fraction(lb, height * width))


def lb_for_bpp(rate: float, height: int, width: int) -> int:
    """Bit budget closest to ``rate`` bits per pixel (at least one bit)."""
    return max(1, round(rate * height * width))


def temperature_at(epoch: int, start: float, anneal: float, floor: float) -> float:
    if anneal == 1.0:
        return start
    return max(floor, start * anneal**epoch)
