"""Unimodal semantic encoder: residual CNN stages, each followed by channel
and spatial attention gates. The RGB and thermal encoders share this class
and differ only in input channel count."""

import torch
import torch.nn as nn

from .config import EncoderConfig


class ShapeError(ValueError):
    pass


class ChannelAttention(nn.Module):
    """Per-channel gate from the spatially max-pooled descriptor."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.mlp = nn.Sequential(
            nn.Conv2d(channels, hidden, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(hidden, channels, 1),
        )

    def weights(self, x):
        desc = torch.amax(x, dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.mlp(desc))

    def forward(self, x):
        return x * self.weights(x)


class SpatialAttention(nn.Module):
    """Per-position gate from the channel-wise max map."""

    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(1, 1, kernel_size, padding=kernel_size // 2)

    def weights(self, x):
        desc = torch.amax(x, dim=1, keepdim=True)
        return torch.sigmoid(self.conv(desc))

    def forward(self, x):
        return x * self.weights(x)


class ResidualBlock(nn.Module):
    def __init__(self, in_ch, out_ch, stride):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, stride, 1, bias=False),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, 1, 1, bias=False),
            nn.BatchNorm2d(out_ch),
        )
        if stride != 1 or in_ch != out_ch:
            self.shortcut = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, stride, bias=False), nn.BatchNorm2d(out_ch))
        else:
            self.shortcut = nn.Identity()
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.body(x) + self.shortcut(x))


class SemanticEncoder(nn.Module):
    """(B, C_in, H, W) image -> (B, C_out, H/s, W/s) feature map."""

    def __init__(self, in_channels: int, cfg: EncoderConfig):
        super().__init__()
        self.in_channels = in_channels
        self.stride = cfg.total_stride
        stages = []
        ch = in_channels
        for width, stride in zip(cfg.widths, cfg.strides):
            stages.append(
                nn.Sequential(
                    ResidualBlock(ch, width, stride),
                    ChannelAttention(width, cfg.attn_reduction),
                    SpatialAttention(cfg.spatial_kernel),
                )
            )
            ch = width
        self.stages = nn.Sequential(*stages)
        self.out_channels = ch

    def output_shape(self, height, width):
        return self.out_channels, height // self.stride, width // self.stride

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(f"expected (B, {self.in_channels}, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        if h % self.stride or w % self.stride:
            raise ShapeError(f"input {h}x{w} not divisible by total stride {self.stride}")
        return self.stages(x)


def rgb_encoder(cfg: EncoderConfig) -> SemanticEncoder:
    return SemanticEncoder(3, cfg)


def thermal_encoder(cfg: EncoderConfig) -> SemanticEncoder:
    return SemanticEncoder(1, cfg)
