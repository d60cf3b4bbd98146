"""Prompt projection heads and the cross-modal cosine objective used to
pre-train the two encoders."""

import torch
import torch.nn as nn

from .config import PromptConfig
from .encoder import ShapeError


class PromptProjection(nn.Module):
    """Map concat(own features, prompted features) to a vector of length ``proj_dim``.

    Two stride-2 convolutions, global average pooling, then a 2-layer MLP.
    """

    def __init__(self, feature_channels: int, cfg: PromptConfig):
        super().__init__()
        w = cfg.conv_width
        self.convs = nn.Sequential(
            nn.Conv2d(2 * feature_channels, w, 3, 2, 1),
            nn.ReLU(inplace=True),
            nn.Conv2d(w, w, 3, 2, 1),
            nn.ReLU(inplace=True),
        )
        self.mlp = nn.Sequential(nn.Linear(w, cfg.hidden), nn.ReLU(inplace=True), nn.Linear(cfg.hidden, cfg.proj_dim))
        self.proj_dim = cfg.proj_dim

    def forward(self, own, prompted):
        if own.shape != prompted.shape:
            raise ShapeError(f"own {tuple(own.shape)} and prompted {tuple(prompted.shape)} features differ")
        x = self.convs(torch.cat([own, prompted], dim=1))
        return self.mlp(x.mean(dim=(2, 3)))


def cosine_loss(v_r, v_t, eps=1e-8):
    """|v_r . v_t| / (||v_r|| ||v_t||) over the last axis, averaged over leading axes.

    ``eps`` is added to the norm product so early training never divides by zero.
    """
    v_r = torch.as_tensor(v_r, dtype=torch.get_default_dtype()) if not torch.is_tensor(v_r) else v_r
    v_t = torch.as_tensor(v_t, dtype=v_r.dtype) if not torch.is_tensor(v_t) else v_t
    if v_r.shape != v_t.shape:
        raise ShapeError(f"projection vectors differ in shape: {tuple(v_r.shape)} vs {tuple(v_t.shape)}")
    dot = (v_r * v_t).sum(dim=-1).abs()
    denom = v_r.norm(dim=-1) * v_t.norm(dim=-1) + eps
    return (dot / denom).mean()
