"""Semantic decoder: received bits -> per-pixel class logits."""

from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
from PIL import Image

from .config import ConfigError


def decoder_layout(lb, grid_h, grid_w, height, width):
    """Return (grid_c, stages) for reshaping lb bits to a grid_h x grid_w x grid_c map
    that doubles ``stages`` times up to height x width."""
    cells = grid_h * grid_w
    if cells <= 0 or lb % cells:
        raise ConfigError("channel.lb", f"lb={lb} does not factor into a {grid_h}x{grid_w} grid")
    stages = 0
    while grid_h << stages < height:
        stages += 1
    if grid_h << stages != height or grid_w << stages != width:
        raise ConfigError("decoder.grid_h", f"grid {grid_h}x{grid_w} does not double up to {height}x{width}")
    return lb // cells, stages


def auto_grid(lb, height, width, preferred):
    """Largest square grid g <= preferred with g*g | lb and height = g * 2^k."""
    g = preferred
    while g >= 1:
        ratio = height // g
        if height % g == 0 and width % g == 0 and ratio & (ratio - 1) == 0 and height // g == width // g and lb % (g * g) == 0:
            return g
        g -= 1
    raise ConfigError("channel.lb", f"no decoder grid fits lb={lb} at {height}x{width}")


class BitDecoder(nn.Module):
    """(B, L_b) bits -> (B, N, H, W) logits via doubling transpose convolutions."""

    def __init__(self, lb, num_classes, height, width, grid_h=8, grid_w=8, base_width=64):
        super().__init__()
        self.grid_c, stages = decoder_layout(lb, grid_h, grid_w, height, width)
        self.grid = (self.grid_c, grid_h, grid_w)
        self.lb = lb
        layers = []
        ch = self.grid_c
        if stages == 0:
            layers += [nn.Conv2d(ch, base_width, 3, padding=1), nn.BatchNorm2d(base_width), nn.ReLU(inplace=True)]
            ch = base_width
        for i in range(stages):
            out = max(16, base_width >> i)
            layers += [nn.ConvTranspose2d(ch, out, 4, 2, 1), nn.BatchNorm2d(out), nn.ReLU(inplace=True)]
            ch = out
        self.up = nn.Sequential(*layers)
        self.head = nn.Conv2d(ch, num_classes, 1)

    def forward(self, bits):
        if bits.shape[-1] != self.lb:
            raise ValueError(f"expected {self.lb} bits, got {bits.shape[-1]}")
        x = bits.reshape(bits.shape[0], *self.grid)
        return self.head(self.up(x))


def predict_labels(logits):
    """Per-pixel argmax over the class axis (dim 1); ties go to the lowest index."""
    return torch.argmax(logits, dim=1)


def save_label_png(label, path):
    arr = label.detach().cpu().numpy() if torch.is_tensor(label) else np.asarray(label)
    if arr.max(initial=0) > 255:
        raise ValueError("label values do not fit in 8 bits")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr.astype(np.uint8), mode="L").save(path)
