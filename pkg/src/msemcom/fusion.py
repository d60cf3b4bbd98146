"""Semantic fusion of the two encoder outputs into one vector ``z_s``.

Pipeline: tokenize each feature map, self-attention block per modality,
cross-attention in both directions, learnable gating ``(1 + M) * F``,
concatenation back to a map, then three fusion-block + SE stages and a
linear projection to length ``L_s``.

Token tensors are (B, L, D); maps are (B, C, h, w).
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError, FusionConfig
from .encoder import ShapeError


def sinusoidal_encoding(length, dim, dtype=None):
    """Fixed (length, dim) table: sin on even dims, cos on odd dims."""
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    freq = torch.exp(-math.log(10000.0) * i / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq[: dim // 2])
    return pe.to(dtype or torch.get_default_dtype())


class Tokenizer(nn.Module):
    """Flatten spatial positions to tokens, embed to depth D, add positions."""

    def __init__(self, in_channels, d_model, length, positional=True):
        super().__init__()
        self.embed = nn.Linear(in_channels, d_model)
        self.positional = positional
        self.register_buffer("pe", sinusoidal_encoding(length, d_model), persistent=False)

    def forward(self, fmap):
        tokens = self.embed(fmap.flatten(2).transpose(1, 2))
        if self.positional:
            if tokens.shape[1] != self.pe.shape[0]:
                raise ShapeError(f"expected {self.pe.shape[0]} tokens, got {tokens.shape[1]}")
            tokens = tokens + self.pe.to(tokens.dtype)
        return tokens


def scaled_dot_attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v over the last two axes; returns (output, weights)."""
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    w = torch.softmax(scores, dim=-1)
    return w @ v, w


class MultiHeadAttention(nn.Module):
    """Queries from one token sequence, keys/values from another (or the same)."""

    def __init__(self, d_model, d_attn, heads):
        super().__init__()
        if d_attn % heads:
            raise ConfigError("fusion.heads", f"d_attn={d_attn} not divisible by heads={heads}")
        self.heads = heads
        self.w_q = nn.Linear(d_model, d_attn, bias=False)
        self.w_k = nn.Linear(d_model, d_attn, bias=False)
        self.w_v = nn.Linear(d_model, d_attn, bias=False)
        self.w_o = nn.Linear(d_attn, d_model, bias=False)
        self.last_weights = None

    def _split(self, x):
        b, n, _ = x.shape
        return x.view(b, n, self.heads, -1).transpose(1, 2)

    def forward(self, x_q, x_kv=None):
        x_kv = x_q if x_kv is None else x_kv
        if x_q.shape[-1] != x_kv.shape[-1]:
            raise ShapeError(f"query depth {x_q.shape[-1]} != key/value depth {x_kv.shape[-1]}")
        q, k, v = self._split(self.w_q(x_q)), self._split(self.w_k(x_kv)), self._split(self.w_v(x_kv))
        out, w = scaled_dot_attention(q, k, v)
        self.last_weights = w.detach()
        b, _, n, _ = out.shape
        return self.w_o(out.transpose(1, 2).reshape(b, n, -1))


class TransformerBlock(nn.Module):
    """x' = LN(x + MHA(x, kv)); out = LN(x' + FFN(x')). ``kv=None`` gives self-attention."""

    def __init__(self, d_model, d_attn, heads, ffn_dim):
        super().__init__()
        self.attn = MultiHeadAttention(d_model, d_attn, heads)
        self.norm1 = nn.LayerNorm(d_model)
        self.ffn = nn.Sequential(nn.Linear(d_model, ffn_dim), nn.ReLU(inplace=True), nn.Linear(ffn_dim, d_model))
        self.norm2 = nn.LayerNorm(d_model)

    def forward(self, x, kv=None):
        x = self.norm1(x + self.attn(x, kv))
        return self.norm2(x + self.ffn(x))


def gate(f_c, m):
    """Learnable gating ``f_c * m + f_c``; m = 0 is the identity."""
    if f_c.shape[-2:] != m.shape[-2:]:
        raise ShapeError(f"gate shape {tuple(m.shape)} does not match tokens {tuple(f_c.shape)}")
    return f_c * m + f_c


class CrossAttentionModule(nn.Module):
    def __init__(self, channels, length, cfg: FusionConfig):
        super().__init__()
        D = cfg.d_model
        self.tok_r = Tokenizer(channels, D, length, cfg.positional)
        self.tok_t = Tokenizer(channels, D, length, cfg.positional)
        mk = lambda: TransformerBlock(D, cfg.d_attn, cfg.heads, cfg.ffn_dim)  # noqa: E731
        self.self_r = nn.ModuleList([mk() for _ in range(cfg.blocks)])
        self.self_t = nn.ModuleList([mk() for _ in range(cfg.blocks)])
        self.cross_r = nn.ModuleList([mk() for _ in range(cfg.blocks)])
        self.cross_t = nn.ModuleList([mk() for _ in range(cfg.blocks)])
        self.m_r = nn.Parameter(torch.zeros(length, D))
        self.m_t = nn.Parameter(torch.zeros(length, D))

    def forward(self, y_rgb, y_the):
        f_r, f_t = self.tok_r(y_rgb), self.tok_t(y_the)
        for sr, st, cr, ct in zip(self.self_r, self.self_t, self.cross_r, self.cross_t):
            s_r, s_t = sr(f_r), st(f_t)
            f_r, f_t = cr(s_r, s_t), ct(s_t, s_r)
        a_r, a_t = gate(f_r, self.m_r), gate(f_t, self.m_t)
        b, _, h, w = y_rgb.shape
        to_map = lambda a: a.transpose(1, 2).reshape(b, -1, h, w)  # noqa: E731
        return torch.cat([to_map(a_r), to_map(a_t)], dim=1)


class MiniInception(nn.Module):
    """Split channels in half; 3x3 dilation-1 on one half, 3x3 dilation-2 on the other."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.split = in_ch // 2
        half = out_ch // 2
        self.conv_a = nn.Conv2d(self.split, half, 3, padding=1, dilation=1, bias=False)
        self.conv_b = nn.Conv2d(in_ch - self.split, out_ch - half, 3, padding=2, dilation=2, bias=False)
        self.norm_a = nn.BatchNorm2d(half)
        self.norm_b = nn.BatchNorm2d(out_ch - half)

    def branches(self, x):
        return self.conv_a(x[:, : self.split]), self.conv_b(x[:, self.split :])

    def forward(self, x):
        a, b = self.branches(x)
        return torch.cat([F.relu(self.norm_a(a)), F.relu(self.norm_b(b))], dim=1)


class FusionBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Sequential(nn.Conv2d(in_ch, out_ch, 3, padding=1, bias=False), nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True))
        self.inception = MiniInception(out_ch, out_ch)

    def forward(self, x):
        return self.inception(self.conv(x))


class SERefine(nn.Module):
    """Channel gates for F_bar from pooled concat(F_bar, F_tilde)."""

    def __init__(self, bar_ch, tilde_ch, reduction=4):
        super().__init__()
        hidden = max(1, (bar_ch + tilde_ch) // reduction)
        self.mlp = nn.Sequential(nn.Linear(bar_ch + tilde_ch, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, bar_ch))

    def weights(self, f_bar, f_tilde):
        pooled = torch.cat([f_bar, f_tilde], dim=1).mean(dim=(2, 3))
        return torch.sigmoid(self.mlp(pooled))

    def forward(self, f_bar, f_tilde):
        return f_bar * self.weights(f_bar, f_tilde)[:, :, None, None]


class FusionEnhancement(nn.Module):
    def __init__(self, in_ch, spatial, ls, cfg: FusionConfig):
        super().__init__()
        blocks, ses = [], []
        ch = in_ch
        for width in cfg.stage_width:
            blocks.append(FusionBlock(ch, width))
            ses.append(SERefine(width, in_ch, cfg.se_reduction))
            ch = width
        self.blocks = nn.ModuleList(blocks)
        self.ses = nn.ModuleList(ses)
        self.project = nn.Linear(ch * spatial, ls)

    def forward(self, f_tilde):
        x = f_tilde
        for block, se in zip(self.blocks, self.ses):
            x = se(block(x), f_tilde)
        return self.project(x.flatten(1))


class SemanticFusion(nn.Module):
    """(y_rgb, y_the), each (B, C, h, w) -> z_s of shape (B, L_s)."""

    def __init__(self, channels, height, width, ls, cfg: FusionConfig):
        super().__init__()
        length = height * width
        self.cross = CrossAttentionModule(channels, length, cfg)
        self.enhance = FusionEnhancement(2 * cfg.d_model, length, ls, cfg)
        self.ls = ls

    def forward(self, y_rgb, y_the):
        if y_rgb.shape != y_the.shape:
            raise ShapeError(f"feature maps differ: {tuple(y_rgb.shape)} vs {tuple(y_the.shape)}")
        return self.enhance(self.cross(y_rgb, y_the))


class UnimodalProjection(nn.Module):
    """Stand-in for fusion in single-modality variants: flatten and project to L_s."""

    def __init__(self, channels, height, width, ls):
        super().__init__()
        self.project = nn.Linear(channels * height * width, ls)
        self.ls = ls

    def forward(self, y):
        return self.project(y.flatten(1))
