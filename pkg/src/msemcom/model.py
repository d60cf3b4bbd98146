"""End-to-end transceiver assembled from the encoder, prompt, fusion, channel
and decoder modules, plus parameter-group bookkeeping."""

from __future__ import annotations

import hashlib

import torch
import torch.nn as nn

from .channel import BitGenerator, bsc_transmit, sample_bits
from .config import RunConfig
from .data import prompt_tensors
from .decoder import BitDecoder
from .encoder import SemanticEncoder
from .fusion import SemanticFusion, UnimodalProjection
from .prompt import PromptProjection, cosine_loss

# parameter collections and the state-dict prefix that holds each
PARAM_GROUPS = {
    "theta_r": "encoder.rgb.",
    "theta_t": "encoder.thermal.",
    "phi_r": "prompt.rgb.",
    "phi_t": "prompt.thermal.",
    "phi_s": "fusion.",
    "phi_b": "bitgen.",
    "psi": "decoder.",
}
PRETRAIN_GROUPS = ("theta_r", "theta_t", "phi_r", "phi_t")
E2E_GROUPS = ("theta_r", "theta_t", "phi_s", "phi_b", "psi")


class SemComSystem(nn.Module):
    def __init__(self, cfg: RunConfig):
        super().__init__()
        cfg.validate()
        self.modality = cfg.train.modality
        d = cfg.data
        self.encoder = nn.ModuleDict({"rgb": SemanticEncoder(3, cfg.encoder), "thermal": SemanticEncoder(1, cfg.encoder)})
        c, h, w = self.encoder["rgb"].output_shape(d.height, d.width)
        self.feature_shape = (c, h, w)
        self.prompt = nn.ModuleDict({"rgb": PromptProjection(c, cfg.prompt), "thermal": PromptProjection(c, cfg.prompt)})
        if self.modality == "both":
            self.fusion = SemanticFusion(c, h, w, cfg.ls, cfg.fusion)
        else:
            self.fusion = UnimodalProjection(c, h, w, cfg.ls)
        self.bitgen = BitGenerator(cfg.ls, cfg.channel.lb)
        self.decoder = BitDecoder(
            cfg.channel.lb, d.num_classes, d.height, d.width, cfg.decoder.grid_h, cfg.decoder.grid_w, cfg.decoder.width
        )
        self.prompt_eps = cfg.prompt.eps

    # -- phase 1
    def prompt_loss(self, rgb, thermal):
        enc_r, enc_t = self.encoder["rgb"], self.encoder["thermal"]
        y_rr, y_tt = enc_r(rgb), enc_t(thermal)
        gray, expanded = prompt_tensors(rgb, thermal)
        y_rt, y_tr = enc_r(expanded), enc_t(gray)
        v_r = self.prompt["rgb"](y_rr, y_rt)
        v_t = self.prompt["thermal"](y_tt, y_tr)
        return cosine_loss(v_r, v_t, self.prompt_eps)

    # -- phase 2
    def semantic(self, rgb, thermal):
        if self.modality == "rgb":
            return self.fusion(self.encoder["rgb"](rgb))
        if self.modality == "thermal":
            return self.fusion(self.encoder["thermal"](thermal))
        return self.fusion(self.encoder["rgb"](rgb), self.encoder["thermal"](thermal))

    def forward(self, rgb, thermal, flip_prob=0.0, temperature=1.0, sample_gen=None, channel_gen=None,
                hard_only=False, grad_mode="straight-through"):
        z_s = self.semantic(rgb, thermal)
        p_s = self.bitgen(z_s)
        bits = sample_bits(p_s, temperature, sample_gen, hard_only=hard_only)
        received = bsc_transmit(bits, flip_prob, channel_gen, grad_mode)
        return {"z_s": z_s, "p_s": p_s, "bits": bits, "received": received, "logits": self.decoder(received)}


def group_parameters(model: nn.Module, names) -> list[nn.Parameter]:
    prefixes = tuple(PARAM_GROUPS[n] for n in names)
    return [p for k, p in model.named_parameters() if k.startswith(prefixes)]


def group_hashes(model_or_state) -> dict[str, str]:
    """sha256 over every tensor (parameters and buffers) in each group."""
    state = model_or_state.state_dict() if isinstance(model_or_state, nn.Module) else model_or_state
    out = {}
    for name, prefix in PARAM_GROUPS.items():
        h = hashlib.sha256()
        for k in sorted(state):
            if k.startswith(prefix):
                h.update(k.encode())
                h.update(state[k].detach().cpu().contiguous().numpy().tobytes())
        out[name] = h.hexdigest()
    return out


def build_model(cfg: RunConfig) -> SemComSystem:
    torch.manual_seed(cfg.train.seed)
    return SemComSystem(cfg)
