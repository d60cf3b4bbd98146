"""Two-phase training, evaluation and checkpoint archives.

Phase 1 (``pretrain``) updates only the encoders and prompt projections
under the cosine objective. Phase 2 (``train_e2e``) updates the encoders,
fusion, bit generator and decoder under the Dice + soft-CE objective, with
bits sampled and sent through the BSC inside the loop.
"""

from __future__ import annotations

import copy
import io
import json
import logging
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .channel import bpp, temperature_at
from .config import RunConfig, from_dict
from .data import ImagePair, collate
from .decoder import predict_labels
from .model import E2E_GROUPS, PRETRAIN_GROUPS, SemComSystem, build_model, group_parameters
from .objectives import ConfusionCounts, combined_loss, confusion, macc, miou

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1


class TrainingError(RuntimeError):
    pass


def lr_at(epoch: int, cfg: RunConfig, base: float | None = None) -> float:
    """Step schedule: base * decay ** floor(epoch / step)."""
    t = cfg.train
    base = t.lr if base is None else base
    return base * t.lr_decay ** (epoch // t.lr_step)


def _batches(pairs, batch_size, rng):
    order = rng.permutation(len(pairs))
    for start in range(0, len(order), batch_size):
        yield collate([pairs[k] for k in order[start : start + batch_size]])


@dataclass
class Checkpoint:
    phase: str
    epoch: int
    config: RunConfig
    state: dict[str, torch.Tensor]
    optimizer: dict | None = None
    history: dict[str, Any] = field(default_factory=dict)

    def model(self) -> SemComSystem:
        m = SemComSystem(self.config)
        m.load_state_dict(self.state)
        m.eval()
        return m

    def manifest(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "phase": self.phase,
            "epoch": self.epoch,
            "config_hash": self.config.digest(),
            "config": self.config.to_dict(),
            "history": self.history,
        }


def snapshot(model, phase, epoch, cfg, optimizer=None, history=None) -> Checkpoint:
    state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    opt = copy.deepcopy(optimizer.state_dict()) if optimizer is not None else None
    return Checkpoint(phase, epoch, cfg.copy(), state, opt, dict(history or {}))


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    """Zip archive: manifest.json, params.pt (named tensors), optional optimizer.pt."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        zf.writestr("manifest.json", json.dumps(ckpt.manifest(), indent=2, sort_keys=True))
        buf = io.BytesIO()
        torch.save(ckpt.state, buf)
        zf.writestr("params.pt", buf.getvalue())
        if ckpt.optimizer is not None:
            buf = io.BytesIO()
            torch.save(ckpt.optimizer, buf)
            zf.writestr("optimizer.pt", buf.getvalue())
    return path


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        state = torch.load(io.BytesIO(zf.read("params.pt")), weights_only=True)
        opt = None
        if "optimizer.pt" in zf.namelist():
            opt = torch.load(io.BytesIO(zf.read("optimizer.pt")), weights_only=False)
    cfg = from_dict(manifest["config"])
    if cfg.digest() != manifest["config_hash"]:
        raise TrainingError(f"{path}: config hash mismatch")
    return Checkpoint(manifest["phase"], manifest["epoch"], cfg, state, opt, manifest.get("history", {}))


def _start_model(cfg: RunConfig, init: Checkpoint | None) -> SemComSystem:
    model = build_model(cfg)
    if init is not None:
        try:
            model.load_state_dict(init.state)
        except RuntimeError as exc:
            raise TrainingError(f"checkpoint does not fit the configured architecture: {exc}") from exc
    return model


# ------------------------------------------------------------------- phase 1


def pretrain(dataset: list[ImagePair], cfg: RunConfig, init: Checkpoint | None = None) -> Checkpoint:
    """Cosine-objective pre-training of {theta_r, theta_t, phi_r, phi_t}."""
    if not dataset:
        raise TrainingError("pretrain needs a non-empty dataset")
    model = _start_model(cfg, init)
    t = cfg.train
    start = init.epoch if init is not None and init.phase == "pretrain" else 0
    if t.pretrain_epochs == 0:
        return snapshot(model, "pretrain", start, cfg, history={"pretrain_loss": []})
    base_lr = t.pretrain_lr if t.pretrain_lr is not None else t.lr
    params = group_parameters(model, PRETRAIN_GROUPS)
    opt = torch.optim.Adam(params, lr=base_lr)
    if init is not None and init.phase == "pretrain" and init.optimizer is not None:
        opt.load_state_dict(init.optimizer)
    rng = np.random.default_rng(t.seed)
    losses = []
    model.train()
    for epoch in range(start, start + t.pretrain_epochs):
        for g in opt.param_groups:
            g["lr"] = lr_at(epoch, cfg, base_lr)
        total, count = 0.0, 0
        for rgb, th, _ in _batches(dataset, t.batch_size, rng):
            loss = model.prompt_loss(rgb, th)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * rgb.shape[0]
            count += rgb.shape[0]
        losses.append(total / count)
        if t.log_every and (epoch + 1) % t.log_every == 0:
            log.info("pretrain epoch %d loss %.5f", epoch + 1, losses[-1])
    return snapshot(model, "pretrain", start + t.pretrain_epochs, cfg, opt, {"pretrain_loss": losses})


# ------------------------------------------------------------------- phase 2


@dataclass
class EvalResult:
    counts: ConfusionCounts
    miou: float
    macc: float
    flip_prob: float


@torch.no_grad()
def evaluate_model(model: SemComSystem, pairs: list[ImagePair], cfg: RunConfig, flip_prob: float | None = None,
                   batch_size: int = 16) -> EvalResult:
    """Confusion counts accumulated over every pixel of ``pairs``.

    Sampling and channel noise use generators seeded from
    ``train.channel_seed`` so repeated calls agree exactly.
    """
    p = cfg.channel.eval_flip_prob if flip_prob is None else flip_prob
    was_training = model.training
    model.eval()
    n = cfg.data.num_classes
    counts = ConfusionCounts(np.zeros((n, n), dtype=np.int64))
    sample_gen = torch.Generator().manual_seed(cfg.train.channel_seed)
    channel_gen = torch.Generator().manual_seed(cfg.train.channel_seed + 1)
    hard_only = cfg.channel.eval_sampling == "argmax"
    for start in range(0, len(pairs), batch_size):
        rgb, th, lab = collate(pairs[start : start + batch_size])
        out = model(rgb, th, p, cfg.channel.temperature, sample_gen, channel_gen, hard_only=hard_only)
        counts = counts + confusion(predict_labels(out["logits"]), lab, n)
    model.train(was_training)
    lc = cfg.loss
    return EvalResult(counts, miou(counts, lc.include_background, lc.skip_empty), macc(counts, lc.include_background, lc.skip_empty), p)


def train_e2e(dataset: list[ImagePair], cfg: RunConfig, init: Checkpoint | None = None,
              val: list[ImagePair] | None = None) -> Checkpoint:
    """End-to-end training of {theta_r, theta_t, phi_s, phi_b, psi}.

    ``init`` supplies phase-1 encoders (and the rest of the initial state);
    ``None`` starts from a fresh seeded model, the no-pretrain ablation.
    When ``val`` is given and ``train.select_best`` is set, the returned
    state is the epoch with the best validation mIoU; the history records
    both the selected and the final epoch.
    """
    if not dataset:
        raise TrainingError("train needs a non-empty dataset")
    model = _start_model(cfg, init)
    t, c = cfg.train, cfg.channel
    resume = init is not None and init.phase == "train"
    start = init.epoch if resume else 0
    history: dict[str, Any] = {"train_loss": [], "val_miou": [], "lr": []}
    if resume:
        history.update({k: list(v) for k, v in init.history.items() if isinstance(v, list)})
    if t.epochs == 0:
        return snapshot(model, "train", start, cfg, history=history)
    opt = torch.optim.Adam(group_parameters(model, E2E_GROUPS), lr=t.lr)
    if resume and init.optimizer is not None:
        opt.load_state_dict(init.optimizer)
    rng = np.random.default_rng(t.seed + 1)
    sample_gen = torch.Generator().manual_seed(t.seed + 2)
    channel_gen = torch.Generator().manual_seed(t.channel_seed)
    best_state, best_miou, best_epoch = None, -1.0, None
    model.train()
    for epoch in range(start, start + t.epochs):
        lr = lr_at(epoch, cfg)
        for g in opt.param_groups:
            g["lr"] = lr
        tau = temperature_at(epoch, c.temperature, c.anneal, c.min_temperature)
        total, count = 0.0, 0
        for rgb, th, lab in _batches(dataset, t.batch_size, rng):
            out = model(rgb, th, c.flip_prob, tau, sample_gen, channel_gen, grad_mode=c.grad_mode)
            loss = combined_loss(out["logits"], lab, cfg.loss)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * rgb.shape[0]
            count += rgb.shape[0]
        history["train_loss"].append(total / count)
        history["lr"].append(lr)
        if val and t.select_best:
            score = evaluate_model(model, val, cfg).miou
            history["val_miou"].append(score)
            if score > best_miou:
                best_miou, best_epoch = score, epoch + 1
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
        if t.log_every and (epoch + 1) % t.log_every == 0:
            log.info("train epoch %d loss %.5f", epoch + 1, history["train_loss"][-1])
    final_epoch = start + t.epochs
    history["final_epoch"] = final_epoch
    ckpt = snapshot(model, "train", final_epoch, cfg, opt, history)
    if best_state is not None:
        history["best_epoch"] = best_epoch
        history["best_val_miou"] = best_miou
        history["final_val_miou"] = history["val_miou"][-1]
        ckpt.state = best_state
        ckpt.history = dict(history)
    return ckpt


def evaluate(pairs: list[ImagePair], ckpt: Checkpoint, cfg: RunConfig | None = None,
             flip_probs=(0.0,), run_id: str = "", variant: str = "", split: str = "test") -> list[dict]:
    """One metrics row per flip probability for the checkpoint's bit budget."""
    cfg = cfg or ckpt.config
    model = ckpt.model()
    d = cfg.data
    rows = []
    for p in flip_probs:
        res = evaluate_model(model, pairs, cfg, p)
        rows.append({
            "run_id": run_id,
            "variant": variant,
            "seed": cfg.train.seed,
            "split": split,
            "lb": cfg.channel.lb,
            "bpp": bpp(cfg.channel.lb, d.height, d.width),
            "flip_prob": p,
            "miou": res.miou,
            "macc": res.macc,
        })
    return rows


def timestamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime())
