"""Pre-training, robust fine-tuning and linear probing loops.

All randomness comes from counter-based streams derived from the run seed:
``child(1, epoch)`` orders the data, ``child(2, epoch, step)`` feeds a batch's
augmentation, noise and masks. Any step is therefore reproducible from
``(seed, epoch, step)`` alone, which is what makes resuming exact.
"""
from __future__ import annotations

import hashlib
import logging
import math
from pathlib import Path

import numpy as np
import torch

from ..corruption import corrupt
from ..model import DMAE, ModelConfig, NumericError, check_finite_params
from ..numerics import RngStream
from ..objectives import consistency_loss, reconstruction_loss, rs_loss, sample_sigma
from .checkpoint import (Checkpoint, build_model, load_checkpoint, load_model_weights, model_state,
                         optimizer_state, restore_optimizer, save_checkpoint)
from .config import ConfigError, RunConfig
from .data import Dataset, load_dataset

log = logging.getLogger(__name__)


class NumericAbort(RuntimeError):
    """Training diverged; the last good checkpoint is left in place."""


def lr_at(step: int, steps_per_epoch: int, opt) -> float:
    """Linear warmup to ``base_lr``, then half-cosine decay to zero."""
    total = opt.epochs * steps_per_epoch
    warm = opt.warmup_epochs * steps_per_epoch
    if step < warm:
        return opt.base_lr * step / warm
    if total <= warm:
        return opt.base_lr
    return opt.base_lr * 0.5 * (1.0 + math.cos(math.pi * (step - warm) / (total - warm)))


def layer_id(name: str, num_layers: int) -> int:
    """Layer index for layer-wise lr decay: embeddings 0, block i -> i + 1, everything else L."""
    if name.startswith(("patch_embed.", "cls_token")):
        return 0
    if name.startswith("blocks."):
        return int(name.split(".")[1]) + 1
    return num_layers


def param_groups(model: DMAE, opt, names=None) -> list[dict]:
    """AdamW groups keyed by (layer, decay); ``lr_scale`` = decay ** (L - layer).

    Biases, norm weights and learned tokens get no weight decay.
    """
    num_layers = model.cfg.enc_depth + 1
    groups: dict[tuple, dict] = {}
    for name, p in model.named_parameters():
        if not p.requires_grad or (names is not None and name not in names):
            continue
        layer = layer_id(name, num_layers)
        no_decay = p.ndim == 1 or name.endswith(("_token",)) or ".norm" in name or name.startswith("norm.")
        key = (layer, not no_decay)
        g = groups.setdefault(key, {
            "params": [], "names": [], "layer": layer,
            "lr_scale": opt.layerwise_decay ** (num_layers - layer),
            "weight_decay": 0.0 if no_decay else opt.weight_decay,
        })
        g["params"].append(p)
        g["names"].append(name)
    return [groups[k] for k in sorted(groups)]


def make_optimizer(model: DMAE, opt, names=None) -> torch.optim.AdamW:
    groups = param_groups(model, opt, names)
    for g in groups:
        g["lr"] = opt.base_lr * g["lr_scale"]
    return torch.optim.AdamW(groups, lr=opt.base_lr, betas=(opt.beta1, opt.beta2))


def set_lr(optimizer, lr: float):
    for g in optimizer.param_groups:
        g["lr"] = lr * g["lr_scale"]


def params_digest(params) -> str:
    h = hashlib.sha256()
    for name, p in params:
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


def _maybe_flip(images: np.ndarray, rng: RngStream, enabled: bool) -> np.ndarray:
    if not enabled:
        return images
    flip = rng.uniform(len(images)) < 0.5
    out = images.copy()
    out[flip] = out[flip][..., ::-1]
    return out


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.argsort(RngStream(seed).child(1, epoch).uniform(n), kind="stable")


def _batches(n: int, batch_size: int):
    return [(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]


def _checkpoint(model, optimizer, cfg: RunConfig, kind: str, epoch: int, history: list,
                skip_decoder: bool, step: int) -> Checkpoint:
    tensors = model_state(model, skip_decoder=skip_decoder)
    meta = {
        "kind": kind, "epoch": epoch, "seed": cfg.seed, "global_step": step,
        "model": model.cfg.to_dict(), "config": cfg.to_dict(), "loss_history": history,
    }
    if optimizer is not None:
        opt_tensors, opt_step = optimizer_state(optimizer, model)
        tensors.update(opt_tensors)
        meta["optim_step"] = opt_step
    return Checkpoint(meta, tensors)


def _load_train(cfg: RunConfig, dataset: Dataset | None) -> Dataset:
    ds = dataset if dataset is not None else load_dataset(cfg.data.train)
    if ds.image_shape != (cfg.model.image_channels, cfg.model.image_height, cfg.model.image_width):
        raise ConfigError(f"dataset images {ds.image_shape} do not match the model config")
    return ds


def _train_loop(cfg: RunConfig, model: DMAE, optimizer, ds: Dataset, step_loss, kind: str,
                skip_decoder: bool, start_epoch: int = 0, history=None, out_dir=None,
                after_step=None) -> Checkpoint:
    opt = cfg.optimizer
    n = len(ds)
    spans = _batches(n, opt.batch_size)
    history = list(history or [])
    out_dir = Path(out_dir or cfg.checkpoint.out_dir)
    step = start_epoch * len(spans)
    for epoch in range(start_epoch, opt.epochs):
        order = _epoch_order(cfg.seed, epoch, n)
        total = 0.0
        for b, (lo, hi) in enumerate(spans):
            set_lr(optimizer, lr_at(step, len(spans), opt))
            idx = order[lo:hi]
            rng = RngStream(cfg.seed).child(2, epoch, b)
            images = _maybe_flip(ds.images[idx], rng, cfg.hflip)
            loss = step_loss(images, ds.labels[idx], rng)
            value = float(loss.total.detach())
            if not math.isfinite(value):
                raise NumericAbort(f"non-finite loss at epoch {epoch}, step {b}")
            optimizer.zero_grad(set_to_none=True)
            loss.total.backward()
            for name, p in model.named_parameters():
                if p.grad is not None and not torch.isfinite(p.grad).all():
                    raise NumericAbort(f"non-finite gradient in {name} at epoch {epoch}, step {b}")
            if after_step is not None:
                after_step(model)
            optimizer.step()
            total += value * (hi - lo)
            step += 1
        try:
            check_finite_params(model)
        except NumericError as exc:
            raise NumericAbort(str(exc)) from exc
        history.append(total / max(n, 1))
        log.info("%s epoch %d loss %.6f", kind, epoch, history[-1])
        ckpt = _checkpoint(model, optimizer, cfg, kind, epoch + 1, history, skip_decoder, step)
        if cfg.checkpoint.out_dir:
            save_checkpoint(ckpt, out_dir / f"{kind}-last.sckp")
            if cfg.checkpoint.keep_every and (epoch + 1) % cfg.checkpoint.keep_every == 0:
                save_checkpoint(ckpt, out_dir / f"{kind}-epoch{epoch + 1:04d}.sckp")
    ckpt = _checkpoint(model, optimizer, cfg, kind, opt.epochs, history, skip_decoder, step)
    if cfg.checkpoint.out_dir:
        save_checkpoint(ckpt, out_dir / f"{kind}-final.sckp")
    return ckpt


def run_pretrain(cfg: RunConfig, dataset: Dataset | None = None, init: Checkpoint | None = None) -> Checkpoint:
    """Reconstruct clean images from noisy, masked ones with an all-patch MSE."""
    ds = _load_train(cfg, dataset)
    if init is None and cfg.checkpoint.init_from:
        init = load_checkpoint(cfg.checkpoint.init_from)
    model = DMAE(cfg.model, seed=cfg.seed)
    start_epoch, history = 0, []
    if init is not None:
        load_model_weights(model, init.model_tensors(), allow_missing=("head", "cls_token"))
    optimizer = make_optimizer(model, cfg.optimizer, names=_pretrain_names(model))
    if init is not None and cfg.checkpoint.resume:
        restore_optimizer(optimizer, model, init)
        start_epoch = int(init.meta["epoch"])
        history = list(init.meta.get("loss_history", []))
    spec = cfg.corruption_spec

    def step_loss(images, labels, rng):
        vis, idx, tgt = [], [], []
        for img in images:
            visible, _, target = corrupt(img.astype(np.float64), spec, rng)
            vis.append(visible.values)
            idx.append(visible.indices)
            tgt.append(target.values)
        pred = model.reconstruct(torch.as_tensor(np.stack(vis), dtype=torch.float32),
                                 torch.as_tensor(np.stack(idx), dtype=torch.long))
        return reconstruction_loss(pred, torch.as_tensor(np.stack(tgt), dtype=torch.float32))

    model.train()
    return _train_loop(cfg, model, optimizer, ds, step_loss, "pretrain", skip_decoder=False,
                       start_epoch=start_epoch, history=history)


def _pretrain_names(model: DMAE) -> set:
    # the classification head and class token play no part in reconstruction
    return {k for k, _ in model.named_parameters() if not k.startswith(("head", "cls_token"))}


def _finetune_names(model: DMAE) -> set:
    return {k for k, _ in model.named_parameters() if not k.startswith(("dec_", "mask_token"))}


def run_finetune(cfg: RunConfig, dataset: Dataset | None = None, init: Checkpoint | None = None) -> Checkpoint:
    """Train encoder and head on noisy inputs with the consistency or plain CE objective."""
    ds = _load_train(cfg, dataset)
    if init is None and cfg.checkpoint.init_from:
        init = load_checkpoint(cfg.checkpoint.init_from)
    if init is None and not cfg.checkpoint.from_scratch:
        raise ConfigError("finetune needs a pre-trained checkpoint or checkpoint.from_scratch: true")
    model = DMAE(cfg.model, seed=cfg.seed)
    if init is not None:
        load_model_weights(model, init.model_tensors(), allow_missing=("head", "cls_token", "dec_", "mask_token"))
    optimizer = make_optimizer(model, cfg.optimizer, names=_finetune_names(model))
    h = cfg.objective.hparams()
    use_rs = cfg.objective.kind == "rs"

    def step_loss(images, labels, rng):
        x = torch.as_tensor(images, dtype=torch.float32)
        y = torch.as_tensor(labels, dtype=torch.long)
        sigma = sample_sigma(h, rng, len(images))
        if use_rs:
            return rs_loss(model, x, y, sigma, rng)
        return consistency_loss(model, x, y, h, rng, sigma=sigma)

    model.train()
    return _train_loop(cfg, model, optimizer, ds, step_loss, "finetune", skip_decoder=True)


def run_probe(cfg: RunConfig, dataset: Dataset | None = None, init: Checkpoint | None = None) -> Checkpoint:
    """Linear probe: non-affine batch norm + linear head on frozen, mean-pooled encoder features.

    The head is trained with cross-entropy on Gaussian-noised inputs at
    ``objective.sigma``. Encoder gradients are asserted to be zero each step.
    """
    ds = _load_train(cfg, dataset)
    if init is None:
        init = load_checkpoint(cfg.checkpoint.init_from)
    model = DMAE(ModelConfig(**dict(cfg.model.to_dict(), head_norm=True, use_class_token=False)), seed=cfg.seed)
    load_model_weights(model, init.model_tensors(), allow_missing=("head", "cls_token", "dec_", "mask_token"))
    head_names = {k for k, _ in model.named_parameters() if k.startswith("head")}
    for name, p in model.named_parameters():
        p.requires_grad_(name in head_names)
    optimizer = make_optimizer(model, cfg.optimizer, names=head_names)
    encoder = model.encoder_parameters()
    before = params_digest(encoder)
    h = cfg.objective.hparams()

    def step_loss(images, labels, rng):
        x = torch.as_tensor(images, dtype=torch.float32)
        sigma = sample_sigma(h, rng, len(images))
        return rs_loss(model, x, torch.as_tensor(labels, dtype=torch.long), sigma, rng)

    def frozen_check(m):
        for name, p in encoder:
            assert p.grad is None or not p.grad.any(), f"encoder parameter {name} received a gradient"

    model.train()
    ckpt = _train_loop(cfg, model, optimizer, ds, step_loss, "probe", skip_decoder=True, after_step=frozen_check)
    assert params_digest(encoder) == before, "probe changed encoder parameters"
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint) -> DMAE:
    model = build_model(ckpt)
    model.eval()
    return model
