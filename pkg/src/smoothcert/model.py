"""Tiny asymmetric ViT encoder-decoder with a classification head.

The encoder sees noisy visible patches plus fixed 2-D sin-cos positions
indexed by each patch's grid position. The decoder receives encoder latents
at visible positions and a shared mask token elsewhere, and predicts pixels
for every patch. Classification runs the encoder on the full, unmasked grid.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .corruption import MaskPattern, PatchSequence, grid_for


class NumericError(RuntimeError):
    """Non-finite values where finite ones are required."""


@dataclass
class ModelConfig:
    image_channels: int = 1
    image_height: int = 16
    image_width: int = 16
    patch_size: int = 4
    enc_dim: int = 64
    enc_depth: int = 4
    enc_heads: int = 4
    dec_dim: int = 32
    dec_depth: int = 2
    dec_heads: int = 4
    num_classes: int = 2
    use_class_token: bool = True  # pooling: class token if True, else mean over patches
    head_norm: bool = False  # non-affine batch norm in front of the head (linear probing)

    def __post_init__(self):
        grid_for(self.image_height, self.image_width, self.patch_size)
        for dim, heads, tag in ((self.enc_dim, self.enc_heads, "enc"), (self.dec_dim, self.dec_heads, "dec")):
            if dim % heads:
                raise ValueError(f"{tag}_dim={dim} not divisible by {tag}_heads={heads}")
            if dim % 4:
                raise ValueError(f"{tag}_dim={dim} must be a multiple of 4 for 2-D sin-cos positions")
        if self.num_classes < 1 or self.enc_depth < 0 or self.dec_depth < 0:
            raise ValueError("num_classes must be >= 1 and depths >= 0")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return grid_for(self.image_height, self.image_width, self.patch_size)

    @property
    def num_patches(self) -> int:
        r, c = self.grid_shape
        return r * c

    @property
    def patch_dim(self) -> int:
        return self.image_channels * self.patch_size ** 2

    def to_dict(self) -> dict:
        return asdict(self)


def sincos_pos_embed(dim: int, grid_shape: tuple[int, int]) -> np.ndarray:
    """Fixed 2-D sin-cos table of shape (rows * cols, dim), row-major."""
    rows, cols = grid_shape
    omega = 1.0 / 10000 ** (np.arange(dim // 4, dtype=np.float64) / (dim / 4.0))
    gy, gx = np.meshgrid(np.arange(rows, dtype=np.float64), np.arange(cols, dtype=np.float64), indexing="ij")

    def one_axis(pos):
        out = np.outer(pos.reshape(-1), omega)
        return np.concatenate([np.sin(out), np.cos(out)], axis=1)

    # first half encodes the column, second half the row (MAE convention)
    return np.concatenate([one_axis(gx), one_axis(gy)], axis=1)


def patchify_batch(images: torch.Tensor, patch_size: int) -> torch.Tensor:
    """(B, C, H, W) -> (B, N, C * p * p); same ordering as :func:`corruption.patchify`."""
    b, c, h, w = images.shape
    rows, cols = grid_for(h, w, patch_size)
    p = patch_size
    x = images.reshape(b, c, rows, p, cols, p).permute(0, 2, 4, 1, 3, 5)
    return x.reshape(b, rows * cols, c * p * p)


def unpatchify_batch(patches: torch.Tensor, cfg: ModelConfig) -> torch.Tensor:
    b = patches.shape[0]
    rows, cols = cfg.grid_shape
    p, c = cfg.patch_size, cfg.image_channels
    x = patches.reshape(b, rows, cols, c, p, p).permute(0, 3, 1, 4, 2, 5)
    return x.reshape(b, c, rows * p, cols * p)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x):
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = torch.softmax((q @ k.transpose(-2, -1)) * self.scale, dim=-1)
        return self.proj((attn @ v).transpose(1, 2).reshape(b, n, d))


class Block(nn.Module):
    """Pre-norm transformer block with a 4x GELU feed-forward."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, 4 * dim)
        self.fc2 = nn.Linear(4 * dim, dim)

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x))))


class DMAE(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        n, pd = cfg.num_patches, cfg.patch_dim

        self.patch_embed = nn.Linear(pd, cfg.enc_dim)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, cfg.enc_dim))
        self.register_buffer("enc_pos", torch.tensor(sincos_pos_embed(cfg.enc_dim, cfg.grid_shape),
                                                     dtype=torch.float32), persistent=False)
        self.blocks = nn.ModuleList(Block(cfg.enc_dim, cfg.enc_heads) for _ in range(cfg.enc_depth))
        self.norm = nn.LayerNorm(cfg.enc_dim)

        self.dec_embed = nn.Linear(cfg.enc_dim, cfg.dec_dim)
        self.mask_token = nn.Parameter(torch.zeros(1, 1, cfg.dec_dim))
        self.register_buffer("dec_pos", torch.tensor(sincos_pos_embed(cfg.dec_dim, cfg.grid_shape),
                                                     dtype=torch.float32), persistent=False)
        self.dec_blocks = nn.ModuleList(Block(cfg.dec_dim, cfg.dec_heads) for _ in range(cfg.dec_depth))
        self.dec_norm = nn.LayerNorm(cfg.dec_dim)
        self.dec_pred = nn.Linear(cfg.dec_dim, pd)

        self.head_bn = nn.BatchNorm1d(cfg.enc_dim, affine=False, eps=1e-6) if cfg.head_norm else None
        self.head = nn.Linear(cfg.enc_dim, cfg.num_classes)
        self.reset_parameters(seed)
        assert self.enc_pos.shape[0] == n

    def reset_parameters(self, seed: int = 0):
        gen = torch.Generator().manual_seed(int(seed))
        with torch.no_grad():
            for m in self.modules():
                if isinstance(m, nn.Linear):
                    nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04, generator=gen)
                    nn.init.zeros_(m.bias)
                elif isinstance(m, nn.LayerNorm):
                    nn.init.ones_(m.weight)
                    nn.init.zeros_(m.bias)
            nn.init.trunc_normal_(self.cls_token, std=0.02, a=-0.04, b=0.04, generator=gen)
            nn.init.trunc_normal_(self.mask_token, std=0.02, a=-0.04, b=0.04, generator=gen)

    def _check_patches(self, patches, indices):
        cfg = self.cfg
        if patches.ndim != 3 or patches.shape[-1] != cfg.patch_dim:
            raise ValueError(f"expected (B, N, {cfg.patch_dim}) patches, got {tuple(patches.shape)}")
        if indices.shape != patches.shape[:2]:
            raise ValueError(f"indices {tuple(indices.shape)} do not match patches {tuple(patches.shape)}")
        if indices.numel() and (int(indices.min()) < 0 or int(indices.max()) >= cfg.num_patches):
            raise ValueError("patch index outside the grid")

    def forward_encoder(self, patches: torch.Tensor, indices: torch.Tensor, with_cls: bool = False):
        """(B, Nv, patch_dim) patches at grid ``indices`` -> (B, Nv [+1], enc_dim).

        With ``with_cls`` the class token is prepended (position 0, no positional term).
        """
        self._check_patches(patches, indices)
        x = self.patch_embed(patches) + self.enc_pos.to(patches.dtype)[indices]
        if with_cls:
            x = torch.cat([self.cls_token.expand(x.shape[0], -1, -1).to(x.dtype), x], dim=1)
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def forward_decoder(self, latents: torch.Tensor, indices: torch.Tensor):
        """Latents of visible patches at ``indices`` -> pixel predictions for all patches."""
        b, nv, _ = latents.shape
        if indices.shape != (b, nv):
            raise ValueError(f"{nv} latents per example but indices have shape {tuple(indices.shape)}")
        n = self.cfg.num_patches
        x = self.dec_embed(latents)
        full = self.mask_token.to(x.dtype).expand(b, n, -1).clone()
        full = full.scatter(1, indices.unsqueeze(-1).expand(-1, -1, x.shape[-1]), x)
        full = full + self.dec_pos.to(x.dtype)
        for blk in self.dec_blocks:
            full = blk(full)
        return self.dec_pred(self.dec_norm(full))

    def reconstruct(self, patches: torch.Tensor, indices: torch.Tensor):
        return self.forward_decoder(self.forward_encoder(patches, indices), indices)

    def features(self, images: torch.Tensor) -> torch.Tensor:
        """Pooled encoder representation of full, unmasked images."""
        cfg = self.cfg
        expect = (cfg.image_channels, cfg.image_height, cfg.image_width)
        if images.ndim != 4 or tuple(images.shape[1:]) != expect:
            raise ValueError(f"expected images of shape (B, {expect}), got {tuple(images.shape)}")
        patches = patchify_batch(images, cfg.patch_size)
        idx = torch.arange(cfg.num_patches).expand(images.shape[0], -1)
        h = self.forward_encoder(patches, idx, with_cls=cfg.use_class_token)
        return h[:, 0] if cfg.use_class_token else h.mean(dim=1)

    def logits(self, images: torch.Tensor, features: torch.Tensor | None = None) -> torch.Tensor:
        h = self.features(images) if features is None else features
        if self.head_bn is not None:
            h = self.head_bn(h)
        return self.head(h)

    def forward(self, images):
        return self.logits(images)

    def encoder_parameters(self):
        """Named parameters that belong to the encoder (everything the probe freezes)."""
        return [(k, v) for k, v in self.named_parameters()
                if k.startswith(("patch_embed.", "cls_token", "blocks.", "norm."))]

    def decoder_parameters(self):
        return [(k, v) for k, v in self.named_parameters()
                if k.startswith(("dec_", "mask_token"))]


# single-example entry points ------------------------------------------------

def _as_tensor(x, model: DMAE):
    dtype = next(model.parameters()).dtype
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def encode(visible: PatchSequence, model: DMAE, with_cls: bool = False) -> torch.Tensor:
    patches = _as_tensor(visible.values, model).unsqueeze(0)
    idx = torch.as_tensor(np.asarray(visible.indices), dtype=torch.long).unsqueeze(0)
    return model.forward_encoder(patches, idx, with_cls=with_cls)[0]


def decode(latents: torch.Tensor, mask: MaskPattern, model: DMAE) -> PatchSequence:
    vis = mask.visible_indices
    if latents.shape[0] != len(vis):
        raise ValueError(f"{latents.shape[0]} latents for {len(vis)} visible patches")
    idx = torch.as_tensor(vis, dtype=torch.long).unsqueeze(0)
    out = model.forward_decoder(latents.unsqueeze(0), idx)[0]
    cfg = model.cfg
    return PatchSequence(out.detach().numpy(), cfg.grid_shape, cfg.patch_size, cfg.image_channels)


def classify(image: np.ndarray, model: DMAE) -> np.ndarray:
    """Softmax class distribution for one (C, H, W) image."""
    with torch.no_grad():
        logits = model.logits(_as_tensor(image, model).unsqueeze(0))[0]
    return torch.softmax(logits.double(), dim=-1).numpy()


def backward(loss: torch.Tensor, model: nn.Module) -> dict[str, torch.Tensor]:
    """Gradients of ``loss`` for every parameter, keyed by parameter name.

    Parameters that ``loss`` does not depend on get zero gradients. Raises
    :class:`NumericError` naming the first tensor with a non-finite gradient.
    """
    params = dict(model.named_parameters())
    if loss.requires_grad:
        names = [k for k, v in params.items() if v.requires_grad]
        grads = torch.autograd.grad(loss, [params[k] for k in names], allow_unused=True)
        found = dict(zip(names, grads))
    else:
        found = {}
    out = {}
    for name, p in params.items():
        g = found.get(name)
        g = torch.zeros_like(p) if g is None else g
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name}")
        out[name] = g
    return out


def check_finite_params(model: nn.Module):
    for name, p in model.named_parameters():
        if not torch.isfinite(p).all():
            raise NumericError(f"non-finite values in parameter {name}")


def param_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
