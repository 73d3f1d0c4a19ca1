"""Finite-difference gradient check on a tiny double-precision model."""
import numpy as np
import torch

import oracles
from smoothcert.model import DMAE, ModelConfig, backward
from smoothcert.objectives import ConsistencyHparams, consistency_loss, reconstruction_loss, rs_loss

TINY = ModelConfig(image_channels=1, image_height=8, image_width=8, patch_size=4, enc_dim=8, enc_depth=1,
                   enc_heads=2, dec_dim=8, dec_depth=1, dec_heads=2, num_classes=3)


def tiny_model(seed=0, scale=0.3):
    model = DMAE(TINY, seed=seed).double()
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            offset = 1.0 if "norm" in name and name.endswith("weight") else 0.0
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * scale + offset)
    return model


def _inputs(seed):
    rng = np.random.default_rng(seed)
    images = torch.as_tensor(rng.random((2, 1, 8, 8)))
    labels = torch.tensor([0, 2])
    noise = torch.as_tensor(rng.normal(0, 0.25, (2, 2, 1, 8, 8)))
    patches = torch.as_tensor(rng.random((2, 3, 16)))
    idx = torch.tensor([[0, 2, 3], [1, 2, 3]])
    target = torch.as_tensor(rng.random((2, 4, 16)))
    return images, labels, noise, patches, idx, target


def loss_functions(model, seed=0, lam=2.0, mu=0.5):
    """(autograd loss, finite-difference oracle loss) pairs, keyed by objective name."""
    images, labels, noise, patches, idx, target = _inputs(seed)
    h = ConsistencyHparams(lam=lam, mu=mu, m=2, sigma=0.25)

    def recon_oracle():
        pred = model.reconstruct(patches, idx)
        return ((pred - target) ** 2).sum() / pred.numel()

    def rs_oracle():
        probs = torch.softmax(model.logits(images + noise[0]), -1)
        return -torch.log(probs.gather(1, labels[:, None])).mean()

    def live_probs():
        flat = (images[None] + noise).reshape(-1, 1, 8, 8)
        return torch.softmax(model.logits(flat), -1).reshape(2, 2, -1)

    with torch.no_grad():
        fixed = live_probs()  # the detached average, frozen at the current parameters

    return {
        "reconstruction": (lambda: reconstruction_loss(model.reconstruct(patches, idx), target).total,
                           recon_oracle),
        "rs": (lambda: rs_loss(model, images, labels, 0.25, noise=noise[0]).total, rs_oracle),
        "consistency": (lambda: consistency_loss(model, images, labels, h, noise=noise).total,
                        lambda: oracles.consistency_reference(live_probs(), fixed, labels, lam, mu)),
    }


def check(model, loss, oracle, step=1e-5, threshold=1e-8):
    """Fraction of significant coordinates within relative error 1e-4, and their count."""
    grads = backward(loss(), model)
    names = [k for k, _ in model.named_parameters()]
    params = [p for _, p in model.named_parameters()]
    fd = oracles.finite_difference_grad(oracle, params, step)
    ad = torch.cat([grads[k].reshape(-1) for k in names])
    fd = torch.cat([g.reshape(-1) for g in fd])
    sig = (ad.abs() > threshold) | (fd.abs() > threshold)
    rel = (ad - fd).abs() / torch.maximum(ad.abs(), fd.abs()).clamp_min(1e-300)
    ok = rel[sig] <= 1e-4
    return float(ok.float().mean()) if sig.any() else 1.0, int(sig.sum()), float(rel[sig].max())
