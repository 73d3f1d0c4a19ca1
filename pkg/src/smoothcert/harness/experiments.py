"""Desk-scale comparisons on the synthetic stripe data.

``probe_comparison`` pits a denoising-masked pre-trained encoder against a
randomly initialised one under linear probing; ``finetune_comparison``
fine-tunes one pre-trained encoder with the consistency objective and with
plain noisy cross-entropy. Both certify the held-out split and return
certified-accuracy tables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..model import DMAE
from ..numerics import ConfidenceParams
from .checkpoint import Checkpoint
from .config import RunConfig, config_from_dict
from .data import Dataset, make_synthetic
from .evaluate import CertTable, certified_accuracy, certify_dataset, model_base_classifier
from .train import _checkpoint, model_from_checkpoint, run_finetune, run_pretrain, run_probe


@dataclass
class DeskSetup:
    num_classes: int = 4
    train_count: int = 512
    test_count: int = 256
    size: int = 16
    sigma: float = 0.25
    model: dict = field(default_factory=lambda: dict(
        enc_dim=48, enc_depth=3, enc_heads=4, dec_dim=32, dec_depth=1, dec_heads=4,
        patch_size=4, image_channels=1))
    pretrain: dict = field(default_factory=lambda: dict(epochs=100, warmup_epochs=5, base_lr=2e-3))
    probe: dict = field(default_factory=lambda: dict(epochs=30))
    finetune: dict = field(default_factory=lambda: dict(epochs=30))
    confidence: ConfidenceParams = field(default_factory=lambda: ConfidenceParams(alpha=0.001, n0=100, n=1000))
    cert_batch: int = 1100

    def data(self, seed: int) -> tuple[Dataset, Dataset]:
        train = make_synthetic(100 + seed, self.train_count, self.size, self.num_classes)
        test = make_synthetic(200 + seed, self.test_count, self.size, self.num_classes)
        return train, test

    def config(self, mode: str, seed: int, **sections) -> RunConfig:
        model = dict(self.model, image_height=self.size, image_width=self.size, num_classes=self.num_classes)
        model.update(sections.pop("model", {}))
        base = dict(mode=mode, seed=seed, model=model, data=dict(train="<memory>", test="<memory>"),
                    corruption=dict(sigma=self.sigma, mask_ratio=0.75),
                    checkpoint=dict(init_from="<memory>", out_dir=""))
        base.update(sections)
        return config_from_dict(base)


def pretrain(setup: DeskSetup, seed: int, train: Dataset) -> Checkpoint:
    cfg = setup.config("pretrain", seed, optimizer=setup.pretrain, checkpoint=dict(out_dir=""))
    return run_pretrain(cfg, train)


def random_init(setup: DeskSetup, seed: int) -> Checkpoint:
    cfg = setup.config("pretrain", seed, optimizer=setup.pretrain)
    return _checkpoint(DMAE(cfg.model, seed=seed), None, cfg, "pretrain", 0, [], False, 0)


def certify_checkpoint(setup: DeskSetup, ckpt: Checkpoint, test: Dataset, seed: int, radii) -> CertTable:
    model = model_from_checkpoint(ckpt)
    records = certify_dataset(model_base_classifier(model), test, setup.sigma, setup.confidence, seed,
                              batch=setup.cert_batch)
    return certified_accuracy(records, radii, sigma=setup.sigma)


def probe_comparison(setup: DeskSetup, seed: int, radii=(0.0, 0.25, 0.5), pretrained: Checkpoint | None = None):
    """Certified accuracy of linear probes on pre-trained vs random encoders."""
    train, test = setup.data(seed)
    pretrained = pretrained or pretrain(setup, seed, train)
    out = {}
    for name, init in (("dmae", pretrained), ("random", random_init(setup, seed))):
        cfg = setup.config("probe", seed, optimizer=setup.probe, objective=dict(kind="rs", sigma=setup.sigma),
                           model=dict(use_class_token=False, head_norm=True))
        probe = run_probe(cfg, train, init=init)
        out[name] = certify_checkpoint(setup, probe, test, seed, radii).accuracy[setup.sigma]
    return out


def finetune_comparison(setup: DeskSetup, seed: int, radii=None, pretrained: Checkpoint | None = None):
    """Certified accuracy after consistency vs plain cross-entropy fine-tuning."""
    if radii is None:
        radii = [0.0] + [setup.sigma * k for k in (0.5, 1.0, 1.5, 2.0)]
    train, test = setup.data(seed)
    pretrained = pretrained or pretrain(setup, seed, train)
    out = {}
    for kind in ("rs", "consistency"):
        cfg = setup.config("finetune", seed, optimizer=setup.finetune,
                           objective=dict(kind=kind, sigma=setup.sigma, lam=2.0, mu=0.5, m=2))
        ckpt = run_finetune(cfg, train, init=pretrained)
        out[kind] = certify_checkpoint(setup, ckpt, test, seed, radii).accuracy[setup.sigma]
    return out


def mean_over_seeds(results: list[dict]) -> dict:
    return {k: np.mean([r[k] for r in results], axis=0).tolist() for k in results[0]}
