"""Small configurations shared by the harness tests."""
from smoothcert.harness.config import config_from_dict
from smoothcert.harness.data import make_synthetic

TINY_MODEL = dict(image_channels=1, image_height=8, image_width=8, patch_size=4, enc_dim=8, enc_depth=2,
                  enc_heads=2, dec_dim=8, dec_depth=1, dec_heads=2, num_classes=2)


def tiny_data(seed=0, count=16, classes=2):
    return make_synthetic(seed, count, size=8, num_classes=classes)


def tiny_config(mode, out_dir="", **sections):
    base = dict(mode=mode, seed=3, model=dict(TINY_MODEL), data=dict(train="<memory>", test="<memory>"),
                checkpoint=dict(out_dir=out_dir),
                optimizer=dict(epochs=2, batch_size=8, warmup_epochs=1))
    if mode in ("finetune", "probe", "certify"):
        # the caller hands the initial checkpoint over in memory
        base["checkpoint"]["init_from"] = "<memory>"
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            base[key] = dict(base[key], **value)
        else:
            base[key] = value
    return config_from_dict(base)
