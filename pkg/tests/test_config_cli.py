from pathlib import Path

import pytest
import yaml

from harness_util import TINY_MODEL, tiny_data
from smoothcert.harness.cli import main
from smoothcert.harness.config import ConfigError, config_from_dict, dump_config, load_config
from smoothcert.harness.data import save_dataset

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


class TestConfig:
    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="lamda"):
            config_from_dict(dict(mode="finetune", objective=dict(lamda=2.0), data=dict(train="x"),
                                  checkpoint=dict(from_scratch=True)))
        with pytest.raises(ConfigError, match="unknown"):
            config_from_dict(dict(mode="pretrain", data=dict(train="x"), extra=1))

    def test_types_checked(self):
        for bad in (dict(seed="1"), dict(hflip=1), dict(optimizer=dict(epochs=2.5)), dict(model=dict(enc_dim="8"))):
            with pytest.raises(ConfigError):
                config_from_dict(dict(mode="pretrain", data=dict(train="x"), **bad))

    def test_mode_requirements(self):
        with pytest.raises(ConfigError, match="data.train"):
            config_from_dict(dict(mode="pretrain"))
        with pytest.raises(ConfigError, match="init_from"):
            config_from_dict(dict(mode="certify", data=dict(test="t")))
        with pytest.raises(ConfigError):
            config_from_dict(dict(mode="finetune", data=dict(train="x")))
        with pytest.raises(ConfigError):
            config_from_dict(dict(mode="report"))
        with pytest.raises(ConfigError):
            config_from_dict(dict(mode="pretrain", data=dict(train="x"), optimizer=dict(layerwise_decay=0.0)))
        with pytest.raises(ConfigError):
            config_from_dict(dict(mode="pretrain", data=dict(train="x"), optimizer=dict(kind="sgd")))

    def test_mode_defaults(self):
        pre = config_from_dict(dict(mode="pretrain", data=dict(train="x")))
        ft = config_from_dict(dict(mode="finetune", data=dict(train="x"), checkpoint=dict(init_from="c")))
        assert (pre.optimizer.beta1, pre.optimizer.beta2) == (0.9, 0.95)
        assert (ft.optimizer.beta1, ft.optimizer.beta2) == (0.9, 0.999)
        assert pre.corruption.mask_ratio == 0.75 and pre.corruption.sigma == 0.25
        assert ft.objective.hparams().lam == 2.0 and ft.objective.hparams().mu == 0.5
        rs = config_from_dict(dict(mode="finetune", data=dict(train="x"), checkpoint=dict(init_from="c"),
                                   objective=dict(kind="rs")))
        assert (rs.objective.hparams().lam, rs.objective.hparams().mu, rs.objective.hparams().m) == (0, 0, 1)

    def test_dump_load_round_trip(self, tmp_path):
        cfg = config_from_dict(dict(mode="probe", data=dict(train="x"), checkpoint=dict(init_from="c"),
                                    objective=dict(sigma_range=[0.0, 0.75])))
        dump_config(cfg, tmp_path / "c.yaml")
        assert load_config(tmp_path / "c.yaml", mode="probe") == cfg

    def test_mode_conflict(self, tmp_path):
        (tmp_path / "c.yaml").write_text("mode: pretrain\ndata: {train: x}\n")
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.yaml", mode="certify")

    @pytest.mark.parametrize("name", ["pretrain", "finetune", "probe", "certify", "report"])
    def test_shipped_configs_parse(self, name):
        cfg = load_config(CONFIGS / f"{name}.yaml", mode=name)
        assert cfg.mode == name


def _write(path, data):
    path.write_text(yaml.safe_dump(data))
    return str(path)


def test_cli_end_to_end(tmp_path, capsys):
    save_dataset(tiny_data(0, 16), tmp_path / "train.scds")
    save_dataset(tiny_data(1, 6), tmp_path / "test.scds")
    common = dict(model=TINY_MODEL, data=dict(train=str(tmp_path / "train.scds"), test=str(tmp_path / "test.scds")))
    opt = dict(epochs=1, batch_size=8)
    pre = _write(tmp_path / "pre.yaml", dict(common, optimizer=opt))
    assert main(["pretrain", "--config", pre, "--out", str(tmp_path / "pre"), "-q"]) == 0
    ckpt = str(tmp_path / "pre" / "pretrain-final.sckp")
    assert (tmp_path / "pre" / "pretrain-config.yaml").exists()

    ft = _write(tmp_path / "ft.yaml", dict(common, optimizer=opt, objective=dict(kind="consistency")))
    assert main(["finetune", "--config", ft, "--init-from", ckpt, "--out", str(tmp_path / "ft"), "-q"]) == 0
    pr = _write(tmp_path / "pr.yaml", dict(common, optimizer=opt))
    assert main(["probe", "--config", pr, "--init-from", ckpt, "--out", str(tmp_path / "pr"), "-q"]) == 0

    cert = _write(tmp_path / "cert.yaml", dict(common, certify=dict(n0=10, n=100, batch=64, sigma=0.25)))
    args = ["certify", "--config", cert, "--init-from", str(tmp_path / "ft" / "finetune-final.sckp"), "-q"]
    assert main(args + ["--out", str(tmp_path / "c1"), "--seed", "4"]) == 0
    assert main(args + ["--out", str(tmp_path / "c2"), "--seed", "4"]) == 0
    rows = [[line.split("\t")[:5] for line in (tmp_path / d / "certify.tsv").read_text().splitlines()]
            for d in ("c1", "c2")]
    assert rows[0] == rows[1] and len(rows[0]) == 7

    rep = _write(tmp_path / "rep.yaml", dict(report=dict(inputs=[dict(path=str(tmp_path / "c1" / "certify.tsv"),
                                                                      sigma=0.25)], radii=[0.0, 0.1])))
    assert main(["report", "--config", rep, "--out", str(tmp_path / "rep"), "-q"]) == 0
    assert (tmp_path / "rep" / "report.csv").read_text().startswith("sigma,radius,certified_accuracy")
    assert "sigma" in capsys.readouterr().out


def test_cli_config_error(tmp_path, capsys):
    bad = _write(tmp_path / "bad.yaml", dict(data=dict(train="x"), optimiser=dict(epochs=1)))
    assert main(["pretrain", "--config", bad, "-q"]) == 2
    assert "optimiser" in capsys.readouterr().err
    assert main(["pretrain", "--config", str(tmp_path / "missing.yaml"), "-q"]) == 2


def test_cli_numeric_abort(tmp_path, capsys):
    save_dataset(tiny_data(0, 16), tmp_path / "train.scds")
    cfg = _write(tmp_path / "c.yaml", dict(model=TINY_MODEL, data=dict(train=str(tmp_path / "train.scds")),
                                           optimizer=dict(epochs=2, batch_size=8, base_lr=1e20, warmup_epochs=0)))
    assert main(["pretrain", "--config", cfg, "--out", str(tmp_path / "o"), "-q"]) == 3
    assert "numeric abort" in capsys.readouterr().err


def test_cli_usage_error():
    with pytest.raises(SystemExit):
        main(["train", "--config", "x"])
