import json

import pytest

from msemcom.cli import build_parser, main, resolve_config
from msemcom.config import save_config
from msemcom.reporting import read_metrics

from conftest import small_config


@pytest.fixture
def cfg_file(tmp_path):
    cfg = small_config(**{"train.epochs": 1, "train.pretrain_epochs": 1})
    path = tmp_path / "cfg.json"
    save_config(cfg, path)
    return path


def run(*argv):
    return main([str(a) for a in argv])


class TestErrors:
    def test_unknown_flag_is_usage_error(self, cfg_file):
        with pytest.raises(SystemExit) as info:
            run("train", "--config", cfg_file, "--bogus")
        assert info.value.code == 2

    def test_missing_config_names_path(self, tmp_path, capsys):
        missing = tmp_path / "absent.json"
        assert run("train", "--config", missing) == 1
        assert str(missing) in capsys.readouterr().err

    def test_validation_names_field(self, cfg_file, tmp_path, capsys):
        assert run("train", "--config", cfg_file, "--set", "fusion.heads=5", "--out-dir", tmp_path / "o") == 1
        assert "fusion.heads" in capsys.readouterr().err

    def test_bad_flip_prob(self, cfg_file, tmp_path, capsys):
        assert run("train", "--config", cfg_file, "--flip-prob", "2", "--out-dir", tmp_path / "o") == 1
        assert "channel.flip_prob" in capsys.readouterr().err

    def test_empty_sweep_grid(self, cfg_file, tmp_path):
        assert run("sweep", "--config", cfg_file, "--bpp", "--out-dir", tmp_path / "o") == 1

    def test_missing_checkpoint(self, tmp_path):
        assert run("eval", "--checkpoint", tmp_path / "x.ckpt") == 1


class TestPrecedence:
    FLAGS = [
        ("--seed", "7", "train.seed", 7),
        ("--lb", "128", "channel.lb", 128),
        ("--temperature", "0.5", "channel.temperature", 0.5),
        ("--modality", "rgb", "train.modality", "rgb"),
        ("--epochs", "9", "train.epochs", 9),
        ("--pretrain-epochs", "4", "train.pretrain_epochs", 4),
        ("--flip-prob", "0.1", "channel.flip_prob", 0.1),
        ("--out-dir", "somewhere", "out_dir", "somewhere"),
    ]

    @staticmethod
    def get(cfg, key):
        obj = cfg
        for part in key.split("."):
            obj = getattr(obj, part)
        return obj

    @pytest.mark.parametrize("flag,text,key,value", FLAGS)
    def test_flag_beats_file_beats_default(self, tmp_path, flag, text, key, value):
        parser = build_parser()
        default = self.get(resolve_config(parser.parse_args(["train"])), key)
        file_value = {"train.seed": 3, "channel.lb": 32, "channel.temperature": 2.0, "train.modality": "thermal",
                      "train.epochs": 5, "train.pretrain_epochs": 6, "channel.flip_prob": 0.2, "out_dir": "fromfile"}[key]
        assert file_value != default and value != file_value
        base = small_config()
        path = tmp_path / "c.json"
        save_config(base, path)
        data = json.loads(path.read_text())
        data[key] = file_value
        path.write_text(json.dumps(data))
        assert self.get(resolve_config(parser.parse_args(["train", "--config", str(path)])), key) == file_value
        assert self.get(resolve_config(parser.parse_args(["train", "--config", str(path), flag, text])), key) == value

    def test_no_pretrain_flag(self, cfg_file):
        args = build_parser().parse_args(["train", "--config", str(cfg_file), "--no-pretrain"])
        assert resolve_config(args).train.pretrain is False

    def test_set_beats_flag(self, cfg_file):
        args = build_parser().parse_args(["train", "--config", str(cfg_file), "--seed", "3", "--set", "train.seed=4"])
        assert resolve_config(args).train.seed == 4

    def test_lb_flag_repicks_grid(self, cfg_file):
        cfg = resolve_config(build_parser().parse_args(["train", "--config", str(cfg_file), "--lb", "4"]))
        assert cfg.decoder.grid_h == 2


class TestCommands:
    def test_gen_data(self, cfg_file, tmp_path):
        out = tmp_path / "d"
        assert run("gen-data", "--config", cfg_file, "--out-dir", out) == 0
        assert (out / "manifest.json").is_file() and len(list((out / "rgb").glob("*.png"))) == 8
        man = json.loads((out / "run.json").read_text())
        assert man["command"] == "gen-data"

    def test_train_no_pretrain_then_eval(self, cfg_file, tmp_path):
        out = tmp_path / "t"
        assert run("train", "--config", cfg_file, "--no-pretrain", "--out-dir", out) == 0
        man = json.loads((out / "run.json").read_text())
        assert man["ablation"]["mode"] == "no-pretrain"
        assert not (out / "pretrain.ckpt").exists()
        for key in ("config", "seeds", "code_hash", "started", "finished", "outputs", "config_hash"):
            assert key in man
        listed = {o["path"] for o in man["outputs"]}
        assert listed == {"model.ckpt", "metrics.csv"}
        assert run("eval", "--checkpoint", out / "model.ckpt", "--flip-prob", "0") == 0
        rows = read_metrics(out / "eval_test.csv")
        assert len(rows) == 1 and rows[0]["flip_prob"] == 0.0

    def test_train_with_pretrain_records_mode(self, cfg_file, tmp_path):
        out = tmp_path / "t"
        assert run("train", "--config", cfg_file, "--out-dir", out) == 0
        man = json.loads((out / "run.json").read_text())
        assert man["ablation"]["mode"] == "pretrain"
        assert {o["path"] for o in man["outputs"]} == {"pretrain.ckpt", "model.ckpt", "metrics.csv"}

    def test_pretrain_then_train_from_init(self, cfg_file, tmp_path):
        assert run("pretrain", "--config", cfg_file, "--out-dir", tmp_path / "p") == 0
        assert run("train", "--config", cfg_file, "--init", tmp_path / "p" / "pretrain.ckpt", "--out-dir", tmp_path / "t") == 0
        man = json.loads((tmp_path / "t" / "run.json").read_text())
        assert man["ablation"]["mode"] == "from-checkpoint"

    def test_replay_from_manifest(self, cfg_file, tmp_path):
        assert run("train", "--config", cfg_file, "--seed", "5", "--out-dir", tmp_path / "a") == 0
        assert run("train", "--config", tmp_path / "a" / "run.json", "--out-dir", tmp_path / "b") == 0
        a, b = (read_metrics(tmp_path / d / "metrics.csv") for d in "ab")
        assert [dict(r, run_id="") for r in a] == [dict(r, run_id="") for r in b]
        man_b = json.loads((tmp_path / "b" / "run.json").read_text())
        assert man_b["seeds"]["seed"] == 5

    def test_sweep_rows_and_plots(self, cfg_file, tmp_path):
        out = tmp_path / "s"
        code = run("sweep", "--config", cfg_file, "--bpp", "0.00390625", "0.015625", "--modality", "rgb", "--out-dir", out)
        assert code == 0
        rows = read_metrics(out / "sweep.csv")
        assert [(r["variant"], r["lb"]) for r in rows] == [("rgb", 4), ("rgb", 16)]
        assert (out / "sweep_miou.png").is_file() and (out / "sweep_macc.png").is_file()
        man = json.loads((out / "run.json").read_text())
        kinds = sorted(o["kind"] for o in man["outputs"])
        assert kinds == ["figure", "figure", "metrics", "run-manifest", "run-manifest"]

    def test_sweep_both_includes_ablation(self, cfg_file, tmp_path):
        out = tmp_path / "s"
        assert run("sweep", "--config", cfg_file, "--bpp", "0.015625", "--modality", "both", "--out-dir", out) == 0
        assert sorted(r["variant"] for r in read_metrics(out / "sweep.csv")) == ["both", "both+pretrain"]

    def test_plot(self, cfg_file, tmp_path):
        out = tmp_path / "s"
        run("sweep", "--config", cfg_file, "--bpp", "0.015625", "--modality", "thermal", "--out-dir", out)
        assert run("plot", out / "sweep.csv", "--out-dir", tmp_path / "p") == 0
        assert (tmp_path / "p" / "sweep_miou.png").read_bytes() == (out / "sweep_miou.png").read_bytes()
