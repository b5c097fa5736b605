import json
import subprocess
import sys

import numpy as np
import pytest

from isosr.cli import main
from isosr.formats import read_buffer, read_volume


def run(*argv):
    return main(list(argv))


class TestGenVolume:
    def test_writes_valid_volume_and_sidecar(self, tmp_path):
        out = tmp_path / "s.isvol"
        assert run("gen-volume", "--kind", "sphere", "--dims", "32",
                   "--seed", "1", "--out", str(out)) == 0
        vol = read_volume(out)
        assert vol.dims == (32, 32, 32)
        side = json.loads((tmp_path / "s.isvol.config.json").read_text())
        assert side["kind"] == "sphere" and side["seed"] == 1

    def test_idempotent_outputs(self, tmp_path):
        a = tmp_path / "a.isvol"
        b = tmp_path / "b.isvol"
        run("gen-volume", "--kind", "metaballs", "--dims", "16", "--seed", "9", "--out", str(a))
        run("gen-volume", "--kind", "metaballs", "--dims", "16", "--seed", "9", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_kind_is_data_error(self, tmp_path):
        assert run("gen-volume", "--kind", "nope", "--dims", "16",
                   "--out", str(tmp_path / "x.isvol")) == 2

    def test_print_config_writes_nothing(self, tmp_path, capsys):
        out = tmp_path / "x.isvol"
        assert run("gen-volume", "--kind", "sphere", "--dims", "16",
                   "--out", str(out), "--print-config") == 0
        assert not out.exists()
        cfg = json.loads(capsys.readouterr().out)
        assert cfg["command"] == "gen-volume"


class TestRender:
    def test_gbuffer_buffer_contract(self, tmp_path):
        vol = tmp_path / "v.isvol"
        run("gen-volume", "--kind", "sphere", "--dims", "24", "--seed", "0", "--out", str(vol))
        out = tmp_path / "v.isrb"
        assert run("render", "--vol", str(vol), "--res", "32", "--out", str(out)) == 0
        buf = read_buffer(out)
        assert buf.shape == (5, 32, 32)
        assert set(np.unique(buf[0])) <= {-1.0, 1.0}

    def test_ground_truth_six_channels(self, tmp_path):
        vol = tmp_path / "v.isvol"
        run("gen-volume", "--kind", "sphere", "--dims", "16", "--seed", "0", "--out", str(vol))
        out = tmp_path / "gt.isrb"
        assert run("render", "--vol", str(vol), "--res", "8", "--gt",
                   "--ao-samples", "4", "--out", str(out)) == 0
        buf = read_buffer(out)
        assert buf.shape == (6, 32, 32)
        assert buf[5].min() >= 0.0 and buf[5].max() <= 1.0

    def test_missing_volume_is_data_error(self, tmp_path):
        assert run("render", "--vol", str(tmp_path / "missing.isvol"),
                   "--out", str(tmp_path / "o.isrb")) == 2


class TestUsage:
    def test_help_exits_zero_for_every_subcommand(self, capsys):
        for sub in ("gen-volume", "render", "gen-dataset", "train", "eval",
                    "infer", "serve"):
            assert run(sub, "--help") == 0
            capsys.readouterr()

    def test_unknown_flag_is_usage_error(self, capsys):
        assert run("gen-volume", "--bogus") == 1
        assert run("not-a-command") == 1
        capsys.readouterr()

    def test_console_script_entry(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "isosr.cli", "--help"],
                             capture_output=True, text=True)
        assert res.returncode == 0
        assert "gen-volume" in res.stdout


@pytest.mark.slow
class TestSmokeChain:
    def test_full_chain(self, tmp_path, capsys):
        vol = tmp_path / "v.isvol"
        assert run("gen-volume", "--kind", "metaballs", "--dims", "24",
                   "--seed", "2", "--out", str(vol)) == 0
        ds_cfg = tmp_path / "ds.json"
        ds_cfg.write_text(json.dumps({
            "n_sequences": 2, "frames_per_seq": 2, "base_res": 24,
            "crop_size": 12, "n_crops": 4, "min_fill": 0.2, "seed": 3,
            "ao_samples": 4, "volumes": [str(vol)],
        }))
        ds_dir = tmp_path / "ds"
        assert run("gen-dataset", "--config", str(ds_cfg), "--out", str(ds_dir)) == 0
        assert (ds_dir / "manifest.json").exists()

        train_cfg = tmp_path / "train.json"
        train_cfg.write_text(json.dumps({
            "net": {"base_channels": 4, "residual_blocks": 1},
            "steps": 2, "batch_size": 2, "seed": 0, "val_interval": 0,
        }))
        ckpt = tmp_path / "net.isck"
        assert run("train", "--config", str(train_cfg), "--data", str(ds_dir),
                   "--out", str(ckpt)) == 0
        assert ckpt.exists()
        assert ckpt.with_name("net.metrics.jsonl").exists()

        assert run("eval", "--ckpt", str(ckpt), "--data", str(ds_dir)) == 0
        out = capsys.readouterr().out
        assert "psnr_net" in out and "psnr_bilinear" in out

        cam = tmp_path / "cam.json"
        cam.write_text(json.dumps({"orbit": {"frames": 2, "seed": 1}}))
        frames = tmp_path / "frames"
        assert run("infer", "--ckpt", str(ckpt), "--vol", str(vol),
                   "--path", str(cam), "--frames", "2", "--res", "16",
                   "--out", str(frames)) == 0
        assert (frames / "frame_000.png").exists()
        assert read_buffer(frames / "frame_001.est.isrb").shape == (6, 64, 64)
