import subprocess
import sys

import numpy as np
import pytest

from lal import io as lio
from lal.cli import main

TOY = """\
# small enough to train in a couple of seconds
network.depth = 2
network.base_channels = 4
train.epochs = 2
phantom.size = 16
phantom.seed = 5
"""


def tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "toy.cfg"
    path.write_text(TOY)
    return str(path)


def run_pipeline(root, cfg):
    assert main(["gen", "--config", cfg, "--count", "6", "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--config", cfg,
                 "--out", str(root / "model.ckpt"), "--log", str(root / "loss.csv")]) == 0
    assert main(["sweep", "--ckpt", str(root / "model.ckpt"),
                 "--image", str(root / "data" / "sample_0000" / "image.pgm"),
                 "--gt", str(root / "data" / "sample_0000" / "pixel.pgm"),
                 "--out", str(root / "sweep")]) == 0


def test_gen_layout_and_determinism(tmp_path, cfg):
    for name in ("a", "b"):
        assert main(["gen", "--config", cfg, "--count", "3", "--out", str(tmp_path / name)]) == 0
    a = tree_bytes(tmp_path / "a")
    assert sorted(a) == [f"sample_{i:04d}/{f}.pgm" for i in range(3)
                         for f in ("image", "pixel", "skeleton")]
    assert a == tree_bytes(tmp_path / "b")


def test_pipeline_outputs(tmp_path, cfg):
    run_pipeline(tmp_path, cfg)
    rows = lio.read_metrics_csv(tmp_path / "sweep" / "curves.csv")
    assert len(rows) == 101 and all(len(r) == 9 for r in rows)
    assert len(list((tmp_path / "sweep" / "masks").iterdir())) == 101
    assert (tmp_path / "sweep" / "masks" / "w_0.44.pgm").exists()
    assert (tmp_path / "loss.csv").read_text().count("\n") == 3
    assert lio.read_image(tmp_path / "sweep" / "uncertainty.pgm").shape == (16, 16)
    assert (tmp_path / "sweep" / "recommend.txt").read_text()


def test_pipeline_independent_of_thread_count(tmp_path, cfg, monkeypatch):
    for n in ("1", "3"):
        monkeypatch.setenv("LAL_THREADS", n)
        run_pipeline(tmp_path / n, cfg)
    assert tree_bytes(tmp_path / "1") == tree_bytes(tmp_path / "3")


def test_untrained_checkpoint_gives_degenerate_curve(tmp_path, cfg):
    from lal.network import NetworkConfig, build_unet_lal
    lio.save_checkpoint(tmp_path / "fresh.ckpt", build_unet_lal(NetworkConfig(depth=2, base_channels=4)))
    lio.write_image(tmp_path / "img.pgm", np.random.default_rng(0).random((16, 16)))
    assert main(["sweep", "--ckpt", str(tmp_path / "fresh.ckpt"), "--image", str(tmp_path / "img.pgm"),
                 "--out", str(tmp_path / "out"), "--step", "0.05"]) == 0
    assert "degenerate curve" in (tmp_path / "out" / "recommend.txt").read_text()
    assert not (tmp_path / "out" / "recommended.pgm").exists()


def test_denoise_command(tmp_path):
    m = np.zeros((8, 8), bool)
    m[0, 0] = True
    m[4, 1:7] = True
    u = np.zeros((8, 8))
    u[0, 0] = 0.9
    lio.write_mask(tmp_path / "m.pgm", m)
    lio.write_image(tmp_path / "u.pgm", u)
    assert main(["denoise", "--mask", str(tmp_path / "m.pgm"), "--uncertainty", str(tmp_path / "u.pgm"),
                 "--out", str(tmp_path / "d.pgm")]) == 0
    out = lio.read_mask(tmp_path / "d.pgm")
    assert not out[0, 0] and out[4, 1:7].all()


def test_eval_prints_record(tmp_path, capsys):
    m = np.zeros((16, 16), bool)
    m[6:9, 2:14] = True
    s = np.zeros_like(m)
    s[7, 2:14] = True
    lio.write_mask(tmp_path / "p.pgm", m)
    lio.write_mask(tmp_path / "s.pgm", s)
    assert main(["eval", "--pred", str(tmp_path / "p.pgm"), "--gt", str(tmp_path / "p.pgm"),
                 "--gt-skeleton", str(tmp_path / "s.pgm")]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "w,vdi,vd,vlf,fd,vc,ni,dice,accuracy"
    assert lines[1].endswith(",1.0,1.0")
    assert float(lines[2].split(",")[7]) == pytest.approx(2 * 12 / (36 + 12))


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "lal", "gen", "--count", "x"], capture_output=True)
    assert proc.returncode == 2


def test_runtime_error_exit_code(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lal", "sweep", "--ckpt", str(tmp_path / "nope"),
                           "--image", "x.pgm", "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 1
    assert "error" in proc.stderr


def test_unknown_config_key_is_runtime_error(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("network.depth = 2\nnetwork.width = 3\n")
    assert main(["gen", "--config", str(bad), "--count", "1", "--out", str(tmp_path / "o")]) == 1
    assert "bad.cfg:2: unknown key" in capsys.readouterr().err
