import json
import subprocess
import sys

import pytest

from conftest import tiny_config
from xmodal4d.cli import main


def _config_file(tmp_path, **overrides):
    path = tmp_path / "tiny.cfg"
    path.write_text(tiny_config(**overrides).to_text())
    return str(path)


def test_metrics_hand_example(capsys):
    assert main(["metrics", "--pred", "0,1,1,1", "--gt", "0,0,1,1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["acc"] == 75.0 and out["f1_10"] == 100.0
    assert set(out) == {"acc", "edit", "f1_10", "f1_25", "f1_50", "miou"}


def test_metrics_reads_files(tmp_path, capsys):
    (tmp_path / "p.txt").write_text("0\n1\n2\n")
    (tmp_path / "g.txt").write_text("0\n1\n2\n")
    assert main(["metrics", "--pred", str(tmp_path / "p.txt"), "--gt", str(tmp_path / "g.txt"), "--num-classes", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["miou"] == 100.0


def test_usage_and_config_errors_exit_1(tmp_path):
    assert main([]) == 1
    assert main(["train", "--set", "nonsense=1"]) == 1
    assert main(["train", "--set", "epochs"]) == 1
    assert main(["metrics", "--pred", "0,1", "--gt", "0"]) == 1
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt")]) == 1
    assert main(["gradcheck", "--only", "no_such_op"]) == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numerical_failure_exits_2(tmp_path):
    cfg = _config_file(tmp_path, base_lr=1e300, grad_clip=0.0, epochs=3)
    assert main(["train", "--config", cfg, "--quiet", "--out", str(tmp_path / "run")]) == 2


def test_synth_train_eval_roundtrip(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "data"), "--count", "2", "--set", "scene.frames=8"]) == 0
    assert (tmp_path / "data" / "scene_0001" / "meta.txt").exists()
    cfg = _config_file(tmp_path)
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--quiet", "--out", str(run), "--seed", "4"]) == 0
    assert "seed=4" in (run / "config.txt").read_text().splitlines()
    capsys.readouterr()
    assert main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"), "--mode", "dual"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out) == {"point", "image"}
    assert main(["eval", "--checkpoint", str(run / "checkpoint.ckpt"), "--config", cfg, "--set", "dim=16"]) == 1


def test_ablate_writes_table(tmp_path, capsys):
    cfg = _config_file(tmp_path)
    assert main(["ablate", "--config", cfg, "--axis", "use_mask", "--quiet", "--out", str(tmp_path / "t.json")]) == 0
    rows = json.loads((tmp_path / "t.json").read_text())
    assert [r["variant"] for r in rows] == ["unmasked", "masked"]


def test_gradcheck_subcommand(capsys):
    assert main(["gradcheck", "--seeds", "2", "--only", "add", "tac"]) == 0
    assert "worst relative error" in capsys.readouterr().out


def test_console_script_entry_point():
    proc = subprocess.run([sys.executable, "-m", "xmodal4d.cli", "metrics", "--pred", "1 1", "--gt", "1 1"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and json.loads(proc.stdout)["acc"] == 100.0
