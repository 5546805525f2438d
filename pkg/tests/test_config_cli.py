import json

import numpy as np
import pytest

from conftest import TINY_ARCH
from multirep import cli, config, data
from multirep.attacks import Norm


def test_default_mnist_arms():
    arms = config.default_arms_mnist()
    assert [a.name for a in arms] == ["pixel-linf", "pixel-l2", "pixel-l1",
                                      "dct-linf", "dct-l2", "dct-l1"]
    eps = {a.attack.norm: a.attack.epsilon for a in arms}
    assert eps == {Norm.LINF: 0.4, Norm.L2: 1.0, Norm.L1: 5.0}
    l1 = arms[2]
    assert (l1.attack.steps, l1.eval_attack.steps) == (20, 100)
    assert (arms[0].attack.steps, arms[0].eval_attack.steps) == (10, 40)


def test_cifar_arms_use_color_dct():
    arms = config.default_arms_cifar()
    assert arms[3].space.shape == (32, 32, 3)
    assert arms[5].attack.epsilon == pytest.approx(7.84)


def test_parse_full_config():
    cfg = config.parse_config("""
[data]
train_images = a.gz
train_labels = b.gz
subset = 500

[train]
trainer = greedy
T = 4
r = 2
h = 2
seeds = 0, 1, 2

[arm p]
space = pixel
norm = Linf
epsilon = 0.3
train_steps = 5

[arm d]
space = dct
norm = l2
epsilon = 1.0
""")
    assert cfg.trainer == "greedy" and cfg.subset == 500
    assert (cfg.mwu.T, cfg.mwu.r, cfg.mwu.h) == (4, 2, 2)
    assert cfg.seeds == [0, 1, 2]
    assert [a.name for a in cfg.arms] == ["p", "d"]
    assert cfg.arms[0].attack.steps == 5 and cfg.arms[1].attack.norm is Norm.L2


@pytest.mark.parametrize("text,field", [
    ("[train]\nT = twenty\n", "T"),
    ("[train]\ntrainer = sgd\n", "trainer"),
    ("[train]\nbogus = 1\n", "bogus"),
    ("[train]\nT = 2\nh = 3\n", "train"),
    ("[arm x]\nspace = pixel\nnorm = Linf\n", "epsilon"),
    ("[arm x]\nspace = fourier\nnorm = Linf\nepsilon = 1\n", "arm x"),
    ("[colors]\na = 1\n", "colors"),
    ("[train]\ntrainer = single\narm = nope\n", "arm"),
])
def test_malformed_config_names_field(text, field):
    with pytest.raises(config.ConfigError, match=field):
        config.parse_config(text)


def test_relative_paths_resolve_against_config(tmp_path):
    (tmp_path / "run.ini").write_text("[data]\ntrain_images = d/x.gz\ntrain_labels = d/y.gz\n")
    cfg = config.load_config(tmp_path / "run.ini")
    assert cfg.train_images == str(tmp_path / "d" / "x.gz")


def test_single_trainer_selects_arm():
    cfg = config.parse_config("[train]\ntrainer = single\narm = dct-linf\n")
    assert [a.name for a in cfg.training_arms()] == ["dct-linf"]


# --- CLI -------------------------------------------------------------------

@pytest.fixture
def run_dir(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(40, 8, 8), dtype=np.uint8)
    labels = (np.arange(40) % 4).astype(np.uint8)
    for stem, arr in [("tr-img", images), ("tr-lab", labels),
                      ("te-img", images[:12]), ("te-lab", labels[:12])]:
        data.write_idx(tmp_path / f"{stem}.gz", arr)
    (tmp_path / "run.ini").write_text(f"""
[data]
train_images = tr-img.gz
train_labels = tr-lab.gz
test_images = te-img.gz
test_labels = te-lab.gz

[model]
input_shape = 8 8 1
architecture = {json.dumps(list(TINY_ARCH))}

[train]
T = 3
r = 1
h = 2
batch_size = 16

[arm pix]
space = pixel
norm = Linf
epsilon = 0.1
train_steps = 2
eval_steps = 2

[arm dct]
space = dct
norm = L1
epsilon = 1.0
train_steps = 2
eval_steps = 2

[eval]
seeds = 0 1

[output]
dir = {tmp_path / "out"}
""")
    return tmp_path


def test_cli_train_evaluate_report(run_dir, capsys):
    assert cli.main(["train", "--config", str(run_dir / "run.ini"), "--seed", "3"]) == 0
    seed_dir = run_dir / "out" / "seed3"
    assert (seed_dir / "model.ckpt").exists()
    lines = (seed_dir / "trainlog.jsonl").read_text().splitlines()
    assert len(lines) == 3 and set(json.loads(lines[0])) >= {"p", "val_losses", "chosen_counts"}
    snaps = sorted(p.name for p in seed_dir.glob("snapshot_t*.ckpt"))
    assert snaps == ["snapshot_t2.ckpt", "snapshot_t3.ckpt"]

    out = run_dir / "eval"
    rc = cli.main(["evaluate", "--config", str(run_dir / "run.ini"), "--out", str(out),
                   "--checkpoint", str(seed_dir / "snapshot_t2.ckpt"),
                   "--checkpoint", str(seed_dir / "snapshot_t3.ckpt")])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["seeds"] == [0, 1] and "union_accuracy" in report["metrics"]

    rc = cli.main(["report", str(out / "report.json"), str(out / "report.json"),
                   "--out", str(run_dir / "merged")])
    assert rc == 0
    assert len(json.loads((run_dir / "merged" / "report.json").read_text())["seeds"]) == 4


def test_cli_rejects_malformed_config(tmp_path, capsys):
    (tmp_path / "bad.ini").write_text("[train]\nT = lots\n")
    assert cli.main(["train", "--config", str(tmp_path / "bad.ini")]) != 0
    assert "T" in capsys.readouterr().err


def test_cli_verify_game(tmp_path):
    out = tmp_path / "game.json"
    rc = cli.main(["verify-game", "--games", "3", "--eps", "0.3", "--convex-traces", "2",
                   "--out", str(out)])
    assert rc == 0
    payload = json.loads(out.read_text())
    assert payload["pass"] and len(payload["games"]) == 6
