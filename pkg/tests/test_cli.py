import csv
import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from vimpute_seg.cli import main

MICRO_CFG = """
run_name = microtest
seed = 3
preprocess.height = 32
preprocess.width = 32
preprocess.bins = 64
augment.p_aug = 0.5
augment.strauss_beta = 0.0039
augment.strauss_radius = 8
augment.strauss_steps = 100
augment.disk_radius_min = 2
augment.disk_radius_max = 6
augment.gaussian_sigma = 2
model.base_features = 2
model.latent_dim = 2
model.down_factors = 2,2,2,2
train.batch_size = 4
train.learning_rate = 0.001
train.max_epochs = 2
train.patience = 2
post.closing_radius = 2
post.min_area_frac = 0.005
"""


def write_micro_config(tmp_path, data_root, extra=""):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(MICRO_CFG + f"data_root = {data_root}\n" + extra)
    return cfg


def make_pool(tmp_path, n=8, seed=1):
    data = tmp_path / "data"
    assert main(["phantoms", "--n", str(n), "--size", "32x32", "--seed", str(seed),
                 "--out", str(data)]) == 0
    return data


def digest_tree(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*.png"))
    }


# ---------------------------------------------------------------- phantoms

def test_phantoms_writes_expected_layout(tmp_path):
    data = make_pool(tmp_path, n=3)
    assert len(list((data / "images").glob("*.png"))) == 3
    assert len(list((data / "masks").glob("*.png"))) == 3
    assert (data / "phantoms.args.txt").exists()


def test_phantoms_rerun_reproduces_bitwise(tmp_path):
    a = make_pool(tmp_path / "a", n=4, seed=9)
    b = make_pool(tmp_path / "b", n=4, seed=9)
    assert digest_tree(a) == digest_tree(b)


# ---------------------------------------------------------------- train

def test_train_smoke_writes_checkpoints_and_frozen_config(tmp_path, capsys):
    data = make_pool(tmp_path)
    cfg = write_micro_config(tmp_path, data)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "best.ckpt").exists()
    assert (out / "last.ckpt").exists()
    assert (out / "config.resolved.cfg").exists()
    assert "best validation loss" in capsys.readouterr().out


def test_train_override_caps_history_rows(tmp_path):
    data = make_pool(tmp_path)
    cfg = write_micro_config(tmp_path, data)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out),
                 "--override", "train.max_epochs=1"]) == 0
    rows = (out / "history.csv").read_text().strip().splitlines()
    assert len(rows) == 2   # header + exactly one epoch


def test_train_missing_data_root_mentions_path(tmp_path, capsys):
    cfg = write_micro_config(tmp_path, tmp_path / "nowhere")
    rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")])
    assert rc != 0
    assert "nowhere" in capsys.readouterr().err


def test_env_var_supplies_default_data_root(tmp_path, monkeypatch):
    data = make_pool(tmp_path)
    cfg = tmp_path / "env.cfg"
    cfg.write_text(MICRO_CFG + "train.max_epochs = 1\n")   # no data_root line
    monkeypatch.setenv("VIMPUTE_DATA_ROOT", str(data))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "env_run")]) == 0
    monkeypatch.delenv("VIMPUTE_DATA_ROOT")
    rc = main(["train", "--config", str(cfg), "--out", str(tmp_path / "env_run2")])
    assert rc != 0


def test_train_rerun_from_frozen_config_reproduces_history(tmp_path):
    data = make_pool(tmp_path)
    cfg = write_micro_config(tmp_path, data)
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["train", "--config", str(cfg), "--out", str(out1)]) == 0
    frozen = out1 / "config.resolved.cfg"
    assert main(["train", "--config", str(frozen), "--out", str(out2)]) == 0
    assert (out1 / "history.csv").read_text() == (out2 / "history.csv").read_text()


def test_locked_output_directory_is_refused(tmp_path, capsys):
    data = make_pool(tmp_path)
    cfg = write_micro_config(tmp_path, data)
    out = tmp_path / "run"
    out.mkdir()
    (out / ".vimpute.lock").write_text("123")
    rc = main(["train", "--config", str(cfg), "--out", str(out)])
    assert rc != 0
    assert "locked" in capsys.readouterr().err


# ---------------------------------------------------------------- segment

@pytest.fixture()
def trained_run(tmp_path):
    data = make_pool(tmp_path)
    cfg = write_micro_config(tmp_path, data)
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return data, cfg, out


def test_segment_writes_one_mask_per_input(trained_run, tmp_path):
    data, cfg, run = trained_run
    seg_out = tmp_path / "seg"
    assert main(["segment", "--checkpoint", str(run / "best.ckpt"),
                 "--input", str(data), "--out", str(seg_out),
                 "--config", str(run / "config.resolved.cfg")]) == 0
    masks = sorted(seg_out.glob("phantom_*.png"))
    assert len(masks) == 8
    arr = np.asarray(Image.open(masks[0]))
    assert set(np.unique(arr)) <= {0, 255}
    assert not list(seg_out.glob("*_overlay.png"))


def test_segment_rerun_is_bit_identical(trained_run, tmp_path):
    data, cfg, run = trained_run
    a, b = tmp_path / "seg_a", tmp_path / "seg_b"
    for out in (a, b):
        assert main(["segment", "--checkpoint", str(run / "best.ckpt"),
                     "--input", str(data), "--out", str(out),
                     "--config", str(run / "config.resolved.cfg")]) == 0
    assert digest_tree(a) == digest_tree(b)


def test_segment_overlay_present_iff_reference_given(trained_run, tmp_path):
    data, cfg, run = trained_run
    seg_out = tmp_path / "seg_ref"
    assert main(["segment", "--checkpoint", str(run / "best.ckpt"),
                 "--input", str(data), "--out", str(seg_out),
                 "--reference", str(data),
                 "--config", str(run / "config.resolved.cfg")]) == 0
    overlays = sorted(seg_out.glob("*_overlay.png"))
    assert len(overlays) == 8
    assert np.asarray(Image.open(overlays[0])).ndim == 3


def test_segment_corrupt_checkpoint_fails(trained_run, tmp_path, capsys):
    data, cfg, run = trained_run
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    rc = main(["segment", "--checkpoint", str(bad), "--input", str(data),
               "--out", str(tmp_path / "seg_bad")])
    assert rc != 0


# ---------------------------------------------------------------- evaluate

def test_evaluate_writes_reports(trained_run, tmp_path):
    data, cfg, run = trained_run
    ev = tmp_path / "eval"
    assert main(["evaluate", "--checkpoint", str(run / "best.ckpt"),
                 "--data", str(data), "--out", str(ev),
                 "--config", str(run / "config.resolved.cfg")]) == 0
    report = json.loads((ev / "report.json").read_text())
    assert len(report["per_image"]) == 8
    rows = list(csv.DictReader(open(ev / "report.csv")))
    assert len(rows) == 8


# ---------------------------------------------------------------- preview

def test_augment_preview_writes_panel(tmp_path):
    data = make_pool(tmp_path, n=1)
    cfg = write_micro_config(tmp_path, data)
    img = next((data / "images").glob("*.png"))
    out_png = tmp_path / "panel.png"
    assert main(["augment-preview", "--config", str(cfg), "--image", str(img),
                 "--seed", "5", "--out", str(out_png)]) == 0
    panel = np.asarray(Image.open(out_png))
    assert panel.shape[1] > 5 * 32   # five panels side by side


# ---------------------------------------------------------------- ablation

def make_split_root(tmp_path, seed=1):
    root = tmp_path / "bench"
    for name, n, s, frac in (("train", 8, seed, 0.0), ("val", 4, seed + 1, 0.0),
                             ("test", 3, seed + 2, 1.0)):
        assert main(["phantoms", "--n", str(n), "--size", "32x32", "--seed", str(s),
                     "--occluded-fraction", str(frac), "--out", str(root / name)]) == 0
    return root


def test_ablation_grid_and_summary(tmp_path):
    root = make_split_root(tmp_path)
    cfg = write_micro_config(tmp_path, root, extra="train.max_epochs = 1\n")
    out = tmp_path / "ablation"
    assert main(["ablation", "--config", str(cfg), "--out", str(out)]) == 0

    rows = list(csv.DictReader(open(out / "summary.csv")))
    assert len(rows) == 8
    assert {(r["model"], r["augmentation"]) for r in rows} == {
        (m, a) for m in ("baseline", "proposed")
        for a in ("standard", "block", "diffuse", "block_diffuse")
    }
    # each row's summary entries are recomputable from that row's report.csv
    for r in rows:
        per_image = list(csv.DictReader(open(out / f"{r['model']}_{r['augmentation']}" / "report.csv")))
        dices = np.array([float(e["dice"]) for e in per_image])
        assert float(r["dice_mean"]) == pytest.approx(dices.mean(), abs=1e-9)
        assert float(r["dice_std"]) == pytest.approx(dices.std(), abs=1e-9)
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["paired_ttests"]) == 8   # 4 rows x {dice, accuracy}
