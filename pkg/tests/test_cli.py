"""End-to-end command-line checks (tiny budgets)."""

import json
import os

import numpy as np
import pytest

from lixelkit.cli import main
from lixelkit.heatmap import load_heatmap_dump

TINY_CONFIG = """
net.num_joints = 8
net.num_vertices = 182
net.depth = 16
net.feat_h = 2
net.feat_w = 2
net.in_channels = 8
net.early_channels = 8
net.trunk_channels = 16
net.head_channels = 8
net.fc_hidden = 32
train.steps = 6
train.eval_every = 3
train.train_samples = 16
train.eval_samples = 8
train.batch_size = 4
"""


@pytest.fixture()
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY_CONFIG)
    return str(path)


def test_memtable_prints_and_writes(tmp_path, capsys):
    assert main(["memtable", "--V", "6980", "--D", "64", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "1,340,160" in out
    assert "1,829,765,120" in out
    csv = (tmp_path / "memtable.csv").read_text()
    assert "lixel_xyz,6980,64,1340160" in csv
    assert (tmp_path / "figures" / "memtable.png").exists()


def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "all checks passed" in out


def test_render_writes_dump_and_png(tmp_path, capsys):
    spec = {
        "coords": [[3.0, 4.0, 5.0], [1.0, 1.0, 1.0]],
        "layout": {"width": 8, "height": 8, "depth": 8},
        "sigma": 1.5,
    }
    coords_path = tmp_path / "coords.json"
    coords_path.write_text(json.dumps(spec))
    out_path = tmp_path / "vol.lxhm"
    assert main(["render", "--coords", str(coords_path), "--out", str(out_path),
                 "--png"]) == 0
    values, layout, sigma = load_heatmap_dump(out_path)
    assert values.shape == (2, 8, 8, 8)
    assert sigma == 1.5
    assert values[0, 5, 4, 3] == 1.0
    assert (tmp_path / "figures" / "heatmap_slices.png").exists()


def test_train_dataset_eval_pipeline(tmp_path, tiny_config, capsys):
    run_dir = tmp_path / "run"
    assert main(["train", "--config", tiny_config, "--seed", "0",
                 "--out", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert "final held-out MPJPE" in out
    assert "decode-noise floor" in out
    checkpoint = run_dir / "checkpoint_s0.lxck"
    assert checkpoint.exists()
    assert (run_dir / "metrics_s0.csv").exists()

    data_path = tmp_path / "data.npz"
    assert main(["dataset", "--config", tiny_config, "--seed", "3", "--n", "6",
                 "--out", str(data_path)]) == 0
    capsys.readouterr()

    eval_dir = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data_path),
                 "--out", str(eval_dir)]) == 0
    out = capsys.readouterr().out
    assert "MPJPE" in out
    assert (eval_dir / "eval.json").exists()
    assert (eval_dir / "pred_sample0.obj").exists()
    assert (eval_dir / "gt_sample0.obj").exists()
    summary = json.loads((eval_dir / "eval.json").read_text())
    assert np.isfinite(summary["mpjpe"])


def test_ablate_layout_small(tmp_path, tiny_config):
    out_dir = tmp_path / "layout"
    # layout study overrides depth/feat internally to the 8-cell setting
    assert main(["ablate", "layout", "--config", tiny_config,
                 "--out", str(out_dir)]) == 0
    summary = json.loads((out_dir / "summary.json").read_text())
    body = {e["kind"]: e["cells"] for e in summary["paper_scale_body_cells"]}
    assert body["lixel_xyz"] == 1_340_160
    assert body["voxel_xyz"] == 1_829_765_120
    assert (out_dir / "metrics.csv").exists()
    assert (out_dir / "figures" / "trend.png").exists()
    assert (out_dir / "figures" / "memtable.png").exists()
