"""Network wiring: shapes, decode behavior, gradient stop, and the
configuration smoke grid."""

import numpy as np
import pytest

import lixelkit.diffcore as dc
from lixelkit.diffcore import Tensor, grad_check
from lixelkit.heatmap import render_gaussian_3d
from lixelkit.meshgeom import LossWeights
from lixelkit.network import (
    CASCADE_MODES,
    MARGINALIZE_METHODS,
    MARGINALIZE_STAGES,
    CascadeModel,
    GroundTruthBatch,
    NetConfig,
    axis_gaussians,
    gaussian_volume_batch,
    head_parameter_count,
    parameter_report,
)

TINY = dict(num_joints=2, num_vertices=6, depth=8, feat_h=1, feat_w=1,
            in_channels=2, early_channels=4, trunk_channels=8,
            head_channels=4, fc_hidden=16)


def tiny_cfg(**over):
    kw = dict(TINY)
    kw.update(over)
    return NetConfig(**kw)


def tiny_batch(cfg, rng, batch=2):
    w, h = cfg.input_size
    images = rng.normal(size=(batch, cfg.in_channels, h, w))
    J, V = cfg.num_joints, cfg.num_vertices
    faces = np.array([[0, 1, 2], [2, 3, 4], [3, 4, 5]])
    reg = np.full((J, V), 1.0 / V)
    gt = GroundTruthBatch(
        joint_cells=rng.uniform(1, min(cfg.layout.dims) - 1, (batch, J, 3)),
        joint_mask=np.ones((batch, J, 3)),
        mesh_cells=rng.uniform(1, min(cfg.layout.dims) - 1, (batch, V, 3)),
        mesh_mask=np.ones((batch, V, 3)),
        faces=faces,
        regressor=reg,
    )
    return images, gt


def test_backbone_shapes_at_default_scale():
    cfg = NetConfig()
    assert cfg.input_size == (64, 64)
    model = CascadeModel(cfg, seed=0)
    images = np.zeros((1, cfg.in_channels, 64, 64))
    feats = model.backbone_forward(images)
    assert feats.early.shape == (1, cfg.early_channels, 32, 32)
    assert feats.deep.shape == (1, cfg.trunk_channels, 4, 4)


def test_backbone_rejects_indivisible_input():
    cfg = tiny_cfg()
    model = CascadeModel(cfg, seed=0)
    with pytest.raises(dc.ShapeError, match="stride"):
        model.backbone_forward(np.zeros((1, cfg.in_channels, 13, 13)))


def test_zero_image_gives_zero_features():
    cfg = tiny_cfg()
    model = CascadeModel(cfg, seed=0).eval()
    feats = model.backbone_forward(np.zeros((1, cfg.in_channels) + cfg.input_size))
    assert np.abs(feats.early.data).max() == 0.0
    assert np.abs(feats.deep.data).max() == 0.0


def test_fixed_seed_reproduces_features_bit_identically():
    cfg = tiny_cfg()
    rng = np.random.default_rng(7)
    images = rng.normal(size=(2, cfg.in_channels) + cfg.input_size[::-1])
    a = CascadeModel(cfg, seed=11).eval().backbone_forward(images)
    b = CascadeModel(cfg, seed=11).eval().backbone_forward(images)
    assert np.array_equal(a.deep.data, b.deep.data)
    assert np.array_equal(a.early.data, b.early.data)


def test_head_output_shapes():
    cfg = NetConfig()
    model = CascadeModel(cfg, seed=0)
    rng = np.random.default_rng(0)
    images = rng.normal(size=(2, cfg.in_channels, 64, 64))
    result, pose_logits = model.forward(images)
    hx, hy, hz = pose_logits
    J, V = cfg.num_joints, cfg.num_vertices
    assert hx.shape == (2, J, cfg.plane_w)
    assert hy.shape == (2, J, cfg.plane_h)
    assert hz.shape == (2, J, cfg.depth)
    mx, my, mz = result.mesh_logits
    assert mx.shape == (2, V, cfg.plane_w)
    assert my.shape == (2, V, cfg.plane_h)
    assert mz.shape == (2, V, cfg.depth)
    assert result.mesh_coords.shape == (2, V, 3)


def test_zero_logits_decode_to_volume_center():
    cfg = tiny_cfg(cascade="mesh_only")
    model = CascadeModel(cfg, seed=0).eval()
    # zero the mesh head output layers so every logit is exactly 0
    head = model.mesh_net.head
    for layer in (head.out_x, head.out_y, head.z.out):
        layer.weight.data[...] = 0.0
        layer.bias.data[...] = 0.0
    rng = np.random.default_rng(1)
    images = rng.normal(size=(2, cfg.in_channels) + cfg.input_size[::-1])
    result, _ = model.forward(images)
    W, H, D = cfg.layout.dims
    expected = np.array([(W - 1) / 2, (H - 1) / 2, (D - 1) / 2])
    assert np.abs(result.mesh_coords.data - expected).max() < 1e-12


def test_fuse_channel_arithmetic():
    cfg = tiny_cfg(num_joints=2, depth=8, early_channels=16, cascade="gt_pose_to_mesh")
    model = CascadeModel(cfg, seed=0)
    rng = np.random.default_rng(2)
    early = Tensor(rng.normal(size=(1, 16, cfg.plane_h, cfg.plane_w)))
    coords = rng.uniform(0, 4, (1, 2, 3))
    fused = model.fuse(coords, early)
    assert fused.shape[1] == 2 * 8 + 16


def test_fused_fast_path_matches_materialized_fuse():
    cfg = tiny_cfg(cascade="pose_then_mesh")
    model = CascadeModel(cfg, seed=3).eval()
    rng = np.random.default_rng(3)
    images = rng.normal(size=(2, cfg.in_channels) + cfg.input_size[::-1])
    early = model.stem(dc.Tensor(images))
    coords = rng.uniform(0, min(cfg.layout.dims) - 1, (2, cfg.num_joints, 3))
    _, slow_coords = model.mesh_net(model.fuse(coords, early))
    gz, gy, gx = axis_gaussians(coords, cfg.layout, cfg.sigma)
    plane = np.einsum("bnh,bnw->bnhw", gy, gx)
    _, fast_coords = model.mesh_net.forward_fused(gz, plane, early)
    assert np.abs(slow_coords.data - fast_coords.data).max() < 1e-10


def test_gaussian_volume_batch_matches_reference_renderer():
    cfg = tiny_cfg()
    rng = np.random.default_rng(4)
    coords = rng.uniform(0, 7, (2, 3, 3))
    fast = gaussian_volume_batch(coords, cfg.layout, 2.5)
    W, H, D = cfg.layout.dims
    for b in range(2):
        ref = render_gaussian_3d(coords[b], cfg.layout, 2.5)
        assert np.abs(fast[b].reshape(3, D, H, W) - ref).max() < 1e-12


def test_gradient_stop_pose_params_get_nothing_from_mesh_losses():
    cfg = tiny_cfg(cascade="pose_then_mesh")
    model = CascadeModel(cfg, seed=5)
    rng = np.random.default_rng(5)
    images, gt = tiny_batch(cfg, rng)
    model.zero_grad()
    res = model.forward_full(images, gt)
    mesh_total = dc.add(
        dc.add(dc.as_tensor(res.parts.pose_meshnet), dc.as_tensor(res.parts.vertex)),
        dc.add(dc.mul(dc.as_tensor(res.parts.normal), 0.1), dc.as_tensor(res.parts.edge)),
    )
    mesh_total.backward()
    for name, p in model.pose_net.named_parameters():
        if p.grad is not None:
            assert np.abs(p.grad).max() == 0.0, f"mesh loss leaked into {name}"

    model.zero_grad()
    res = model.forward_full(images, gt)
    dc.as_tensor(res.parts.pose_posenet).backward()
    leaf_grads = [np.abs(p.grad).max() for _, p in model.pose_net.named_parameters()
                  if p.grad is not None]
    assert leaf_grads and max(leaf_grads) > 0.0


def test_gt_pose_mode_renders_from_groundtruth():
    cfg = tiny_cfg(cascade="gt_pose_to_mesh")
    model = CascadeModel(cfg, seed=6)
    rng = np.random.default_rng(6)
    images, gt = tiny_batch(cfg, rng)
    res = model.forward_full(images, gt)
    assert res.pose_coords is None
    assert res.parts.pose_posenet == 0.0
    assert np.isfinite(res.total.data).all()
    with pytest.raises(ValueError, match="groundtruth"):
        model.forward(images)


def test_disabling_all_losses_gives_zero_gradients():
    cfg = tiny_cfg(cascade="pose_then_mesh")
    model = CascadeModel(cfg, seed=7)
    rng = np.random.default_rng(7)
    images, gt = tiny_batch(cfg, rng)
    weights = LossWeights(use_pose_posenet=False, use_pose_meshnet=False,
                          use_vertex=False, use_normal=False, use_edge=False)
    model.zero_grad()
    res = model.forward_full(images, gt, weights)
    assert res.total.item() == 0.0
    res.total.backward()
    for _, p in model.named_parameters():
        assert p.grad is None or np.abs(p.grad).max() == 0.0


@pytest.mark.parametrize("cascade", CASCADE_MODES)
@pytest.mark.parametrize("method", MARGINALIZE_METHODS)
@pytest.mark.parametrize("stage", MARGINALIZE_STAGES)
def test_configuration_grid_runs_forward_backward(cascade, method, stage):
    cfg = tiny_cfg(cascade=cascade, marginalize_method=method, marginalize_stage=stage)
    model = CascadeModel(cfg, seed=8)
    rng = np.random.default_rng(8)
    images, gt = tiny_batch(cfg, rng)
    model.zero_grad()
    res = model.forward_full(images, gt)
    assert np.isfinite(res.total.data).all()
    res.total.backward()
    grads = [p.grad for _, p in model.named_parameters() if p.grad is not None]
    assert grads and all(np.isfinite(g).all() for g in grads)


def test_head_outputs_finite_across_100_seeds():
    cfg = tiny_cfg(cascade="mesh_only")
    rng = np.random.default_rng(9)
    for seed in range(100):
        model = CascadeModel(cfg, seed=seed).eval()
        images = rng.normal(size=(1, cfg.in_channels) + cfg.input_size[::-1])
        result, _ = model.forward(images)
        assert np.isfinite(result.mesh_coords.data).all()


def test_lixel_head_has_fewer_parameters_than_coordinate_head():
    cfg = NetConfig()
    lixel = head_parameter_count(cfg, "lixel_conv")
    coord = head_parameter_count(cfg, "coord_fc")
    assert lixel < coord


def test_parameter_report_is_config_deterministic():
    cfg = NetConfig()
    a = parameter_report(CascadeModel(cfg, seed=0))
    b = parameter_report(CascadeModel(cfg, seed=99))
    assert a == b
    assert a["total"] == a["stem"] + a["pose_net"] + a["mesh_net"]


def test_voxel_config_refused_above_cell_limit():
    with pytest.raises(ValueError, match="cells"):
        NetConfig(num_vertices=6980, depth=64, feat_h=8, feat_w=8, head_kind="voxel")


def test_composite_forward_gradcheck_through_probe_weights():
    # finite differences through the full forward+loss on a probe slice
    cfg = tiny_cfg(cascade="pose_then_mesh")
    rng = np.random.default_rng(10)
    model = CascadeModel(cfg, seed=11)
    for m in model.modules():
        if hasattr(m, "momentum"):
            m.momentum = 0.0  # freeze BN buffers so f is pure
    images, gt = tiny_batch(cfg, rng)
    conv = model.mesh_net.fuse_conv.conv
    base = conv.weight.data.copy()

    def f(t):
        orig = conv.weight
        conv.weight = t
        try:
            return model.forward_full(images, gt).total
        finally:
            conv.weight = orig

    err = grad_check(f, Tensor(base), eps=1e-5)
    assert err < 1e-4
