"""Camera recovery chain: scaling, affine inversion, back-projection."""

import numpy as np
import pytest

from lixelkit.diffcore import Tensor, grad_check
import lixelkit.diffcore as dc
from lixelkit.camera import (
    CameraFrame,
    apply_affine,
    apply_inverse_affine,
    back_project,
    cells_to_crop_pixels,
    crop_pixels_to_cells,
    encode_points,
    project,
    recover_mesh,
)
from lixelkit.heatmap import HeatmapKind, HeatmapLayout

LAYOUT64 = HeatmapLayout(HeatmapKind.LIXEL_XYZ, 64, 64, 64)


def random_camera(rng):
    a = rng.normal(size=(2, 2)) * 0.3 + np.eye(2)
    while abs(np.linalg.det(a)) < 0.2:
        a = rng.normal(size=(2, 2)) * 0.3 + np.eye(2)
    affine = np.concatenate([a, rng.normal(size=(2, 1)) * 10], axis=1)
    return CameraFrame(
        fx=rng.uniform(400, 1500), fy=rng.uniform(400, 1500),
        cx=rng.uniform(100, 160), cy=rng.uniform(100, 160),
        crop_affine=affine, input_size=(256, 256),
        depth_span=2000.0, root_depth=rng.uniform(1500, 3000),
    )


def test_heatmap_center_maps_to_input_center_and_zero_depth():
    out = cells_to_crop_pixels(
        np.array([[32.0, 32.0, 32.0]]), LAYOUT64, (256, 256), 2000.0
    )
    assert np.allclose(out, [[128.0, 128.0, 0.0]])


def test_zero_depth_cell_maps_to_minus_half_span():
    out = cells_to_crop_pixels(np.array([[0.0, 0.0, 0.0]]), LAYOUT64, (256, 256), 2000.0)
    assert out[0, 2] == -1000.0


def test_cells_to_crop_matches_closed_form():
    rng = np.random.default_rng(0)
    coords = rng.uniform(0, 64, size=(50, 3))
    got = cells_to_crop_pixels(coords, LAYOUT64, (256, 192), 1234.0)
    ref = np.stack(
        [
            coords[:, 0] * 256 / 64,
            coords[:, 1] * 192 / 64,
            (coords[:, 2] / 64 - 0.5) * 1234.0,
        ],
        axis=1,
    )
    assert np.abs(got - ref).max() < 1e-12


def test_cells_crop_inverse_pair():
    rng = np.random.default_rng(1)
    coords = rng.uniform(0, 64, size=(20, 3))
    fwd = cells_to_crop_pixels(coords, LAYOUT64, (256, 256), 2000.0)
    back = crop_pixels_to_cells(fwd, LAYOUT64, (256, 256), 2000.0)
    assert np.abs(back - coords).max() < 1e-9


def test_identity_affine_is_identity():
    pts = np.array([[3.0, 4.0], [0.0, 1.0]])
    eye = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    assert np.allclose(apply_inverse_affine(pts, eye), pts)


def test_pure_scale_affine_divides():
    pts = np.array([[8.0, 6.0]])
    aff = np.array([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    assert np.allclose(apply_inverse_affine(pts, aff), [[4.0, 3.0]])


def test_affine_forward_inverse_roundtrip():
    rng = np.random.default_rng(2)
    for _ in range(10):
        cam = random_camera(rng)
        pts = rng.normal(size=(17, 2)) * 100
        fwd = apply_affine(pts, cam.crop_affine)
        back = apply_inverse_affine(fwd, cam.crop_affine)
        assert np.abs(back - pts).max() < 1e-9


def test_singular_affine_rejected_at_construction():
    with pytest.raises(ValueError, match="singular"):
        CameraFrame(fx=1.0, fy=1.0, cx=0.0, cy=0.0,
                    crop_affine=np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]))


def test_back_project_principal_point():
    cam = CameraFrame(fx=800.0, fy=800.0, cx=128.0, cy=128.0)
    out = back_project(np.array([[128.0, 128.0]]), np.array([1000.0]), cam)
    assert np.allclose(out, [[0.0, 0.0, 1000.0]])


def test_back_project_unit_tangent():
    cam = CameraFrame(fx=700.0, fy=700.0, cx=100.0, cy=100.0)
    out = back_project(np.array([[100.0 + 700.0, 100.0]]), np.array([500.0]), cam)
    assert np.allclose(out[0, 0], 500.0)


def test_project_back_project_roundtrip():
    rng = np.random.default_rng(3)
    cam = random_camera(rng)
    pts = np.stack(
        [
            rng.uniform(-300, 300, 40),
            rng.uniform(-300, 300, 40),
            rng.uniform(1500, 2500, 40),
        ],
        axis=1,
    )
    pix = project(pts, cam)
    back = back_project(pix, pts[:, 2], cam)
    assert np.abs(back - pts).max() < 1e-9


def test_full_recover_roundtrip_is_identity():
    rng = np.random.default_rng(4)
    total = 0
    for _ in range(10):
        cam = random_camera(rng)
        n = 100
        pts = np.stack(
            [
                rng.uniform(-250, 250, n),
                rng.uniform(-250, 250, n),
                cam.root_depth + rng.uniform(-900, 900, n),
            ],
            axis=1,
        )
        cells = encode_points(pts, cam, LAYOUT64)
        recovered = recover_mesh(cells, cam, LAYOUT64)
        assert np.abs(recovered - pts).max() < 1e-6
        total += n
    assert total == 1000


def test_root_vertex_at_z_center_recovers_root_depth():
    cam = CameraFrame.normalized((256, 256), depth_span=2000.0, root_depth=2345.0)
    cells = np.array([[32.0, 32.0, 32.0]])
    out = recover_mesh(cells, cam, LAYOUT64)
    assert abs(out[0, 2] - 2345.0) < 1e-9


def test_identity_crop_normalized_intrinsics_composition():
    cam = CameraFrame.normalized((256, 256), depth_span=2000.0, root_depth=2000.0)
    cells = np.array([[40.0, 10.0, 48.0]])
    crop = cells_to_crop_pixels(cells, LAYOUT64, cam.input_size, cam.depth_span)
    direct = back_project(crop[:, :2], crop[:, 2] + cam.root_depth, cam)
    via_recover = recover_mesh(cells, cam, LAYOUT64)
    assert np.abs(direct - via_recover).max() < 1e-12


def test_recover_mesh_is_differentiable():
    rng = np.random.default_rng(5)
    cam = random_camera(rng)
    target = rng.normal(size=(6, 3))

    def f(t):
        return dc.tsum(dc.mul(recover_mesh(t, cam, LAYOUT64), target)) * 1e-3

    cells0 = rng.uniform(8, 56, size=(6, 3))
    assert grad_check(f, Tensor(cells0)) < 1e-4


def test_normalized_intrinsics_are_deterministic():
    a = CameraFrame.normalized((256, 256))
    b = CameraFrame.normalized((256, 256))
    assert a.fx == b.fx == 256.0 * 5.0
    assert (a.cx, a.cy) == (128.0, 128.0)


def test_camera_json_roundtrip():
    rng = np.random.default_rng(6)
    cam = random_camera(rng)
    back = CameraFrame.from_json(cam.to_json())
    assert back.fx == cam.fx and back.fy == cam.fy
    assert back.cx == cam.cx and back.cy == cam.cy
    assert np.array_equal(back.crop_affine, cam.crop_affine)
    assert back.depth_span == cam.depth_span
    assert back.root_depth == cam.root_depth
    assert back.input_size == cam.input_size


def test_camera_json_field_names_are_fixed():
    import json

    cam = CameraFrame.normalized()
    d = json.loads(cam.to_json())
    for key in ("fx", "fy", "cx", "cy", "affine", "depth_span", "root_depth"):
        assert key in d
