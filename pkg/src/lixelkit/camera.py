"""Recover camera-frame millimeter geometry from heatmap cells.

The chain: cell coordinates scale to crop pixels, the inverse of the
crop/resize affine returns to original-image pixels, the z cell index
de-discretizes to a root-relative depth over a fixed span, and the
pinhole model back-projects. Every stage is a pure function usable on
plain arrays or autodiff tensors (the recovery is differentiable with
respect to the cell coordinates).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .heatmap import HeatmapLayout

# Virtual focal length multiplier of the normalized-intrinsics
# fallback: fx = fy = sqrt(w * h) * NORMALIZED_FOCAL_K. Any fixed
# constant only rescales X and Y by a common factor at fixed depth.
NORMALIZED_FOCAL_K = 5.0


@dataclass
class CameraFrame:
    """Pinhole intrinsics, crop affine, depth window and root depth.

    crop_affine is the 2x3 matrix mapping original-image pixels to
    network-input pixels; depth_span is the millimeter range covered by
    the D depth cells, centered on root_depth.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    crop_affine: np.ndarray = field(
        default_factory=lambda: np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    )
    input_size: tuple = (256, 256)
    depth_span: float = 2000.0
    root_depth: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.depth_span <= 0:
            raise ValueError(f"depth_span must be positive, got {self.depth_span}")
        self.crop_affine = np.asarray(self.crop_affine, dtype=np.float64).reshape(2, 3)
        a = self.crop_affine[:, :2]
        if abs(np.linalg.det(a)) < 1e-12:
            raise ValueError("crop affine is singular (2x2 block not invertible)")
        self.input_size = (int(self.input_size[0]), int(self.input_size[1]))

    @classmethod
    def normalized(cls, input_size=(256, 256), depth_span=2000.0, root_depth=0.0):
        """Deterministic stand-in when real intrinsics are unavailable:
        principal point at the input center, focal sqrt(w*h) * k."""
        w, h = input_size
        f = float(np.sqrt(w * h) * NORMALIZED_FOCAL_K)
        return cls(fx=f, fy=f, cx=w / 2.0, cy=h / 2.0,
                   input_size=input_size, depth_span=depth_span,
                   root_depth=root_depth)

    def to_json(self):
        return json.dumps(
            {
                "fx": self.fx,
                "fy": self.fy,
                "cx": self.cx,
                "cy": self.cy,
                "affine": self.crop_affine.tolist(),
                "input_size": list(self.input_size),
                "depth_span": self.depth_span,
                "root_depth": self.root_depth,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            fx=d["fx"], fy=d["fy"], cx=d["cx"], cy=d["cy"],
            crop_affine=np.array(d["affine"]),
            input_size=tuple(d.get("input_size", (256, 256))),
            depth_span=d["depth_span"], root_depth=d["root_depth"],
        )


def _wrap(x):
    if isinstance(x, Tensor):
        return x, False
    return Tensor(np.asarray(x, dtype=np.float64)), True


def _cols(points3):
    return points3[:, 0:1], points3[:, 1:2], points3[:, 2:3]


def cells_to_crop_pixels(coords, layout: HeatmapLayout, input_size, depth_span):
    """Scale x/y cells to crop pixels; map z cells to relative depth.

    x and y scale by input_size over the heatmap extent; the z cell
    index maps to (z / D - 0.5) * depth_span millimeters relative to
    the root.
    """
    t, plain = _wrap(coords)
    W, H, D = layout.dims
    in_w, in_h = input_size
    x, y, z = _cols(t)
    out = dc.concat(
        [
            dc.mul(x, in_w / W),
            dc.mul(y, in_h / H),
            dc.mul(dc.sub(dc.mul(z, 1.0 / D), 0.5), depth_span),
        ],
        axis=1,
    )
    return out.data if plain else out


def crop_pixels_to_cells(points, layout: HeatmapLayout, input_size, depth_span):
    """Exact inverse of cells_to_crop_pixels (encoding direction)."""
    t, plain = _wrap(points)
    W, H, D = layout.dims
    in_w, in_h = input_size
    x, y, z_rel = _cols(t)
    out = dc.concat(
        [
            dc.mul(x, W / in_w),
            dc.mul(y, H / in_h),
            dc.mul(dc.add(dc.mul(z_rel, 1.0 / depth_span), 0.5), D),
        ],
        axis=1,
    )
    return out.data if plain else out


def apply_affine(points, affine):
    """Forward 2x3 affine on [N, 2] points (crop/resize direction)."""
    t, plain = _wrap(points)
    a = np.asarray(affine, dtype=np.float64).reshape(2, 3)
    out = dc.add(dc.matmul(t, a[:, :2].T), a[:, 2])
    return out.data if plain else out


def apply_inverse_affine(points, affine):
    """Map crop pixels back to original-image pixels."""
    t, plain = _wrap(points)
    a = np.asarray(affine, dtype=np.float64).reshape(2, 3)
    inv = np.linalg.inv(a[:, :2])
    out = dc.matmul(dc.sub(t, a[:, 2]), inv.T)
    return out.data if plain else out


def back_project(points_2d, depth, cam: CameraFrame):
    """Pinhole back-projection of original-image pixels at given depth.

    X = (u - cx) Z / fx, Y = (v - cy) Z / fy, Z = depth (millimeters).
    """
    t, plain = _wrap(points_2d)
    d, dplain = _wrap(depth)
    z = dc.reshape(d, (t.shape[0], 1))
    u, v = t[:, 0:1], t[:, 1:2]
    x = dc.mul(dc.mul(dc.sub(u, cam.cx), z), 1.0 / cam.fx)
    y = dc.mul(dc.mul(dc.sub(v, cam.cy), z), 1.0 / cam.fy)
    out = dc.concat([x, y, z], axis=1)
    return out.data if (plain and dplain) else out


def project(points_3d, cam: CameraFrame):
    """Forward pinhole projection to original-image pixels (oracle and
    dataset-encoding direction; numpy only)."""
    p = np.asarray(points_3d, dtype=np.float64)
    z = p[:, 2]
    u = cam.fx * p[:, 0] / z + cam.cx
    v = cam.fy * p[:, 1] / z + cam.cy
    return np.stack([u, v], axis=1)


def encode_points(points_3d, cam: CameraFrame, layout: HeatmapLayout):
    """Project camera-frame millimeters into heatmap cells: the exact
    inverse of recover_mesh for points inside the frustum and window."""
    p = np.asarray(points_3d, dtype=np.float64)
    pix = project(p, cam)
    crop = apply_affine(pix, cam.crop_affine)
    rel = np.concatenate([crop, (p[:, 2] - cam.root_depth)[:, None]], axis=1)
    return crop_pixels_to_cells(rel, layout, cam.input_size, cam.depth_span)


def recover_mesh(cells, cam: CameraFrame, layout: HeatmapLayout):
    """Cells -> camera-frame millimeters (back-projection after inverse
    affine and root-depth offset); differentiable in the cells."""
    t, plain = _wrap(cells)
    crop = cells_to_crop_pixels(t, layout, cam.input_size, cam.depth_span)
    xy = apply_inverse_affine(crop[:, 0:2], cam.crop_affine)
    depth = dc.add(crop[:, 2], cam.root_depth)
    out = back_project(xy, depth, cam)
    return out.data if plain else out
