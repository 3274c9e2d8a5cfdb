"""Synthetic samples: posed templates projected into heatmap cells with
an input image that encodes each joint as a 2D Gaussian blob whose
amplitude carries the depth cell (so the task is solvable from the
image by construction). Fully determined by one seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..camera import CameraFrame, apply_affine, encode_points, project
from ..heatmap import HeatmapLayout
from .template import ToyTemplate, forward_kinematics

REJECTION_FACTOR = 100
CELL_MARGIN = 1.0  # groundtruth kept this many cells inside every border


@dataclass
class DataConfig:
    """Camera and pose-sampling parameters of the generator."""

    focal: float = 900.0
    image_size: int = 256          # original image square side, pixels
    base_depth: float = 2200.0     # chain placed around this camera depth, mm
    depth_span: float = 2000.0
    depth_jitter: float = 150.0
    xy_jitter: float = 60.0
    root_rotation: float = 0.6     # radians, per axis, root joint
    joint_rotation: float = 0.4    # radians, per axis, chain joints
    crop_margin: float = 0.35      # bbox expansion before crop/resize
    blob_sigma_px: float = 2.2     # input-blob width in network-input pixels
    noise_std: float = 0.05
    amp_lo: float = 0.3            # depth-amplitude code spans [amp_lo, amp_hi]
    amp_hi: float = 1.0


@dataclass
class Sample:
    image: np.ndarray           # [J, H, W] network input
    joint_cells: np.ndarray     # [J, 3]
    mesh_cells: np.ndarray      # [V, 3]
    joint_mask: np.ndarray
    mesh_mask: np.ndarray
    camera: CameraFrame
    joints_mm: np.ndarray       # [J, 3] camera frame
    vertices_mm: np.ndarray     # [V, 3]
    pose_params: np.ndarray     # [3J + 3]


class RejectionError(RuntimeError):
    """Pose sampling kept landing outside the heatmap volume."""


def _sample_pose(rng, template, dcfg):
    J = template.num_joints
    rotations = np.zeros((J, 3))
    rotations[0] = rng.uniform(-dcfg.root_rotation, dcfg.root_rotation, 3)
    rotations[1:] = rng.uniform(-dcfg.joint_rotation, dcfg.joint_rotation, (J - 1, 3))
    chain_mid = template.rest_joints[:, 1].mean()
    translation = np.array([
        rng.uniform(-dcfg.xy_jitter, dcfg.xy_jitter),
        rng.uniform(-dcfg.xy_jitter, dcfg.xy_jitter) - chain_mid,
        dcfg.base_depth + rng.uniform(-dcfg.depth_jitter, dcfg.depth_jitter),
    ])
    return rotations, translation


def _crop_affine(points_px, input_size, margin):
    """Square crop around the 2D points, resized to the network input."""
    lo = points_px.min(axis=0)
    hi = points_px.max(axis=0)
    center = (lo + hi) / 2.0
    side = (hi - lo).max() * (1.0 + 2.0 * margin)
    side = max(side, 1.0)
    scale = input_size[0] / side
    # maps original pixels to crop pixels: p_crop = scale * (p - center) + input/2
    return np.array([
        [scale, 0.0, input_size[0] / 2.0 - scale * center[0]],
        [0.0, scale, input_size[1] / 2.0 - scale * center[1]],
    ])


def _in_volume(cells, layout, margin=CELL_MARGIN):
    dims = np.array(layout.dims, dtype=np.float64)
    return bool((cells >= margin).all() and (cells <= dims - 1.0 - margin).all())


def _render_input(joint_cells, layout, input_size, dcfg, rng):
    W, H = input_size
    J = len(joint_cells)
    sx, sy = W / layout.width, H / layout.height
    px = joint_cells[:, 0] * sx
    py = joint_cells[:, 1] * sy
    amp = dcfg.amp_lo + (dcfg.amp_hi - dcfg.amp_lo) * joint_cells[:, 2] / layout.depth
    xs = np.arange(W)
    ys = np.arange(H)
    inv = -1.0 / (2.0 * dcfg.blob_sigma_px ** 2)
    gx = np.exp(inv * (xs[None, :] - px[:, None]) ** 2)   # [J, W]
    gy = np.exp(inv * (ys[None, :] - py[:, None]) ** 2)   # [J, H]
    image = amp[:, None, None] * np.einsum("jh,jw->jhw", gy, gx)
    image += rng.normal(0.0, dcfg.noise_std, size=(J, H, W))
    return image


def generate_dataset(template: ToyTemplate, n, seed, layout: HeatmapLayout,
                     input_size=(64, 64), dcfg: DataConfig = None):
    """Rejection-sample ``n`` fully in-volume samples, deterministically."""
    if n < 1:
        raise ValueError("generate_dataset: n must be >= 1")
    dcfg = dcfg or DataConfig()
    rng = np.random.default_rng(np.random.PCG64(seed))
    half = dcfg.image_size / 2.0
    samples = []
    attempts = 0
    while len(samples) < n:
        attempts += 1
        if attempts > REJECTION_FACTOR * n:
            raise RejectionError(
                f"rejection sampling exceeded {REJECTION_FACTOR}x budget "
                f"({len(samples)}/{n} accepted after {attempts} attempts); "
                "the pose/camera configuration is degenerate"
            )
        rotations, translation = _sample_pose(rng, template, dcfg)
        vertices, joints = forward_kinematics(template, rotations, translation)
        if (vertices[:, 2] <= 1.0).any():
            continue
        root_depth = joints[0, 2]
        cam = CameraFrame(
            fx=dcfg.focal, fy=dcfg.focal, cx=half, cy=half,
            crop_affine=np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
            input_size=input_size, depth_span=dcfg.depth_span,
            root_depth=root_depth,
        )
        joint_px = project(joints, cam)
        cam.crop_affine = _crop_affine(joint_px, input_size, dcfg.crop_margin)
        mesh_cells = encode_points(vertices, cam, layout)
        joint_cells = encode_points(joints, cam, layout)
        if not (_in_volume(mesh_cells, layout) and _in_volume(joint_cells, layout)):
            continue
        image = _render_input(joint_cells, layout, input_size, dcfg, rng)
        samples.append(Sample(
            image=image,
            joint_cells=joint_cells,
            mesh_cells=mesh_cells,
            joint_mask=np.ones_like(joint_cells),
            mesh_mask=np.ones_like(mesh_cells),
            camera=cam,
            joints_mm=joints,
            vertices_mm=vertices,
            pose_params=np.concatenate([rotations.reshape(-1), translation]),
        ))
    return samples


def save_dataset(path, samples, layout: HeatmapLayout):
    """Pack a sample list into one .npz file."""
    np.savez_compressed(
        path,
        images=np.stack([s.image for s in samples]),
        joint_cells=np.stack([s.joint_cells for s in samples]),
        mesh_cells=np.stack([s.mesh_cells for s in samples]),
        joints_mm=np.stack([s.joints_mm for s in samples]),
        vertices_mm=np.stack([s.vertices_mm for s in samples]),
        pose_params=np.stack([s.pose_params for s in samples]),
        cameras=np.array([s.camera.to_json() for s in samples]),
        layout=np.array(json.dumps({
            "kind": layout.kind.value, "width": layout.width,
            "height": layout.height, "depth": layout.depth,
        })),
    )


def load_dataset(path):
    """Inverse of save_dataset; returns (samples, layout)."""
    from ..heatmap import HeatmapKind

    data = np.load(path, allow_pickle=False)
    meta = json.loads(str(data["layout"]))
    layout = HeatmapLayout(HeatmapKind(meta["kind"]), meta["width"],
                           meta["height"], meta["depth"])
    samples = []
    for i in range(len(data["images"])):
        cells = data["joint_cells"][i]
        mesh = data["mesh_cells"][i]
        samples.append(Sample(
            image=data["images"][i],
            joint_cells=cells,
            mesh_cells=mesh,
            joint_mask=np.ones_like(cells),
            mesh_mask=np.ones_like(mesh),
            camera=CameraFrame.from_json(str(data["cameras"][i])),
            joints_mm=data["joints_mm"][i],
            vertices_mm=data["vertices_mm"][i],
            pose_params=data["pose_params"][i],
        ))
    return samples, layout
