"""Desk-scale pose and mesh networks with 1D-heatmap heads.

A shared stem produces early features at the heatmap plane resolution;
a strided trunk compresses them 8x. The x/y heads upsample back with
three deconvolution blocks, marginalize one spatial axis and apply a
per-landmark 1x1 1D convolution; the z head reshapes a pooled
fully-connected block into a depth line. The mesh branch consumes the
early features concatenated with Gaussian volumes rendered from joint
coordinates; rendering always happens on detached coordinates, so mesh
losses cannot reach the pose branch through that path.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .diffcore.nn import (
    BatchNorm1d,
    BatchNorm2d,
    Conv1d,
    Conv2d,
    ConvTranspose1d,
    ConvTranspose2d,
    Linear,
    Module,
    ModuleList,
    make_initializer,
)
from .heatmap import HeatmapKind, HeatmapLayout, soft_argmax_1d
from .meshgeom import LossParts, LossWeights, l1_coord_loss, normal_loss, edge_loss, total_loss

CASCADE_MODES = ("mesh_only", "pose_then_mesh", "gt_pose_to_mesh")
MARGINALIZE_METHODS = ("avg", "max", "weighted_sum")
MARGINALIZE_STAGES = ("late", "early")
HEAD_KINDS = ("lixel_conv", "coord_fc", "lixel_fc", "param_fc", "pixel_lixel", "voxel")

# voxel output layers above this cell count are refused up front; at the
# published scale (V=6980, D=64) the count is printed instead of trained
VOXEL_CELL_LIMIT = 1 << 26


@dataclass
class NetConfig:
    """Shapes and wiring of the toy networks."""

    num_joints: int = 8
    num_vertices: int = 182
    depth: int = 32          # z cells
    feat_h: int = 4          # trunk output height; heatmap plane is 8x this
    feat_w: int = 4
    in_channels: int = 8
    early_channels: int = 16
    trunk_channels: int = 64
    head_channels: int = 32
    fc_hidden: int = 512     # hidden width of the fully-connected heads
    marginalize_method: str = "avg"
    marginalize_stage: str = "late"
    cascade: str = "pose_then_mesh"
    head_kind: str = "lixel_conv"
    sigma: float = 2.5
    init: str = "kaiming"
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.cascade not in CASCADE_MODES:
            raise ValueError(f"cascade must be one of {CASCADE_MODES}, got {self.cascade!r}")
        if self.marginalize_method not in MARGINALIZE_METHODS:
            raise ValueError(
                f"marginalize_method must be one of {MARGINALIZE_METHODS}, "
                f"got {self.marginalize_method!r}"
            )
        if self.marginalize_stage not in MARGINALIZE_STAGES:
            raise ValueError(
                f"marginalize_stage must be one of {MARGINALIZE_STAGES}, "
                f"got {self.marginalize_stage!r}"
            )
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"head_kind must be one of {HEAD_KINDS}, got {self.head_kind!r}")
        if min(self.feat_h, self.feat_w) < 1 or self.depth < 2:
            raise ValueError("feat_h/feat_w must be >= 1 and depth >= 2")
        if self.head_kind == "voxel":
            cells = self.num_vertices * self.depth * self.plane_h * self.plane_w
            if cells > VOXEL_CELL_LIMIT:
                raise ValueError(
                    f"voxel output layer refused: {cells:,} cells exceeds the "
                    f"{VOXEL_CELL_LIMIT:,}-cell limit"
                )

    @property
    def plane_w(self):
        return 8 * self.feat_w

    @property
    def plane_h(self):
        return 8 * self.feat_h

    @property
    def input_size(self):
        # stem halves the input, trunk divides the rest by 8
        return (2 * self.plane_w, 2 * self.plane_h)

    @property
    def layout(self):
        return HeatmapLayout(HeatmapKind.LIXEL_XYZ, self.plane_w, self.plane_h, self.depth)

    @property
    def paper_proportioned(self):
        return self.depth == self.plane_h == self.plane_w


@dataclass
class BackboneFeatures:
    early: Tensor  # [B, c_e, 8h, 8w]
    deep: Tensor   # [B, c, h, w]


@dataclass
class GroundTruthBatch:
    """Supervision for one batch, already in heatmap-cell units."""

    joint_cells: np.ndarray          # [B, J, 3]
    joint_mask: np.ndarray           # [B, J, 3]
    mesh_cells: np.ndarray = None    # [B, V, 3]; None disables mesh losses
    mesh_mask: np.ndarray = None
    faces: np.ndarray = None         # [F, 3]
    regressor: np.ndarray = None     # [J, V]


@dataclass
class ForwardResult:
    pose_coords: Tensor      # [B, J, 3] or None when there is no pose branch
    mesh_coords: Tensor      # [B, N, 3] (or [B, P] params for param_fc heads)
    parts: LossParts = None
    total: Tensor = None
    mesh_logits: tuple = None


class ConvBlock(Module):
    """3x3 convolution + batch norm + ReLU."""

    def __init__(self, rng, in_ch, out_ch, stride, cfg):
        super().__init__()
        self.conv = Conv2d(rng, in_ch, out_ch, 3, stride=stride, padding=1,
                           init=make_initializer(cfg.init))
        self.bn = BatchNorm2d(out_ch, momentum=cfg.bn_momentum)

    def forward(self, x):
        return dc.relu(self.bn(self.conv(x)))


class UpBlock(Module):
    """Deconvolution (x2) + batch norm + ReLU upsampling module."""

    def __init__(self, rng, in_ch, out_ch, cfg):
        super().__init__()
        self.deconv = ConvTranspose2d(rng, in_ch, out_ch, 4, stride=2, padding=1,
                                      init=make_initializer(cfg.init))
        self.bn = BatchNorm2d(out_ch, momentum=cfg.bn_momentum)

    def forward(self, x):
        return dc.relu(self.bn(self.deconv(x)))


class UpBlock1d(Module):
    """1D counterpart used when marginalization happens before upsampling."""

    def __init__(self, rng, in_ch, out_ch, cfg):
        super().__init__()
        self.deconv = ConvTranspose1d(rng, in_ch, out_ch, 4, stride=2, padding=1,
                                      init=make_initializer(cfg.init))
        self.bn = BatchNorm1d(out_ch, momentum=cfg.bn_momentum)

    def forward(self, x):
        return dc.relu(self.bn(self.deconv(x)))


class Stem(Module):
    """Image to early features at the heatmap plane resolution."""

    def __init__(self, rng, cfg):
        super().__init__()
        self.block = ConvBlock(rng, cfg.in_channels, cfg.early_channels, 2, cfg)

    def forward(self, images):
        return self.block(images)


class Trunk(Module):
    """Three strided blocks: (8h, 8w) down to (h, w)."""

    def __init__(self, rng, cfg, in_ch=None):
        super().__init__()
        c = cfg.trunk_channels
        chans = [in_ch or cfg.early_channels, c // 2, c, c]
        self.blocks = ModuleList(
            [ConvBlock(rng, chans[i], chans[i + 1], 2, cfg) for i in range(3)]
        )

    def forward(self, x):
        for b in self.blocks:
            x = b(x)
        return x


class ZHead(Module):
    """Pooled features -> fully-connected block -> depth-line logits."""

    def __init__(self, rng, cfg, n_out):
        super().__init__()
        cp, d = cfg.head_channels, cfg.depth
        self.fc = Linear(rng, cfg.trunk_channels, cp * d, init=make_initializer(cfg.init))
        self.bn = BatchNorm1d(cp * d, momentum=cfg.bn_momentum)
        self.out = Conv1d(rng, cp, n_out, 1, init=make_initializer(cfg.init))
        self._shape = (cp, d)

    def forward(self, deep):
        pooled = dc.tmean(deep, axis=(2, 3))                     # [B, c]
        h = dc.relu(self.bn(self.fc(pooled)))                    # [B, c'D]
        h = dc.reshape(h, (h.shape[0],) + self._shape)           # [B, c', D]
        return self.out(h)                                       # [B, N, D]


class LixelHead(Module):
    """Per-landmark 1D logits over x, y (upsample + marginalize) and z."""

    def __init__(self, rng, cfg, n_out):
        super().__init__()
        self.cfg = cfg
        c, cp = cfg.trunk_channels, cfg.head_channels
        if cfg.marginalize_stage == "late":
            self.up = ModuleList([
                UpBlock(rng, c, cp, cfg),
                UpBlock(rng, cp, cp, cfg),
                UpBlock(rng, cp, cp, cfg),
            ])
        else:
            self.up_x = ModuleList([
                UpBlock1d(rng, c, cp, cfg),
                UpBlock1d(rng, cp, cp, cfg),
                UpBlock1d(rng, cp, cp, cfg),
            ])
            self.up_y = ModuleList([
                UpBlock1d(rng, c, cp, cfg),
                UpBlock1d(rng, cp, cp, cfg),
                UpBlock1d(rng, cp, cp, cfg),
            ])
        if cfg.marginalize_method == "weighted_sum":
            if cfg.marginalize_stage == "late":
                ny, nx = cfg.plane_h, cfg.plane_w
            else:
                ny, nx = cfg.feat_h, cfg.feat_w
            self.wy = dc.nn.Parameter(np.full(ny, 1.0 / ny))
            self.wx = dc.nn.Parameter(np.full(nx, 1.0 / nx))
        else:
            self.wy = self.wx = None
        self.out_x = Conv1d(rng, cp, n_out, 1, init=make_initializer(cfg.init))
        self.out_y = Conv1d(rng, cp, n_out, 1, init=make_initializer(cfg.init))
        self.z = ZHead(rng, cfg, n_out)

    def _marginalize(self, feat, axis):
        from .heatmap import marginalize

        w = self.wy if axis == "y" else self.wx
        return marginalize(feat, axis, self.cfg.marginalize_method, weights=w)

    def forward(self, deep):
        if self.cfg.marginalize_stage == "late":
            up = deep
            for b in self.up:
                up = b(up)                                       # [B, c', 8h, 8w]
            hx = self.out_x(self._marginalize(up, "y"))          # [B, N, 8w]
            hy = self.out_y(self._marginalize(up, "x"))          # [B, N, 8h]
        else:
            px = self._marginalize(deep, "y")                    # [B, c, w]
            py = self._marginalize(deep, "x")                    # [B, c, h]
            for b in self.up_x:
                px = b(px)
            for b in self.up_y:
                py = b(py)
            hx = self.out_x(px)
            hy = self.out_y(py)
        hz = self.z(deep)                                        # [B, N, D]
        return hx, hy, hz


def decode_lixel_logits(hx, hy, hz):
    """Soft-argmax the three axis logits into [B, N, 3] coordinates."""
    cols = []
    for h in (hx, hy, hz):
        c = soft_argmax_1d(h)
        cols.append(dc.reshape(c, c.shape + (1,)))
    return dc.concat(cols, axis=2)


class CoordRegressionHead(Module):
    """Two fully-connected layers regressing cell coordinates directly."""

    def __init__(self, rng, cfg, n_out):
        super().__init__()
        init = make_initializer(cfg.init)
        self.n_out = n_out
        self.fc1 = Linear(rng, cfg.trunk_channels, cfg.fc_hidden, init=init)
        self.bn = BatchNorm1d(cfg.fc_hidden, momentum=cfg.bn_momentum)
        self.fc2 = Linear(rng, cfg.fc_hidden, 3 * n_out, init=init)

    def forward(self, deep):
        pooled = dc.tmean(deep, axis=(2, 3))
        h = dc.relu(self.bn(self.fc1(pooled)))
        out = self.fc2(h)
        return dc.reshape(out, (out.shape[0], self.n_out, 3))


class LixelFCHead(Module):
    """Lixel logits from two fully-connected layers (no spatial path)."""

    def __init__(self, rng, cfg, n_out):
        super().__init__()
        init = make_initializer(cfg.init)
        self.n_out = n_out
        self.dims = (cfg.plane_w, cfg.plane_h, cfg.depth)
        hidden = cfg.fc_hidden // 2
        self.fc1 = Linear(rng, cfg.trunk_channels, hidden, init=init)
        self.bn = BatchNorm1d(hidden, momentum=cfg.bn_momentum)
        self.fc2 = Linear(rng, hidden, n_out * sum(self.dims), init=init)

    def forward(self, deep):
        pooled = dc.tmean(deep, axis=(2, 3))
        h = dc.relu(self.bn(self.fc1(pooled)))
        flat = self.fc2(h)
        b = flat.shape[0]
        w, hgt, d = self.dims
        n = self.n_out
        flat = dc.reshape(flat, (b, n, w + hgt + d))
        return flat[:, :, :w], flat[:, :, w:w + hgt], flat[:, :, w + hgt:]


class ParamRegressionHead(Module):
    """Low-dimensional parameter regression (joint angles + translation)."""

    def __init__(self, rng, cfg, n_params):
        super().__init__()
        init = make_initializer(cfg.init)
        self.fc1 = Linear(rng, cfg.trunk_channels, cfg.fc_hidden, init=init)
        self.bn = BatchNorm1d(cfg.fc_hidden, momentum=cfg.bn_momentum)
        self.fc2 = Linear(rng, cfg.fc_hidden, n_params, init=init)

    def forward(self, deep):
        pooled = dc.tmean(deep, axis=(2, 3))
        return self.fc2(dc.relu(self.bn(self.fc1(pooled))))


class PixelLixelHead(Module):
    """2D heatmap over the image plane plus a 1D depth line."""

    def __init__(self, rng, cfg, n_out):
        super().__init__()
        c, cp = cfg.trunk_channels, cfg.head_channels
        self.up = ModuleList([
            UpBlock(rng, c, cp, cfg),
            UpBlock(rng, cp, cp, cfg),
            UpBlock(rng, cp, cp, cfg),
        ])
        self.out_xy = Conv2d(rng, cp, n_out, 1, init=make_initializer(cfg.init))
        self.z = ZHead(rng, cfg, n_out)

    def forward(self, deep):
        up = deep
        for b in self.up:
            up = b(up)
        return self.out_xy(up), self.z(deep)   # [B, N, H, W], [B, N, D]


class VoxelHead(Module):
    """Full 3D heatmap: 1x1 convolution to N*D channels on the plane."""

    def __init__(self, rng, cfg, n_out):
        super().__init__()
        c, cp = cfg.trunk_channels, cfg.head_channels
        self.n_out, self.depth = n_out, cfg.depth
        self.up = ModuleList([
            UpBlock(rng, c, cp, cfg),
            UpBlock(rng, cp, cp, cfg),
            UpBlock(rng, cp, cp, cfg),
        ])
        self.out = Conv2d(rng, cp, n_out * cfg.depth, 1, init=make_initializer(cfg.init))

    def forward(self, deep):
        up = deep
        for b in self.up:
            up = b(up)
        vol = self.out(up)  # [B, N*D, H, W]
        b, _, h, w = vol.shape
        return dc.reshape(vol, (b, self.n_out, self.depth, h, w))


def decode_pixel_heatmap(hxy):
    """2D soft-argmax: softmax over the plane, expectations of x and y."""
    b, n, h, w = hxy.shape
    flat = dc.reshape(hxy, (b, n, h * w))
    probs = dc.reshape(dc.softmax(flat, axis=-1), (b, n, h, w))
    xs = np.arange(w, dtype=np.float64).reshape(1, 1, 1, w)
    ys = np.arange(h, dtype=np.float64).reshape(1, 1, h, 1)
    x = dc.tsum(dc.mul(probs, xs), axis=(2, 3))
    y = dc.tsum(dc.mul(probs, ys), axis=(2, 3))
    return x, y


def decode_voxel_heatmap(vol):
    """3D soft-argmax over the full volume per landmark."""
    b, n, d, h, w = vol.shape
    flat = dc.reshape(vol, (b, n, d * h * w))
    probs = dc.reshape(dc.softmax(flat, axis=-1), (b, n, d, h, w))
    xs = np.arange(w, dtype=np.float64).reshape(1, 1, 1, 1, w)
    ys = np.arange(h, dtype=np.float64).reshape(1, 1, 1, h, 1)
    zs = np.arange(d, dtype=np.float64).reshape(1, 1, d, 1, 1)
    cols = []
    for grid in (xs, ys, zs):
        c = dc.tsum(dc.mul(probs, grid), axis=(2, 3, 4))
        cols.append(dc.reshape(c, (b, n, 1)))
    return dc.concat(cols, axis=2)


def axis_gaussians(coords, layout, sigma):
    """Per-axis Gaussian profiles gz [B,N,D], gy [B,N,H], gx [B,N,W]
    from [B, N, 3] coordinates (plain numpy; the fusion path runs on
    detached coordinates, so no gradient is needed)."""
    coords = np.asarray(coords, dtype=np.float64)
    W, H, D = layout.dims
    inv = -1.0 / (2.0 * sigma * sigma)
    gx = np.exp(inv * (np.arange(W) - coords[..., 0:1]) ** 2)
    gy = np.exp(inv * (np.arange(H) - coords[..., 1:2]) ** 2)
    gz = np.exp(inv * (np.arange(D) - coords[..., 2:3]) ** 2)
    return gz, gy, gx


def gaussian_volume_batch(coords, layout, sigma):
    """Separable Gaussian volumes [B, N*D, H, W] from [B, N, 3] coords."""
    gz, gy, gx = axis_gaussians(coords, layout, sigma)
    vol = np.einsum("bnd,bnh,bnw->bndhw", gz, gy, gx)
    b, n = gz.shape[0], gz.shape[1]
    return vol.reshape(b, n * layout.depth, layout.height, layout.width)


def _im2col_plane(x, k, pad):
    """Numpy im2col of [B, C, H, W] to [B, C*k*k, H*W] (stride 1)."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    b, c, oh, ow = win.shape[:4]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(b, c * k * k, oh * ow)


def fused_gaussian_conv(early, weight, bias, gz, plane):
    """3x3 convolution of [gaussian volume (+) early] without building
    the volume: the depth axis of the Gaussian channels contracts into
    the kernel first (the volume factorizes as gz outer gy*gx), which is
    algebraically identical to convolving the concatenation.

    early [B, c_e, H, W]; weight [O, N*D + c_e, 3, 3]; gz [B, N, D];
    plane [B, N, H, W] = per-landmark gy (x) gx maps.
    """
    B, N, D = gz.shape
    H, W = plane.shape[2], plane.shape[3]
    O = weight.shape[0]
    kk = weight.shape[2] * weight.shape[3]
    if weight.shape[1] != N * D + early.shape[1]:
        raise dc.ShapeError(
            f"fused_gaussian_conv: kernel channels {weight.shape[1]} != "
            f"{N}*{D} + {early.shape[1]}"
        )
    w_g = dc.reshape(weight[:, :N * D], (O, N, D, kk))
    w_e = weight[:, N * D:]
    # depth collapse: per landmark, [B, D] @ [D, O*kk]
    wg_n = dc.reshape(dc.transpose(w_g, (1, 2, 0, 3)), (N, D, O * kk))
    gz_n = np.ascontiguousarray(gz.transpose(1, 0, 2))
    weff = dc.bmm(gz_n, wg_n)                                   # [N, B, O*kk]
    weff = dc.transpose(dc.reshape(weff, (N, B, O, kk)), (1, 2, 0, 3))
    weff = dc.reshape(weff, (B, O, N * kk))
    mcols = _im2col_plane(plane, 3, 1)                          # [B, N*kk, H*W]
    out_g = dc.reshape(dc.bmm(weff, mcols), (B, O, H, W))
    out_e = dc.conv2d(early, w_e, None, stride=1, padding=1)
    return dc.add(dc.add(out_g, out_e), dc.reshape(bias, (1, O, 1, 1)))


class PoseBranch(Module):
    """Trunk plus lixel head predicting joint heatmaps; the only
    parameters allowed to receive joint-loss gradients exclusively."""

    def __init__(self, rng, cfg):
        super().__init__()
        self.trunk = Trunk(rng, cfg)
        self.head = LixelHead(rng, cfg, cfg.num_joints)

    def forward(self, early):
        deep = self.trunk(early)
        hx, hy, hz = self.head(deep)
        return deep, (hx, hy, hz), decode_lixel_logits(hx, hy, hz)


class MeshBranch(Module):
    """Fusion convolution, trunk, and the configured vertex head."""

    def __init__(self, rng, cfg, fuse_in):
        super().__init__()
        self.cfg = cfg
        self.fuse_conv = ConvBlock(rng, fuse_in, cfg.early_channels, 1, cfg)
        self.trunk = Trunk(rng, cfg)
        v = cfg.num_vertices
        if cfg.head_kind == "lixel_conv":
            self.head = LixelHead(rng, cfg, v)
        elif cfg.head_kind == "coord_fc":
            self.head = CoordRegressionHead(rng, cfg, v)
        elif cfg.head_kind == "lixel_fc":
            self.head = LixelFCHead(rng, cfg, v)
        elif cfg.head_kind == "param_fc":
            self.head = ParamRegressionHead(rng, cfg, 3 * cfg.num_joints + 3)
        elif cfg.head_kind == "pixel_lixel":
            self.head = PixelLixelHead(rng, cfg, v)
        else:
            self.head = VoxelHead(rng, cfg, v)

    def forward(self, fused_in):
        return self._head_forward(self.trunk(self.fuse_conv(fused_in)))

    def forward_fused(self, gz, plane, early):
        """Hot path for cascade modes: the fusion convolution consumes
        the separable Gaussian factors directly (same parameters, same
        function as forward() on the materialized concatenation)."""
        h = fused_gaussian_conv(
            early, self.fuse_conv.conv.weight, self.fuse_conv.conv.bias, gz, plane
        )
        return self._head_forward(self.trunk(dc.relu(self.fuse_conv.bn(h))))

    def _head_forward(self, deep):
        kind = self.cfg.head_kind
        if kind in ("lixel_conv", "lixel_fc"):
            hx, hy, hz = self.head(deep)
            return (hx, hy, hz), decode_lixel_logits(hx, hy, hz)
        if kind == "pixel_lixel":
            hxy, hz = self.head(deep)
            x, y = decode_pixel_heatmap(hxy)
            z = soft_argmax_1d(hz)
            cols = [dc.reshape(c, c.shape + (1,)) for c in (x, y, z)]
            return (hxy, hz), dc.concat(cols, axis=2)
        if kind == "voxel":
            vol = self.head(deep)
            return (vol,), decode_voxel_heatmap(vol)
        out = self.head(deep)   # coord_fc: [B, V, 3]; param_fc: [B, P]
        return (), out


class CascadeModel(Module):
    """Stem, optional pose branch, and mesh branch wired per config."""

    def __init__(self, cfg: NetConfig, seed=0):
        super().__init__()
        rng = np.random.default_rng(np.random.PCG64(seed))
        self.cfg = cfg
        self.stem = Stem(rng, cfg)
        fuse_in = cfg.early_channels
        if cfg.cascade != "mesh_only":
            fuse_in += cfg.num_joints * cfg.depth
        if cfg.cascade == "pose_then_mesh":
            self.pose_net = PoseBranch(rng, cfg)
        self.mesh_net = MeshBranch(rng, cfg, fuse_in)

    def backbone_forward(self, images):
        """Early + deep features (deep from the pose trunk when present,
        otherwise from the mesh trunk)."""
        images = dc.as_tensor(images)
        expect = (self.cfg.input_size[1], self.cfg.input_size[0])
        if images.shape[2:] != expect:
            raise dc.ShapeError(
                f"backbone_forward: input spatial size {images.shape[2:]} "
                f"does not divide the stride chain, expected {expect}"
            )
        early = self.stem(images)
        if self.cfg.cascade == "pose_then_mesh":
            deep = self.pose_net.trunk(early)
        elif self.cfg.cascade == "mesh_only":
            deep = self.mesh_net.trunk(self.mesh_net.fuse_conv(early))
        else:
            raise ValueError(
                "gt_pose_to_mesh has no image-only deep features; run forward() "
                "with groundtruth joint cells instead"
            )
        return BackboneFeatures(early=early, deep=deep)

    def fuse(self, coords, early):
        """Gaussian volumes from detached coordinates, concatenated with
        the early features along channels."""
        if isinstance(coords, Tensor):
            coords = coords.detach().data  # gradient stop
        maps = gaussian_volume_batch(coords, self.cfg.layout, self.cfg.sigma)
        if maps.shape[2:] != tuple(early.shape[2:]):
            raise dc.ShapeError(
                f"fuse: gaussian plane {maps.shape[2:]} != early features "
                f"{tuple(early.shape[2:])}"
            )
        return dc.concat([Tensor(maps), early], axis=1)

    def forward(self, images, gt_joint_cells=None):
        images = dc.as_tensor(images)
        early = self.stem(images)
        pose_coords = None
        pose_logits = None
        gauss_coords = None
        if self.cfg.cascade == "pose_then_mesh":
            _, pose_logits, pose_coords = self.pose_net(early)
            gauss_coords = pose_coords.detach().data  # gradient stop
        elif self.cfg.cascade == "gt_pose_to_mesh":
            if gt_joint_cells is None:
                raise ValueError("gt_pose_to_mesh mode requires groundtruth joint cells")
            gauss_coords = np.asarray(gt_joint_cells, dtype=np.float64)
        if gauss_coords is not None:
            gz, gy, gx = axis_gaussians(gauss_coords, self.cfg.layout, self.cfg.sigma)
            plane = np.einsum("bnh,bnw->bnhw", gy, gx)
            mesh_logits, mesh_coords = self.mesh_net.forward_fused(gz, plane, early)
        else:
            mesh_logits, mesh_coords = self.mesh_net(early)
        return ForwardResult(
            pose_coords=pose_coords,
            mesh_coords=mesh_coords,
            mesh_logits=mesh_logits,
        ), pose_logits

    def forward_full(self, images, gt: GroundTruthBatch, weights: LossWeights = None):
        """Forward pass plus the five-term loss breakdown."""
        weights = weights or LossWeights()
        result, _ = self.forward(images, gt_joint_cells=gt.joint_cells)
        parts = compute_losses(self.cfg, result, gt, weights)
        result.parts = parts
        result.total = dc.as_tensor(total_loss(parts, weights))
        return result


def compute_losses(cfg, result: ForwardResult, gt: GroundTruthBatch,
                   weights: LossWeights):
    """The five loss terms of the cascade on decoded cell coordinates.

    Mesh-geometry terms fall back to zero when no groundtruth mesh is
    supplied; the z-axis columns of the masks silence depth errors when
    depth labels are missing.
    """
    parts = LossParts()
    if result.pose_coords is not None and weights.use_pose_posenet:
        parts.pose_posenet = l1_coord_loss(result.pose_coords, gt.joint_cells, gt.joint_mask)
    mesh_coords = result.mesh_coords
    has_mesh_gt = gt.mesh_cells is not None
    batch = mesh_coords.shape[0]
    if weights.use_pose_meshnet and gt.regressor is not None and mesh_coords.ndim == 3 \
            and mesh_coords.shape[1] == cfg.num_vertices:
        rows = []
        for b in range(batch):
            joints = dc.matmul(Tensor(gt.regressor), mesh_coords[b])
            rows.append(dc.reshape(joints, (1,) + joints.shape))
        pred_joints = dc.concat(rows, axis=0)
        parts.pose_meshnet = l1_coord_loss(pred_joints, gt.joint_cells, gt.joint_mask)
    if has_mesh_gt and mesh_coords.ndim == 3 and mesh_coords.shape[1] == cfg.num_vertices:
        if weights.use_vertex:
            parts.vertex = l1_coord_loss(mesh_coords, gt.mesh_cells, gt.mesh_mask)
        if gt.faces is not None and (weights.use_normal or weights.use_edge):
            n_total, e_total = None, None
            for b in range(batch):
                pred_v = mesh_coords[b]
                gt_v = gt.mesh_cells[b]
                if weights.use_normal:
                    term = normal_loss(pred_v, gt_v, gt.faces)
                    n_total = term if n_total is None else dc.add(n_total, term)
                if weights.use_edge:
                    term = edge_loss(pred_v, gt_v, gt.faces)
                    e_total = term if e_total is None else dc.add(e_total, term)
            if n_total is not None:
                parts.normal = dc.mul(n_total, 1.0 / batch)
            if e_total is not None:
                parts.edge = dc.mul(e_total, 1.0 / batch)
    return parts


def gradient_stop_probe(model: CascadeModel, images, gt: GroundTruthBatch,
                        weights: LossWeights = None):
    """Gradient provenance of the pose branch under the cascade.

    Backpropagates the mesh-side losses alone, then the joint loss
    alone, and reports the largest absolute gradient reaching any pose
    branch parameter from each. The fusion path renders from detached
    coordinates, so the first number must be exactly zero.
    """
    if model.cfg.cascade != "pose_then_mesh":
        raise ValueError("the gradient-stop probe needs the cascaded configuration")
    weights = weights or LossWeights()

    def pose_grad_max():
        vals = [np.abs(p.grad).max() for _, p in model.pose_net.named_parameters()
                if p.grad is not None]
        return float(max(vals)) if vals else 0.0

    model.zero_grad()
    res = model.forward_full(images, gt, weights)
    mesh_total = dc.add(
        dc.add(dc.as_tensor(res.parts.pose_meshnet), dc.as_tensor(res.parts.vertex)),
        dc.add(dc.mul(dc.as_tensor(res.parts.normal), weights.lambda_normal),
               dc.as_tensor(res.parts.edge)),
    )
    mesh_total.backward()
    from_mesh = pose_grad_max()

    model.zero_grad()
    res = model.forward_full(images, gt, weights)
    dc.as_tensor(res.parts.pose_posenet).backward()
    from_pose = pose_grad_max()
    return {"pose_grad_from_mesh_losses": from_mesh,
            "pose_grad_from_pose_loss": from_pose}


def parameter_report(model: CascadeModel):
    """Parameter counts per top-level component plus head-only counts."""
    report = {"total": model.parameter_count()}
    for name in ("stem", "pose_net", "mesh_net"):
        sub = getattr(model, name, None)
        if sub is not None:
            report[name] = sub.parameter_count()
    report["mesh_head"] = model.mesh_net.head.parameter_count()
    if model.cfg.head_kind == "lixel_conv":
        # include the upsampling path feeding the 1x1 output layers
        report["mesh_head_kind"] = "lixel_conv"
    return report


def head_parameter_count(cfg: NetConfig, head_kind: str, seed=0):
    """Pure function of the config: parameters of one mesh head variant."""
    probe_cfg = replace(cfg, head_kind=head_kind)
    rng = np.random.default_rng(np.random.PCG64(seed))
    branch = MeshBranch(rng, probe_cfg, probe_cfg.early_channels)
    return branch.head.parameter_count()
