"""Lixel heatmap codecs: rendering, soft-argmax decoding, marginal
reductions, and the exact cell-count memory model of the three target
layouts (1D-per-axis, 2D+1D, full 3D).

Coordinates are index-valued: cell i spans [i, i+1) and its center is
the integer i, so soft-argmax (the softmax-weighted expectation of the
cell index) and Gaussian rendering share one convention with no +-0.5
bookkeeping. All functions are pure and accept either plain arrays or
autodiff tensors, returning the matching kind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

# Rendered Gaussian values are floored at the smallest positive double
# so extreme cells underflowing exp() stay inside (0, 1].
_VALUE_FLOOR = 5e-324

DUMP_MAGIC = "lixelkit-heatmap-v1"


class HeatmapKind(str, Enum):
    LIXEL_XYZ = "lixel_xyz"
    PIXEL_XY_PLUS_LIXEL_Z = "pixel_xy_plus_lixel_z"
    VOXEL_XYZ = "voxel_xyz"


@dataclass(frozen=True)
class HeatmapLayout:
    """Cell grid of one target representation."""

    kind: HeatmapKind
    width: int
    height: int
    depth: int

    def __post_init__(self):
        if min(self.width, self.height, self.depth) < 2:
            raise ValueError(
                f"heatmap dims must be >= 2, got "
                f"{self.width}x{self.height}x{self.depth}"
            )

    @property
    def dims(self):
        return (self.width, self.height, self.depth)


@dataclass
class ContinuousCoords:
    """Landmark coordinates in heatmap-cell units, shape [N, 3]."""

    coords: np.ndarray

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)

    def validate(self, layout: HeatmapLayout):
        c = self.coords
        for axis, extent in enumerate(layout.dims):
            if c.size and ((c[:, axis] < 0).any() or (c[:, axis] >= extent).any()):
                raise ValueError(
                    f"coordinate axis {('x', 'y', 'z')[axis]} outside [0, {extent})"
                )
        return self


@dataclass
class LixelHeatmapSet:
    """Per-landmark 1D heatmap logits over the x, y and z axes.

    hx is [N, width], hy [N, height], hz [N, depth]. Values are raw
    scores; ``normalized`` applies the per-row softmax under which each
    row is a likelihood summing to one.
    """

    hx: np.ndarray
    hy: np.ndarray
    hz: np.ndarray

    def normalized(self):
        def norm(h):
            h = np.asarray(h, dtype=np.float64)
            e = np.exp(h - h.max(axis=-1, keepdims=True))
            return e / e.sum(axis=-1, keepdims=True)

        return LixelHeatmapSet(norm(self.hx), norm(self.hy), norm(self.hz))


@dataclass
class CoordTarget:
    """Groundtruth coordinates plus a per-axis validity mask."""

    coords: np.ndarray  # [N, 3] cell units
    mask: np.ndarray    # [N, 3] in {0, 1}; zero entries are ignored by losses


def _wrap(x):
    if isinstance(x, Tensor):
        return x, False
    return Tensor(np.asarray(x, dtype=np.float64)), True


def soft_argmax_1d(logits):
    """Differentiable expectation of the cell index under softmax.

    logits is [..., L]; returns [...] continuous coordinates in
    [0, L-1]. Invariant to adding a constant to every logit.
    """
    t, plain = _wrap(logits)
    L = t.shape[-1]
    if L < 2:
        raise ValueError(f"soft_argmax_1d: needs at least 2 cells, got {L}")
    if not np.isfinite(t.data).all():
        raise ValueError("soft_argmax_1d: non-finite logits")
    probs = dc.softmax(t, axis=-1)
    coords = dc.tsum(dc.mul(probs, np.arange(L, dtype=np.float64)), axis=-1)
    return coords.data if plain else coords


def decode(heatmaps: LixelHeatmapSet):
    """Soft-argmax each axis of a lixel heatmap set into [N, 3] coords."""
    parts = [soft_argmax_1d(h) for h in (heatmaps.hx, heatmaps.hy, heatmaps.hz)]
    if any(isinstance(p, Tensor) for p in parts):
        cols = [dc.reshape(dc.as_tensor(p), p.shape + (1,)) for p in parts]
        return dc.concat(cols, axis=-1)
    return np.stack(parts, axis=-1)


def render_gaussian_3d(coords, layout: HeatmapLayout, sigma: float):
    """Render per-landmark 3D Gaussians over the cell grid.

    values[j, z, y, x] = exp(-(dx^2 + dy^2 + dz^2) / (2 sigma^2)) with
    distances taken from integer cell centers to the landmark. sigma is
    in cell units. Differentiable with respect to ``coords`` when they
    are a tensor; out-of-range landmarks simply decay.
    """
    if sigma <= 0:
        raise ValueError(f"render_gaussian_3d: sigma must be > 0, got {sigma}")
    if isinstance(coords, ContinuousCoords):
        coords = coords.coords
    t, plain = _wrap(coords)
    if not np.isfinite(t.data).all():
        raise ValueError("render_gaussian_3d: non-finite coordinates")
    W, H, D = layout.dims
    if t.shape[-1] != 3:
        raise dc.ShapeError(f"render_gaussian_3d: coords must be [N, 3], got {t.shape}")
    n = t.shape[0]
    xs = np.arange(W, dtype=np.float64).reshape(1, 1, 1, W)
    ys = np.arange(H, dtype=np.float64).reshape(1, 1, H, 1)
    zs = np.arange(D, dtype=np.float64).reshape(1, D, 1, 1)
    cx = dc.reshape(t[:, 0], (n, 1, 1, 1))
    cy = dc.reshape(t[:, 1], (n, 1, 1, 1))
    cz = dc.reshape(t[:, 2], (n, 1, 1, 1))
    dx = dc.sub(xs, cx)
    dy = dc.sub(ys, cy)
    dz = dc.sub(zs, cz)
    inv = -1.0 / (2.0 * sigma * sigma)
    sq = dc.add(dc.add(dc.mul(dx, dx), dc.mul(dy, dy)), dc.mul(dz, dz))
    values = dc.exp(dc.mul(sq, inv))
    if plain:
        return np.maximum(values.data, _VALUE_FLOOR)
    return values


def render_lixel_gaussians(coords, layout: HeatmapLayout, sigma: float):
    """Encode coordinates as per-axis 1D Gaussian logits.

    Each row of the returned set holds -(i - p)^2 / (2 sigma^2), whose
    softmax is the discrete Gaussian centered at p, so decode() recovers
    p for landmarks away from the borders.
    """
    if sigma <= 0:
        raise ValueError(f"render_lixel_gaussians: sigma must be > 0, got {sigma}")
    if isinstance(coords, ContinuousCoords):
        coords = coords.coords
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    inv = -1.0 / (2.0 * sigma * sigma)

    def axis_logits(p, length):
        idx = np.arange(length, dtype=np.float64)
        d = idx[None, :] - p[:, None]
        return inv * d * d

    W, H, D = layout.dims
    return LixelHeatmapSet(
        hx=axis_logits(coords[:, 0], W),
        hy=axis_logits(coords[:, 1], H),
        hz=axis_logits(coords[:, 2], D),
    )


def marginalize(feature, axis, method="avg", weights=None):
    """Reduce a [..., H, W] feature map along one or both spatial axes.

    axis "y" averages/maxes/weights out the height (profile over x,
    shape [..., W]), "x" removes the width (shape [..., H]) and "xy"
    removes both. ``weighted_sum`` contracts the reduced axis with a
    learned weight vector supplied by the calling head.
    """
    t, plain = _wrap(feature)
    if t.ndim < 2:
        raise dc.ShapeError(f"marginalize: feature must have >= 2 dims, got {t.shape}")
    h_ax, w_ax = t.ndim - 2, t.ndim - 1
    if axis == "xy":
        if method == "avg":
            out = dc.tmean(t, axis=(h_ax, w_ax))
        elif method == "max":
            out = dc.tmax(dc.tmax(t, axis=w_ax), axis=h_ax)
        elif method == "weighted_sum":
            if weights is None or len(weights) != 2:
                raise ValueError(
                    "marginalize: xy weighted_sum requires (y_weights, x_weights)"
                )
            wy = dc.reshape(dc.as_tensor(weights[0]), [1] * h_ax + [t.shape[h_ax], 1])
            wx = dc.as_tensor(weights[1])
            out = dc.tsum(dc.mul(dc.tsum(dc.mul(t, wy), axis=h_ax), wx), axis=-1)
        else:
            raise ValueError(f"marginalize: unknown method {method!r}")
        return out.data if plain else out
    if axis == "y":
        red = h_ax
    elif axis == "x":
        red = w_ax
    else:
        raise ValueError(f"marginalize: unknown axis {axis!r}")
    if method == "avg":
        out = dc.tmean(t, axis=red)
    elif method == "max":
        out = dc.tmax(t, axis=red)
    elif method == "weighted_sum":
        if weights is None:
            raise ValueError("marginalize: weighted_sum requires a weight vector")
        w = dc.as_tensor(weights)
        if w.shape != (t.shape[red],):
            raise dc.ShapeError(
                f"marginalize: weight length {w.shape} != reduced extent "
                f"{t.shape[red]}"
            )
        wshape = [1] * t.ndim
        wshape[red] = t.shape[red]
        out = dc.tsum(dc.mul(t, dc.reshape(w, wshape)), axis=red)
    else:
        raise ValueError(f"marginalize: unknown method {method!r}")
    return out.data if plain else out


def memory_cells(V: int, D: int, kind) -> int:
    """Exact cell count of one landmark set at resolution D.

    Assumes width = height = depth = D, the square comparison setting:
    full 3D costs V*D^3 cells, a 2D map plus a 1D depth line costs
    V*(D^2 + D), and three 1D lines cost 3*V*D.
    """
    if V < 1 or D < 1:
        raise ValueError(f"memory_cells: V and D must be >= 1, got V={V}, D={D}")
    V, D = int(V), int(D)
    kind = HeatmapKind(kind)
    if kind is HeatmapKind.VOXEL_XYZ:
        return V * D ** 3
    if kind is HeatmapKind.PIXEL_XY_PLUS_LIXEL_Z:
        return V * (D ** 2 + D)
    return 3 * V * D


def encode_target(coords, z_valid=True):
    """Package groundtruth coordinates with a per-axis validity mask.

    Losses stay in coordinate space, so encoding is identity plus the
    mask; a false ``z_valid`` zeroes the z column of the mask (2D-only
    labels).
    """
    if isinstance(coords, ContinuousCoords):
        coords = coords.coords
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
    mask = np.ones_like(coords)
    if not z_valid:
        mask[:, 2] = 0.0
    return CoordTarget(coords=coords, mask=mask)


# ----------------------------------------------------------------------
# debug dump format: one JSON header line, then little-endian float64
# ----------------------------------------------------------------------

def save_heatmap_dump(path, values, layout: HeatmapLayout, sigma: float):
    """Write a heatmap volume: JSON header line + raw '<f8' payload."""
    values = np.asarray(values, dtype=np.float64)
    header = {
        "magic": DUMP_MAGIC,
        "shape": list(values.shape),
        "layout": {
            "kind": layout.kind.value,
            "width": layout.width,
            "height": layout.height,
            "depth": layout.depth,
        },
        "sigma": sigma,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def load_heatmap_dump(path):
    """Read back (values, layout, sigma) written by save_heatmap_dump."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    header = json.loads(header_line.decode("utf-8"))
    if header.get("magic") != DUMP_MAGIC:
        raise ValueError(f"{path}: not a lixelkit heatmap dump")
    shape = tuple(header["shape"])
    values = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    lt = header["layout"]
    layout = HeatmapLayout(
        HeatmapKind(lt["kind"]), lt["width"], lt["height"], lt["depth"]
    )
    return values, layout, float(header["sigma"])
