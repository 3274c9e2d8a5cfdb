"""Triangle meshes, joint regression, the geometric training losses,
and the evaluation metrics (root-aligned and Procrustes-aligned mean
per-joint errors).

Losses operate on the decoded coordinate arrays: predictions may be
autodiff tensors (the loss is then differentiable) while groundtruth is
always plain numpy. Face pairs on shared mesh edges are counted once
per incident face.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

# Predicted edges shorter than this contribute zero loss and zero
# gradient instead of an exploding unit vector.
EDGE_EPS = 1e-9
FACE_AREA_EPS = 1e-10
_PAIRS = ((0, 1), (0, 2), (1, 2))


@dataclass
class TriMesh:
    """Vertex coordinates [V, 3] plus triangle indices [F, 3]."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be [V, 3], got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise ValueError(f"faces must be [F, 3], got {self.faces.shape}")
        V = len(self.vertices)
        if V < 3 or len(self.faces) < 1:
            raise ValueError(f"mesh needs V >= 3 and F >= 1, got V={V}, F={len(self.faces)}")
        if self.faces.min() < 0 or self.faces.max() >= V:
            raise ValueError(
                f"face indices must lie in [0, {V}), got "
                f"[{self.faces.min()}, {self.faces.max()}]"
            )
        f = self.faces
        if ((f[:, 0] == f[:, 1]) | (f[:, 0] == f[:, 2]) | (f[:, 1] == f[:, 2])).any():
            raise ValueError("faces with repeated vertex indices are not allowed")

    @property
    def num_vertices(self):
        return len(self.vertices)

    def with_vertices(self, vertices):
        return TriMesh(vertices, self.faces)


@dataclass
class JointRegressor:
    """Row-stochastic J x V matrix mapping mesh vertices to joints."""

    weights: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ValueError(f"regressor must be [J, V], got {self.weights.shape}")
        if (self.weights < 0).any():
            raise ValueError("regressor weights must be non-negative")
        sums = self.weights.sum(axis=1)
        if not np.allclose(sums, 1.0, atol=1e-6):
            raise ValueError(f"regressor rows must sum to 1, got {sums}")

    @property
    def num_joints(self):
        return self.weights.shape[0]


@dataclass
class LossWeights:
    """Weight of the normal term plus per-term enable switches."""

    lambda_normal: float = 0.1
    use_pose_posenet: bool = True
    use_pose_meshnet: bool = True
    use_vertex: bool = True
    use_normal: bool = True
    use_edge: bool = True

    def __post_init__(self):
        if self.lambda_normal < 0:
            raise ValueError("lambda_normal must be >= 0")


@dataclass
class LossParts:
    """The five loss terms, individually retrievable for logging."""

    pose_posenet: object = 0.0
    pose_meshnet: object = 0.0
    vertex: object = 0.0
    normal: object = 0.0
    edge: object = 0.0

    def values(self):
        return {
            "loss_pose_posenet": _scalar(self.pose_posenet),
            "loss_pose_meshnet": _scalar(self.pose_meshnet),
            "loss_vertex": _scalar(self.vertex),
            "loss_normal": _scalar(self.normal),
            "loss_edge": _scalar(self.edge),
        }


def _scalar(x):
    return float(x.item()) if isinstance(x, Tensor) else float(x)


def regress_joints(regressor, vertices):
    """Joints = regressor weights times vertices; differentiable."""
    w = regressor.weights if isinstance(regressor, JointRegressor) else np.asarray(regressor)
    if isinstance(vertices, Tensor):
        if vertices.shape[0] != w.shape[1]:
            raise dc.ShapeError(
                f"regress_joints: regressor expects {w.shape[1]} vertices, "
                f"got {vertices.shape[0]}"
            )
        return dc.matmul(Tensor(w), vertices)
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.shape[0] != w.shape[1]:
        raise dc.ShapeError(
            f"regress_joints: regressor expects {w.shape[1]} vertices, "
            f"got {vertices.shape[0]}"
        )
    return w @ vertices


def l1_coord_loss(pred, gt, axis_mask=None):
    """Masked L1 over landmark coordinates.

    pred/gt are [N, 3] or batched [B, N, 3]; mask entries in {0, 1}
    silence individual axes (a zeroed z column realizes depth-free
    labels). Sums over landmarks and axes, averages over the batch.
    All-masked input yields 0.
    """
    t, plain = (pred, False) if isinstance(pred, Tensor) else (Tensor(pred), True)
    gt = np.asarray(gt, dtype=np.float64)
    if t.shape != gt.shape:
        raise dc.ShapeError(f"l1_coord_loss: pred {t.shape} vs gt {gt.shape}")
    if axis_mask is None:
        axis_mask = np.ones_like(gt)
    mask = np.asarray(axis_mask, dtype=np.float64)
    out = dc.tsum(dc.mul(dc.absolute(dc.sub(t, gt)), mask))
    if t.ndim == 3:
        out = dc.mul(out, 1.0 / t.shape[0])
    return out.data.item() if plain else out


def face_normals(vertices, faces):
    """Unit normals per face from the winding (right-hand rule)."""
    v = np.asarray(vertices, dtype=np.float64)
    e1 = v[faces[:, 1]] - v[faces[:, 0]]
    e2 = v[faces[:, 2]] - v[faces[:, 0]]
    n = np.cross(e1, e2)
    lengths = np.linalg.norm(n, axis=1)
    if (lengths <= 2.0 * FACE_AREA_EPS).any():
        raise ValueError("degenerate groundtruth face (area below threshold)")
    return n / lengths[:, None]


def _unpack_mesh_pair(pred, gt, faces):
    if isinstance(pred, TriMesh):
        if isinstance(gt, TriMesh):
            if not np.array_equal(pred.faces, gt.faces):
                raise ValueError("pred and gt meshes must share the same faces")
            return pred.vertices, gt.vertices, pred.faces
        return pred.vertices, np.asarray(gt, dtype=np.float64), pred.faces
    if isinstance(gt, TriMesh):
        return pred, gt.vertices, gt.faces
    if faces is None:
        raise ValueError("faces required when meshes are given as raw vertex arrays")
    return pred, np.asarray(gt, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def normal_loss(pred, gt, faces=None):
    """Penalize predicted edges that leave the groundtruth face plane.

    For every face and each of its three vertex pairs, take the absolute
    dot product between the normalized predicted edge and the
    groundtruth unit face normal. Zero exactly when the predicted mesh
    matches the groundtruth (every edge lies in its own face plane).
    """
    pv, gv, f = _unpack_mesh_pair(pred, gt, faces)
    t = pv if isinstance(pv, Tensor) else Tensor(np.asarray(pv, dtype=np.float64))
    plain = not isinstance(pv, Tensor)
    normals = face_normals(gv, f)
    total = None
    for i, j in _PAIRS:
        e = dc.sub(dc.gather_rows(t, f[:, i]), dc.gather_rows(t, f[:, j]))
        length = dc.l2_norm(e, axis=1, keepdims=True)
        live = (length.data >= EDGE_EPS).astype(np.float64)
        unit = dc.div(e, length)
        dot = dc.tsum(dc.mul(unit, normals), axis=1, keepdims=True)
        term = dc.tsum(dc.mul(dc.absolute(dot), live))
        total = term if total is None else dc.add(total, term)
    return total.data.item() if plain else total


def edge_loss(pred, gt, faces=None):
    """Absolute difference of predicted vs groundtruth edge lengths,
    per face and vertex pair (shared edges counted once per face)."""
    pv, gv, f = _unpack_mesh_pair(pred, gt, faces)
    t = pv if isinstance(pv, Tensor) else Tensor(np.asarray(pv, dtype=np.float64))
    plain = not isinstance(pv, Tensor)
    total = None
    for i, j in _PAIRS:
        e = dc.sub(dc.gather_rows(t, f[:, i]), dc.gather_rows(t, f[:, j]))
        length = dc.l2_norm(e, axis=1)
        gt_len = np.linalg.norm(gv[f[:, i]] - gv[f[:, j]], axis=1)
        term = dc.tsum(dc.absolute(dc.sub(length, gt_len)))
        total = term if total is None else dc.add(total, term)
    return total.data.item() if plain else total


def total_loss(parts: LossParts, weights: LossWeights = None):
    """Combine the five terms: unit-weight sum with the normal term
    scaled by lambda. Disabled terms contribute exactly zero."""
    w = weights or LossWeights()

    def pick(term, enabled):
        if not enabled:
            return None
        return term

    unit_terms = [
        pick(parts.pose_posenet, w.use_pose_posenet),
        pick(parts.pose_meshnet, w.use_pose_meshnet),
        pick(parts.vertex, w.use_vertex),
        pick(parts.edge, w.use_edge),
    ]
    unit_terms = [t for t in unit_terms if t is not None]
    tensors = any(isinstance(t, Tensor) for t in unit_terms) or (
        w.use_normal and isinstance(parts.normal, Tensor)
    )
    if tensors:
        total = None
        for t in unit_terms:
            t = dc.as_tensor(t)
            total = t if total is None else dc.add(total, t)
        if w.use_normal:
            scaled = dc.mul(dc.as_tensor(parts.normal), w.lambda_normal)
            total = scaled if total is None else dc.add(total, scaled)
        return total if total is not None else Tensor(0.0)
    total = 0.0
    for t in unit_terms:
        total += float(t)
    if w.use_normal:
        total += w.lambda_normal * float(parts.normal)
    return total


def mpjpe(pred_joints, gt_joints, root_index=0):
    """Mean per-joint Euclidean distance after root-joint alignment."""
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"mpjpe: expected matching [J, 3] arrays, got {pred.shape} vs {gt.shape}")
    J = pred.shape[0]
    if J < 2:
        raise ValueError(f"mpjpe: needs at least 2 joints, got {J}")
    if not 0 <= root_index < J:
        raise IndexError(f"mpjpe: root index {root_index} outside [0, {J})")
    p = pred - pred[root_index]
    g = gt - gt[root_index]
    return float(np.linalg.norm(p - g, axis=1).mean())


def similarity_align(pred, gt, with_scale=True):
    """Optimal rotation R, scale s and translation t mapping pred onto
    gt in the least-squares sense (SVD of the cross-covariance with a
    determinant sign correction, so reflections are excluded)."""
    x = np.asarray(pred, dtype=np.float64)
    y = np.asarray(gt, dtype=np.float64)
    n = x.shape[0]
    mx, my = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - mx, y - my
    var_x = (xc ** 2).sum() / n
    if var_x < 1e-18:
        raise ValueError("similarity_align: source points are all coincident")
    if np.linalg.matrix_rank(yc, tol=1e-9 * max(1.0, np.abs(yc).max())) < 2:
        raise ValueError("similarity_align: target points are collinear")
    cov = yc.T @ xc / n
    try:
        u, d, vt = np.linalg.svd(cov)
    except np.linalg.LinAlgError as err:
        raise ValueError(f"similarity_align: SVD failed ({err})")
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1.0
    r = u @ s @ vt
    scale = float(np.trace(np.diag(d) @ s) / var_x) if with_scale else 1.0
    t = my - scale * r @ mx
    return r, scale, t


def pa_mpjpe(pred_joints, gt_joints, with_scale=True):
    """Mean per-joint distance after optimal similarity alignment."""
    pred = np.asarray(pred_joints, dtype=np.float64)
    gt = np.asarray(gt_joints, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise ValueError(f"pa_mpjpe: expected matching [J, 3] arrays, got {pred.shape} vs {gt.shape}")
    if pred.shape[0] < 3:
        raise ValueError(f"pa_mpjpe: needs at least 3 joints, got {pred.shape[0]}")
    r, s, t = similarity_align(pred, gt, with_scale=with_scale)
    aligned = s * pred @ r.T + t
    return float(np.linalg.norm(aligned - gt, axis=1).mean())


# ----------------------------------------------------------------------
# OBJ subset: v and f records, 1-based indices, triangles only
# ----------------------------------------------------------------------

def write_obj(path, mesh: TriMesh):
    with open(path, "w", encoding="utf-8") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def read_obj(path):
    vertices, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0] == "#":
                continue
            if parts[0] == "v":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: expected 'v x y z'")
                vertices.append([float(p) for p in parts[1:]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: triangles only")
                idx = []
                for p in parts[1:]:
                    if "/" in p:
                        raise ValueError(
                            f"{path}:{lineno}: only plain 'f i j k' faces are supported"
                        )
                    idx.append(int(p) - 1)
                faces.append(idx)
            # any other record type is outside the supported subset
    return TriMesh(np.array(vertices), np.array(faces))
