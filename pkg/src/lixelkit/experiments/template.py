"""Procedurally generated articulated template: a chain of capsule
segments with a kinematic tree, rigid skinning, and a row-stochastic
joint regressor. Stands in for a licensed body/hand template while
keeping the same mathematical shape (vertices, faces, J x V regressor).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..meshgeom import JointRegressor, TriMesh


@dataclass
class ToyTemplate:
    rest_mesh: TriMesh
    regressor: JointRegressor
    skinning: np.ndarray        # [V, J] one-hot rigid segment assignment
    parents: np.ndarray         # [J] kinematic tree, -1 for the root
    rest_joints: np.ndarray     # [J, 3] millimeters

    @property
    def num_joints(self):
        return len(self.parents)

    @property
    def num_vertices(self):
        return self.rest_mesh.num_vertices

    @property
    def num_params(self):
        # per-joint axis-angle plus a global translation
        return 3 * self.num_joints + 3


def _capsule_segment(p0, p1, radius, rings, sectors):
    """Closed spindle from p0 to p1: two pole vertices and ``rings``
    circles of ``sectors`` vertices, cylindrical wall with cone caps."""
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length
    # orthonormal frame around the bone axis
    ref = np.array([1.0, 0.0, 0.0]) if abs(axis[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    v = np.cross(axis, u)

    verts = [p0]
    for k in range(rings):
        t = (k + 1) / (rings + 1)
        center = p0 + t * length * axis
        for s in range(sectors):
            ang = 2.0 * np.pi * s / sectors
            verts.append(center + radius * (np.cos(ang) * u + np.sin(ang) * v))
    verts.append(p1)
    verts = np.array(verts)

    faces = []
    top = len(verts) - 1
    ring = lambda k, s: 1 + k * sectors + (s % sectors)
    for s in range(sectors):
        faces.append([0, ring(0, s + 1), ring(0, s)])
    for k in range(rings - 1):
        for s in range(sectors):
            a, b = ring(k, s), ring(k, s + 1)
            c, d = ring(k + 1, s + 1), ring(k + 1, s)
            faces.append([a, b, c])
            faces.append([a, c, d])
    for s in range(sectors):
        faces.append([top, ring(rings - 1, s), ring(rings - 1, s + 1)])
    faces = np.array(faces)

    # orient consistently outward (positive enclosed volume)
    v0, v1, v2 = verts[faces[:, 0]], verts[faces[:, 1]], verts[faces[:, 2]]
    volume = np.einsum("ij,ij->i", v0 - p0, np.cross(v1 - p0, v2 - p0)).sum() / 6.0
    if volume < 0:
        faces = faces[:, ::-1]
    return verts, faces


def make_template(num_joints=8, bone_length=120.0, radius=30.0,
                  rings=3, sectors=8, regressor_k=8):
    """Capsule chain along +y with one segment per bone."""
    if num_joints < 2:
        raise ValueError("template needs at least 2 joints")
    parents = np.array([-1] + list(range(num_joints - 1)))
    rest_joints = np.stack(
        [np.zeros(num_joints), np.arange(num_joints) * bone_length, np.zeros(num_joints)],
        axis=1,
    )
    all_verts, all_faces, seg_of_vertex = [], [], []
    offset = 0
    for j in range(num_joints - 1):
        verts, faces = _capsule_segment(rest_joints[j], rest_joints[j + 1],
                                        radius, rings, sectors)
        all_verts.append(verts)
        all_faces.append(faces + offset)
        seg_of_vertex.extend([j] * len(verts))
        offset += len(verts)
    vertices = np.concatenate(all_verts)
    faces = np.concatenate(all_faces)
    mesh = TriMesh(vertices, faces)

    V = len(vertices)
    skinning = np.zeros((V, num_joints))
    skinning[np.arange(V), seg_of_vertex] = 1.0

    weights = np.zeros((num_joints, V))
    for j in range(num_joints):
        d = np.linalg.norm(vertices - rest_joints[j], axis=1)
        nearest = np.argsort(d)[:regressor_k]
        weights[j, nearest] = 1.0 / regressor_k
    regressor = JointRegressor(weights)

    return ToyTemplate(
        rest_mesh=mesh,
        regressor=regressor,
        skinning=skinning,
        parents=parents,
        rest_joints=rest_joints,
    )


def rodrigues(rotvec):
    """Axis-angle [3] to rotation matrix."""
    theta = np.linalg.norm(rotvec)
    if theta < 1e-12:
        return np.eye(3)
    k = rotvec / theta
    kx = np.array([
        [0.0, -k[2], k[1]],
        [k[2], 0.0, -k[0]],
        [-k[1], k[0], 0.0],
    ])
    return np.eye(3) + np.sin(theta) * kx + (1.0 - np.cos(theta)) * (kx @ kx)


def forward_kinematics(template: ToyTemplate, rotations, translation=None):
    """Pose the template: per-joint axis-angle rotations compose down
    the chain, vertices follow their segment's proximal joint rigidly.

    Returns (vertices [V, 3], joints [J, 3]). The identity pose with
    zero translation reproduces the rest mesh exactly.
    """
    J = template.num_joints
    rotations = np.asarray(rotations, dtype=np.float64).reshape(J, 3)
    t = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
    rest = template.rest_joints
    world_r = [None] * J
    world_p = np.zeros((J, 3))
    for j in range(J):
        local = rodrigues(rotations[j])
        parent = template.parents[j]
        if parent < 0:
            world_r[j] = local
            world_p[j] = rest[j] + t
        else:
            world_r[j] = world_r[parent] @ local
            world_p[j] = world_p[parent] + world_r[parent] @ (rest[j] - rest[parent])
    seg = template.skinning.argmax(axis=1)
    rest_v = template.rest_mesh.vertices
    vertices = np.empty_like(rest_v)
    for j in range(J):
        mask = seg == j
        if mask.any():
            vertices[mask] = (rest_v[mask] - rest[j]) @ world_r[j].T + world_p[j]
    return vertices, world_p


def params_to_pose(template: ToyTemplate, params):
    """Split a flat parameter vector into (rotations [J, 3], translation)."""
    params = np.asarray(params, dtype=np.float64).reshape(-1)
    J = template.num_joints
    if params.size != template.num_params:
        raise ValueError(
            f"expected {template.num_params} parameters, got {params.size}"
        )
    return params[: 3 * J].reshape(J, 3), params[3 * J:]
