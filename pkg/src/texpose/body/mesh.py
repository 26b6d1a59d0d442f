"""Articulated body mesh and linear blend skinning.

The mesh is a low-poly humanoid stand-in for a full statistical body model:
triangles with per-vertex UVs plus a small kinematic tree (a handful of
joints, each with a pivot and a parent). Poses are per-joint axis-angle
rotations applied about the joint pivots and composed down the tree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_WEIGHT_TOL = 1e-6


def rotation_from_axis_angle(axis_angle: np.ndarray) -> np.ndarray:
    """Rodrigues formula: (3,) axis-angle vector -> (3, 3) rotation matrix."""
    vec = np.asarray(axis_angle, dtype=np.float64)
    angle = float(np.linalg.norm(vec))
    if angle < 1e-12:
        return np.eye(3)
    axis = vec / angle
    kx, ky, kz = axis
    cross = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(angle) * cross + (1.0 - np.cos(angle)) * (cross @ cross)


@dataclass(frozen=True)
class BodyMesh:
    """Triangle mesh with UVs and skinning data.

    Attributes:
        vertices: (V, 3) rest-pose positions, model units.
        triangles: (T, 3) vertex index triples.
        uv_coords: (V, 2) texture coordinates in [0, 1]^2.
        joint_weights: (V, J) skinning weights; rows nonnegative, sum to 1.
        joint_pivots: (J, 3) rotation centers in rest pose.
        joint_parents: (J,) parent joint index, -1 for roots; parents precede
            children so chains can be composed in index order.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    uv_coords: np.ndarray
    joint_weights: np.ndarray
    joint_pivots: np.ndarray
    joint_parents: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64))
        object.__setattr__(self, "triangles", np.asarray(self.triangles, dtype=np.int64))
        object.__setattr__(self, "uv_coords", np.asarray(self.uv_coords, dtype=np.float64))
        object.__setattr__(self, "joint_weights", np.asarray(self.joint_weights, dtype=np.float64))
        object.__setattr__(self, "joint_pivots", np.asarray(self.joint_pivots, dtype=np.float64))
        object.__setattr__(self, "joint_parents", np.asarray(self.joint_parents, dtype=np.int64))
        v = self.num_vertices
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise ValueError(f"vertices must be (V, 3), got {self.vertices.shape}")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise ValueError(f"triangles must be (T, 3), got {self.triangles.shape}")
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= v):
            raise ValueError("triangle indices out of range")
        if self.uv_coords.shape != (v, 2):
            raise ValueError(f"uv_coords must be (V, 2), got {self.uv_coords.shape}")
        if self.uv_coords.min(initial=0.0) < 0.0 or self.uv_coords.max(initial=0.0) > 1.0:
            raise ValueError("uv_coords must lie in [0, 1]^2")
        if self.joint_weights.ndim != 2 or self.joint_weights.shape[0] != v:
            raise ValueError(f"joint_weights must be (V, J), got {self.joint_weights.shape}")
        if (self.joint_weights < -_WEIGHT_TOL).any():
            raise ValueError("skinning weights must be nonnegative")
        sums = self.joint_weights.sum(axis=1)
        if v and not np.allclose(sums, 1.0, atol=_WEIGHT_TOL):
            raise ValueError("skinning weight rows must sum to 1")
        j = self.num_joints
        if self.joint_pivots.shape != (j, 3) or not np.isfinite(self.joint_pivots).all():
            raise ValueError("joint_pivots must be finite (J, 3)")
        if self.joint_parents.shape != (j,):
            raise ValueError("joint_parents must be (J,)")
        for child, parent in enumerate(self.joint_parents):
            if parent >= child or parent < -1:
                raise ValueError("joint parents must precede children (-1 for roots)")

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_joints(self) -> int:
        return int(self.joint_weights.shape[1])


@dataclass(frozen=True)
class BodyModelState:
    """Per-frame pose: one axis-angle rotation per joint.

    theta is (J, 3); each row's norm is the rotation angle in radians and
    must stay in the principal range [0, pi].
    """

    theta: np.ndarray
    frame_index: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "theta", np.asarray(self.theta, dtype=np.float64))
        if self.theta.ndim != 2 or self.theta.shape[1] != 3:
            raise ValueError(f"theta must be (J, 3), got {self.theta.shape}")
        if not np.isfinite(self.theta).all():
            raise ValueError("theta must be finite")
        angles = np.linalg.norm(self.theta, axis=1)
        if (angles > np.pi + 1e-9).any():
            raise ValueError("axis-angle magnitudes must stay within [0, pi]")
        if self.frame_index < 0:
            raise ValueError("frame_index must be >= 0")


def joint_transforms(mesh: BodyMesh, state: BodyModelState) -> np.ndarray:
    """World transform per joint as (J, 3, 4) affine matrices.

    Each joint rotates about its pivot by its own axis-angle, composed with
    its parent's transform. Index order is a valid topological order by the
    mesh invariant.
    """
    j = mesh.num_joints
    out = np.zeros((j, 3, 4))
    for idx in range(j):
        rot = rotation_from_axis_angle(state.theta[idx])
        pivot = mesh.joint_pivots[idx]
        local = np.concatenate([rot, (pivot - rot @ pivot)[:, None]], axis=1)
        parent = mesh.joint_parents[idx]
        if parent < 0:
            out[idx] = local
        else:
            pr, pt = out[parent, :, :3], out[parent, :, 3]
            out[idx, :, :3] = pr @ local[:, :3]
            out[idx, :, 3] = pr @ local[:, 3] + pt
    return out


def pose_mesh(mesh: BodyMesh, state: BodyModelState) -> BodyMesh:
    """Deform the mesh by linear blend skinning; topology and UVs unchanged."""
    if state.theta.shape[0] != mesh.num_joints:
        raise ValueError(
            f"state has {state.theta.shape[0]} joints, mesh has {mesh.num_joints}"
        )
    transforms = joint_transforms(mesh, state)  # (J, 3, 4)
    homo = np.concatenate([mesh.vertices, np.ones((mesh.num_vertices, 1))], axis=1)
    per_joint = np.einsum("jab,vb->jva", transforms, homo)  # (J, V, 3)
    skinned = np.einsum("vj,jva->va", mesh.joint_weights, per_joint)
    return BodyMesh(
        vertices=skinned,
        triangles=mesh.triangles,
        uv_coords=mesh.uv_coords,
        joint_weights=mesh.joint_weights,
        joint_pivots=mesh.joint_pivots,
        joint_parents=mesh.joint_parents,
    )


# ====== Mesh text format ======
#
# Line-oriented, whitespace separated, '#' starts a comment:
#   v  x y z            vertex position (V lines)
#   vt u v              vertex UV, paired with v lines in order
#   f  a b c            triangle, 0-based vertex indices
#   j  px py pz parent  joint pivot and parent index (-1 for root)
#   w  w0 ... wJ-1      per-vertex weights, paired with v lines in order


def save_mesh(path: str | Path, mesh: BodyMesh) -> None:
    lines = ["# texpose body mesh"]
    for pos in mesh.vertices:
        lines.append("v " + " ".join(f"{x:.9g}" for x in pos))
    for uv in mesh.uv_coords:
        lines.append("vt " + " ".join(f"{x:.9g}" for x in uv))
    for tri in mesh.triangles:
        lines.append("f " + " ".join(str(int(i)) for i in tri))
    for pivot, parent in zip(mesh.joint_pivots, mesh.joint_parents):
        lines.append("j " + " ".join(f"{x:.9g}" for x in pivot) + f" {int(parent)}")
    for row in mesh.joint_weights:
        lines.append("w " + " ".join(f"{x:.9g}" for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def load_mesh(path: str | Path) -> BodyMesh:
    """Parse the text format above; invariants are enforced on construction."""
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[list[int]] = []
    pivots: list[list[float]] = []
    parents: list[int] = []
    weights: list[list[float]] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tag, *rest = line.split()
        try:
            if tag == "v":
                verts.append([float(x) for x in rest])
            elif tag == "vt":
                uvs.append([float(x) for x in rest])
            elif tag == "f":
                faces.append([int(x) for x in rest])
            elif tag == "j":
                pivots.append([float(x) for x in rest[:3]])
                parents.append(int(rest[3]))
            elif tag == "w":
                weights.append([float(x) for x in rest])
            else:
                raise ValueError(f"unknown tag {tag!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
    if not (len(verts) == len(uvs) == len(weights)):
        raise ValueError(
            f"{path}: v/vt/w line counts differ ({len(verts)}/{len(uvs)}/{len(weights)})"
        )
    return BodyMesh(
        vertices=np.array(verts, dtype=np.float64).reshape(len(verts), 3),
        triangles=np.array(faces, dtype=np.int64).reshape(len(faces), 3),
        uv_coords=np.array(uvs, dtype=np.float64).reshape(len(uvs), 2),
        joint_weights=np.array(weights, dtype=np.float64),
        joint_pivots=np.array(pivots, dtype=np.float64).reshape(len(pivots), 3),
        joint_parents=np.array(parents, dtype=np.int64),
    )
