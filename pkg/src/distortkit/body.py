"""Procedural articulated humanoid used in place of a licensed body model.

The body is 24 elliptic capsules, one per joint, each running from its joint
toward a child joint. Coordinates are meters in a camera-aligned frame
(x right, y down, z away from the viewer); the subject faces -z and the pelvis
joint sits at the origin in the rest pose.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial.transform import Rotation

from .errors import ShapeMismatch

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder",
    "right_shoulder", "left_elbow", "right_elbow", "left_wrist", "right_wrist",
    "left_hand", "right_hand",
)
PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])

# Rest joint positions, meters. Arms out in a T-pose.
_REST_JOINTS = np.array([
    [0.00, 0.00, 0.00],
    [0.09, 0.07, 0.00],
    [-0.09, 0.07, 0.00],
    [0.00, -0.11, 0.01],
    [0.10, 0.47, 0.00],
    [-0.10, 0.47, 0.00],
    [0.00, -0.24, 0.00],
    [0.11, 0.86, 0.02],
    [-0.11, 0.86, 0.02],
    [0.00, -0.30, 0.00],
    [0.12, 0.92, -0.09],
    [-0.12, 0.92, -0.09],
    [0.00, -0.50, 0.01],
    [0.07, -0.42, 0.00],
    [-0.07, -0.42, 0.00],
    [0.00, -0.58, -0.01],
    [0.18, -0.44, 0.00],
    [-0.18, -0.44, 0.00],
    [0.44, -0.44, 0.00],
    [-0.44, -0.44, 0.00],
    [0.68, -0.44, 0.00],
    [-0.68, -0.44, 0.00],
    [0.76, -0.44, 0.00],
    [-0.76, -0.44, 0.00],
])

# Per part: segment end (joint index, or None with an explicit offset) and
# cross-section radii (lateral, depth).
_SEGMENTS = {
    0: (3, None, (0.15, 0.10)),
    1: (4, None, (0.075, 0.075)),
    2: (5, None, (0.075, 0.075)),
    3: (6, None, (0.14, 0.10)),
    4: (7, None, (0.055, 0.055)),
    5: (8, None, (0.055, 0.055)),
    6: (9, None, (0.14, 0.10)),
    7: (10, None, (0.045, 0.04)),
    8: (11, None, (0.045, 0.04)),
    9: (12, None, (0.16, 0.10)),
    10: (None, (0.0, 0.0, -0.05), (0.04, 0.03)),
    11: (None, (0.0, 0.0, -0.05), (0.04, 0.03)),
    12: (15, None, (0.05, 0.05)),
    13: (16, None, (0.05, 0.05)),
    14: (17, None, (0.05, 0.05)),
    15: (None, (0.0, -0.11, 0.0), (0.09, 0.10)),
    16: (18, None, (0.05, 0.05)),
    17: (19, None, (0.05, 0.05)),
    18: (20, None, (0.04, 0.04)),
    19: (21, None, (0.04, 0.04)),
    20: (22, None, (0.035, 0.02)),
    21: (23, None, (0.035, 0.02)),
    22: (None, (0.06, 0.0, 0.0), (0.03, 0.015)),
    23: (None, (-0.06, 0.0, 0.0), (0.03, 0.015)),
}

UV_GRID = 5
UV_MARGIN = 0.1  # fraction of a chart cell left empty on each side


@dataclass(frozen=True)
class BodyConfig:
    n_around: int = 8
    body_rings: int = 3
    scale: float = 1.0


@dataclass(frozen=True, eq=False)
class ArticulatedBody:
    vertices: np.ndarray
    faces: np.ndarray
    part_id: np.ndarray
    uv: np.ndarray
    parents: np.ndarray
    rest_joints: np.ndarray
    skin_weights: sparse.csr_matrix
    regressor: sparse.csr_matrix
    joint_names: tuple = field(default=JOINT_NAMES)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_parts(self) -> int:
        return int(self.part_id.max()) + 1

    def validate(self) -> None:
        n = self.n_vertices
        if self.faces.min() < 0 or self.faces.max() >= n:
            raise ValueError("faces reference missing vertices")
        if self.part_id.min() < 0 or self.part_id.max() >= 24:
            raise ValueError("part ids must lie in [0, 24)")
        if np.any(self.uv < 0) or np.any(self.uv > 1):
            raise ValueError("uv outside the unit square")
        w = self.skin_weights
        if w.shape != (n, self.n_joints) or (w.data < 0).any():
            raise ValueError("bad skin weights")
        if not np.allclose(np.asarray(w.sum(axis=1)).ravel(), 1.0, rtol=0, atol=1e-9):
            raise ValueError("skin weights must sum to one per vertex")
        check_regressor(self.regressor, n)
        if self.parents[0] != -1 or np.any(self.parents[1:] >= np.arange(1, self.n_joints)):
            raise ValueError("skeleton must be a tree rooted at joint 0 with parents listed first")


def check_regressor(regressor, n_vertices: int) -> None:
    reg = sparse.csr_matrix(regressor)
    if reg.shape[1] != n_vertices:
        raise ShapeMismatch(f"regressor has {reg.shape[1]} columns for {n_vertices} vertices")
    if (reg.data < 0).any():
        raise ValueError("regressor weights must be non-negative")
    if not np.allclose(np.asarray(reg.sum(axis=1)).ravel(), 1.0, rtol=0, atol=1e-9):
        raise ValueError("regressor rows must sum to one")


def _cross_section_axes(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    depth_axis = ref - d * (ref @ d)
    depth_axis /= np.linalg.norm(depth_axis)
    lateral = np.cross(depth_axis, d)
    return lateral, depth_axis


def _capsule(start, end, radii, n_around, body_rings):
    """Vertices, uv (in [0,1]^2 local chart), faces of one capsule.

    Returns also the vertex indices of the ring centered on ``start``.
    """
    start = np.asarray(start, float)
    end = np.asarray(end, float)
    axis = end - start
    length = np.linalg.norm(axis)
    d = axis / length
    lat, dep = _cross_section_axes(d)
    rl, rd = radii
    cap_r = max(rl, rd)
    phi = 2.0 * np.pi * np.arange(n_around) / n_around
    ring_unit = np.cos(phi)[:, None] * rl * lat + np.sin(phi)[:, None] * rd * dep

    # (center offset along d, radius factor) for every ring, start cap to end cap
    c45 = np.sqrt(0.5)
    rings = [(-cap_r * c45, c45)]
    rings += [(length * t, 1.0) for t in np.linspace(0.0, 1.0, body_rings)]
    rings += [(length + cap_r * c45, c45)]
    n_rings = len(rings)
    span = length + 2 * cap_r

    verts, uvs = [], []
    verts.append(start - d * cap_r)
    uvs.append((0.5, 0.0))
    for offset, factor in rings:
        center = start + d * offset
        v = (offset + cap_r) / span
        for k in range(n_around + 1):
            verts.append(center + factor * ring_unit[k % n_around])
            uvs.append((k / n_around, v))
    verts.append(end + d * cap_r)
    uvs.append((0.5, 1.0))

    stride = n_around + 1
    first = 1
    faces = []
    for k in range(n_around):
        faces.append((0, first + k + 1, first + k))
    for r in range(n_rings - 1):
        a = first + r * stride
        b = a + stride
        for k in range(n_around):
            faces.append((a + k, a + k + 1, b + k + 1))
            faces.append((a + k, b + k + 1, b + k))
    last = first + (n_rings - 1) * stride
    tip = len(verts) - 1
    for k in range(n_around):
        faces.append((last + k, last + k + 1, tip))
    joint_ring = first + stride + np.arange(n_around)
    return np.array(verts), np.array(uvs), np.array(faces), joint_ring


def build_default_body(config: BodyConfig | None = None) -> ArticulatedBody:
    """Build the default humanoid: 24 joints, 24 parts, ~1.75 m tall."""
    config = config or BodyConfig()
    joints = _REST_JOINTS * config.scale
    all_v, all_uv, all_f, parts, rows, cols = [], [], [], [], [], []
    offset = 0
    cell = 1.0 / UV_GRID
    for p in range(24):
        end_joint, end_offset, radii = _SEGMENTS[p]
        start = joints[p]
        end = joints[end_joint] if end_joint is not None else start + np.array(end_offset) * config.scale
        radii = tuple(r * config.scale for r in radii)
        v, uv, f, ring = _capsule(start, end, radii, config.n_around, config.body_rings)
        col, row = p % UV_GRID, p // UV_GRID
        lo = cell * UV_MARGIN
        uv = np.stack([
            col * cell + lo + uv[:, 0] * (cell - 2 * lo),
            row * cell + lo + uv[:, 1] * (cell - 2 * lo),
        ], axis=-1)
        all_v.append(v)
        all_uv.append(uv)
        all_f.append(f + offset)
        parts.append(np.full(len(v), p))
        rows.extend([p] * len(ring))
        cols.extend((ring + offset).tolist())
        offset += len(v)

    vertices = np.concatenate(all_v)
    part_id = np.concatenate(parts).astype(np.int64)
    n = len(vertices)
    weights = sparse.csr_matrix((np.ones(n), (np.arange(n), part_id)), shape=(n, 24))
    reg_w = np.full(len(rows), 1.0 / config.n_around)
    regressor = sparse.csr_matrix((reg_w, (rows, cols)), shape=(24, n))
    body = ArticulatedBody(
        vertices=vertices,
        faces=np.concatenate(all_f).astype(np.int64),
        part_id=part_id,
        uv=np.concatenate(all_uv),
        parents=PARENTS.copy(),
        rest_joints=joints.copy(),
        skin_weights=weights,
        regressor=regressor,
    )
    body.validate()
    return body


@dataclass(frozen=True, eq=False)
class Pose:
    """Per-joint unit quaternions (w, x, y, z) plus a root translation in meters."""

    quats: np.ndarray
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.quats, dtype=float)
        if q.ndim != 2 or q.shape[1] != 4:
            raise ValueError("quaternions must be (K, 4)")
        if not np.allclose(np.linalg.norm(q, axis=1), 1.0, rtol=0, atol=1e-9):
            raise ValueError("quaternions must have unit norm")

    @classmethod
    def identity(cls, n_joints: int = 24) -> "Pose":
        q = np.zeros((n_joints, 4))
        q[:, 0] = 1.0
        return cls(q)

    @classmethod
    def from_rotvecs(cls, rotvecs, root_translation=None) -> "Pose":
        q = Rotation.from_rotvec(np.asarray(rotvecs, dtype=float)).as_quat()
        q = np.roll(q, 1, axis=1)
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        t = np.zeros(3) if root_translation is None else np.asarray(root_translation, float)
        return cls(q, t)

    def matrices(self) -> np.ndarray:
        q = np.asarray(self.quats, dtype=float)
        return Rotation.from_quat(np.roll(q, -1, axis=1)).as_matrix()


def joint_transforms(body: ArticulatedBody, pose: Pose) -> np.ndarray:
    """World transforms (K, 3, 4) of every joint under forward kinematics."""
    rots = pose.matrices()
    J = body.rest_joints
    G = np.zeros((body.n_joints, 3, 4))
    for j in range(body.n_joints):
        R = rots[j]
        local_t = J[j] - R @ J[j]
        p = body.parents[j]
        if p < 0:
            G[j, :, :3] = R
            G[j, :, 3] = local_t + np.asarray(pose.root_translation, float)
        else:
            A_p, t_p = G[p, :, :3], G[p, :, 3]
            G[j, :, :3] = A_p @ R
            G[j, :, 3] = A_p @ local_t + t_p
    return G


def pose_body(body: ArticulatedBody, pose: Pose) -> np.ndarray:
    """Linear blend skinning of the rest vertices; returns (N, 3) posed vertices."""
    G = joint_transforms(body, pose).reshape(body.n_joints, 12)
    per_vertex = (body.skin_weights.toarray() @ G).reshape(-1, 3, 4)
    v = body.vertices
    return np.einsum("nij,nj->ni", per_vertex[:, :, :3], v) + per_vertex[:, :, 3]


def posed_joints(body: ArticulatedBody, pose: Pose) -> np.ndarray:
    G = joint_transforms(body, pose)
    return np.einsum("kij,kj->ki", G[:, :, :3], body.rest_joints) + G[:, :, 3]


def regress_joints(regressor, vertices) -> np.ndarray:
    """Joints as the regressor-weighted sum of vertices, (K, 3)."""
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 3:
        raise ShapeMismatch(f"vertices must be (N, 3), got {v.shape}")
    if regressor.shape[1] != v.shape[0]:
        raise ShapeMismatch(f"regressor expects {regressor.shape[1]} vertices, got {v.shape[0]}")
    return np.asarray(regressor @ v)


def default_pose(n_joints: int = 24) -> Pose:
    """Relaxed stance: arms lowered and reaching forward, knees slightly bent."""
    rv = np.zeros((n_joints, 3))
    rv[16] = [0.0, 0.0, np.radians(50)]
    rv[17] = [0.0, 0.0, np.radians(-50)]
    rv[18] = [0.0, np.radians(40), 0.0]
    rv[19] = [0.0, np.radians(-40), 0.0]
    rv[4] = [np.radians(15), 0.0, 0.0]
    rv[5] = [np.radians(15), 0.0, 0.0]
    return Pose.from_rotvecs(rv)


def random_pose(rng: np.random.Generator, n_joints: int = 24, max_angle_deg: float = 25.0) -> Pose:
    """The default stance perturbed by a random rotation at every non-root joint."""
    base = Rotation.from_quat(np.roll(default_pose(n_joints).quats, -1, axis=1))
    axes = rng.normal(size=(n_joints, 3))
    axes /= np.linalg.norm(axes, axis=1, keepdims=True)
    angles = np.radians(max_angle_deg) * rng.uniform(0.0, 1.0, size=(n_joints, 1))
    jitter = axes * angles
    jitter[0] = 0.0
    rv = (base * Rotation.from_rotvec(jitter)).as_rotvec()
    return Pose.from_rotvecs(rv)
