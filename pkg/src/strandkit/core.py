"""Core geometric types and conversions between Gaussian segments and strands.

Conventions used throughout the package:

* points and directions are float64 numpy arrays of shape (3,); stacks of
  them have shape (N, 3). All coordinates are millimeters.
* directions are unit length (checked to 1e-9 where an invariant requires it).
* quaternions are (w, x, y, z) arrays of shape (4,), unit norm.
* opacity and mask are stored as logits and mapped through the sigmoid on
  read, so downstream optimization stays unconstrained.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DegenerateSegment

# Shortest representable segment, in mm. Consecutive joints closer than this
# are considered coincident.
SEGMENT_EPS = 1e-6

DEFAULT_THICKNESS = 0.1
DEFAULT_COLOR = (0.35, 0.22, 0.12)

_XHAT = np.array([1.0, 0.0, 0.0])


def normalize(v: np.ndarray) -> np.ndarray:
    """Unit vector along v. Raises DegenerateSegment if ||v|| <= SEGMENT_EPS."""
    v = np.asarray(v, dtype=float)
    n = float(np.linalg.norm(v))
    if n <= SEGMENT_EPS:
        raise DegenerateSegment(f"cannot normalize near-zero vector (norm={n:g})")
    return v / n


def sigmoid(x):
    return expit(x)


def logit(p, clamp: float = 15.0):
    """Inverse sigmoid, clamped to [-clamp, clamp] to keep logits finite."""
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(np.clip(np.log(p / (1.0 - p)), -clamp, clamp))


# ---------------------------------------------------------------------------
# rotations
# ---------------------------------------------------------------------------

def rodrigues_align(direction: np.ndarray) -> np.ndarray:
    """Rotation matrix taking the x-axis onto `direction`.

    Uses R = I + K + K^2 / (1 + x.d) with K the cross-product matrix of
    x_hat x d. The antiparallel singularity (no perpendicular component,
    x.d = -1) returns the fixed convention diag(-1, -1, 1), a 180 degree
    turn about z.
    """
    d = np.asarray(direction, dtype=float)
    c = d[0]  # x_hat . d
    if c < 0:
        # 1 + c rewritten as (dy^2 + dz^2)/(1 - c): full relative precision
        # arbitrarily close to the antiparallel pole
        denom = (d[1] * d[1] + d[2] * d[2]) / (1.0 - c)
        if denom <= 0.0:
            return np.diag([-1.0, -1.0, 1.0])
    else:
        denom = 1.0 + c
    k = np.cross(_XHAT, d)
    K = np.array([
        [0.0, -k[2], k[1]],
        [k[2], 0.0, -k[0]],
        [-k[1], k[0], 0.0],
    ])
    return np.eye(3) + K + (K @ K) / denom


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0."""
    R = np.asarray(R, dtype=float)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2
        q = np.array([0.25 * s,
                      (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s,
                      (R[1, 0] - R[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


# ---------------------------------------------------------------------------
# domain records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianSegment:
    """One anisotropic 3D Gaussian with hair-specific extras.

    mu : (3,) center, mm.  scale : (3,) per-axis scale (s_x = segment length,
    s_y = s_z = thickness), mm.  rotation : (4,) unit quaternion (w, x, y, z).
    opacity_logit / mask_logit are pre-sigmoid.  color is linear RGB
    (degree-0 SH, no view dependence).
    """

    mu: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity_logit: float = 4.0
    mask_logit: float = 4.0
    color: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_COLOR))

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen(self.mu, (3,)))
        object.__setattr__(self, "scale", _frozen(self.scale, (3,)))
        object.__setattr__(self, "rotation", _frozen(self.rotation, (4,)))
        object.__setattr__(self, "color", _frozen(self.color, (3,)))
        if not np.all(self.scale > 0):
            raise ValueError(f"scale components must be positive, got {self.scale}")
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-9:
            raise ValueError("rotation quaternion must be unit norm")

    @property
    def opacity(self) -> float:
        return float(sigmoid(self.opacity_logit))

    @property
    def mask(self) -> float:
        return float(sigmoid(self.mask_logit))

    @property
    def axis(self) -> np.ndarray:
        """Unit direction of the major (x) axis in world space."""
        return quat_to_matrix(self.rotation) @ _XHAT


@dataclass(frozen=True)
class Strand:
    """Ordered polyline of 3D joints with per-segment thickness.

    joints : (J, 3), J >= 2, consecutive joints more than SEGMENT_EPS apart.
    thickness : (J-1,) positive, mm. mask/opacity logits and color are
    per-strand scalars carried through the pipeline.
    """

    id: int
    joints: np.ndarray
    thickness: np.ndarray | None = None
    mask_logit: float = 4.0
    opacity_logit: float = 4.0
    color: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_COLOR))

    def __post_init__(self):
        joints = np.atleast_2d(np.asarray(self.joints, dtype=float))
        if joints.ndim != 2 or joints.shape[1] != 3 or joints.shape[0] < 2:
            raise ValueError(f"joints must have shape (J>=2, 3), got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValueError("joints must be finite")
        seg = np.linalg.norm(np.diff(joints, axis=0), axis=1)
        if np.any(seg <= SEGMENT_EPS):
            raise DegenerateSegment(
                f"strand {self.id}: consecutive joints closer than {SEGMENT_EPS} mm")
        thickness = self.thickness
        if thickness is None:
            thickness = np.full(joints.shape[0] - 1, DEFAULT_THICKNESS)
        thickness = np.asarray(thickness, dtype=float)
        if thickness.shape != (joints.shape[0] - 1,):
            raise ValueError("thickness must have one entry per segment")
        if not np.all(thickness > 0):
            raise ValueError("thickness entries must be positive")
        joints.flags.writeable = False
        thickness.flags.writeable = False
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "thickness", thickness)
        object.__setattr__(self, "color", _frozen(self.color, (3,)))

    @property
    def num_joints(self) -> int:
        return self.joints.shape[0]

    @property
    def mask(self) -> float:
        return float(sigmoid(self.mask_logit))

    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.joints, axis=0), axis=1).sum())

    def reversed(self) -> "Strand":
        return self.with_joints(self.joints[::-1], self.thickness[::-1])

    def with_joints(self, joints, thickness=None) -> "Strand":
        return Strand(self.id, np.array(joints),
                      None if thickness is None else np.array(thickness),
                      self.mask_logit, self.opacity_logit, np.array(self.color))


@dataclass(frozen=True)
class StrandSet:
    """A hairstyle: a collection of strands with a unit scale (mm per model unit)."""

    strands: tuple[Strand, ...]
    unit_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "strands", tuple(self.strands))
        ids = [s.id for s in self.strands]
        if len(ids) != len(set(ids)):
            raise ValueError("strand ids must be unique")

    def __len__(self) -> int:
        return len(self.strands)

    def __iter__(self):
        return iter(self.strands)

    def total_length(self) -> float:
        return float(sum(s.length() for s in self.strands))

    def average_length(self) -> float:
        return self.total_length() / len(self.strands) if self.strands else 0.0

    def total_joints(self) -> int:
        return int(sum(s.num_joints for s in self.strands))

    def with_strands(self, strands) -> "StrandSet":
        return StrandSet(tuple(strands), self.unit_scale)


@dataclass(frozen=True)
class OrientedPointCloud:
    """3D points with sign-ambiguous unit line directions.

    Shared representation for the refinement data term and the evaluation
    metrics: positions (N, 3) mm, directions (N, 3) unit.
    """

    points: np.ndarray
    directions: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        dirs = np.asarray(self.directions, dtype=float).reshape(-1, 3)
        if pts.shape != dirs.shape:
            raise ValueError("points and directions must have equal shapes")
        if len(dirs) and np.any(np.abs(np.linalg.norm(dirs, axis=1) - 1.0) > 1e-6):
            raise ValueError("directions must be unit length")
        pts.flags.writeable = False
        dirs.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "directions", dirs)

    def __len__(self) -> int:
        return len(self.points)


def _frozen(a, shape) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(shape)
    a = np.array(a)  # private copy
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# segment <-> gaussian conversions
# ---------------------------------------------------------------------------

def segment_to_gaussian(p_a, p_b, thickness: float, *, opacity_logit: float = 4.0,
                        mask_logit: float = 4.0, color=DEFAULT_COLOR) -> GaussianSegment:
    """Model the segment p_a -> p_b as an x-axis-aligned cylinder Gaussian.

    Center at the midpoint, scale (length, thickness, thickness), rotation
    aligning the x-axis with the segment direction.
    """
    p_a = np.asarray(p_a, dtype=float)
    p_b = np.asarray(p_b, dtype=float)
    if thickness <= 0:
        raise ValueError("thickness must be positive")
    v = p_b - p_a
    length = float(np.linalg.norm(v))
    if length <= SEGMENT_EPS:
        raise DegenerateSegment("segment endpoints coincide")
    R = rodrigues_align(v / length)
    return GaussianSegment(
        mu=(p_a + p_b) / 2.0,
        scale=np.array([length, thickness, thickness]),
        rotation=matrix_to_quat(R),
        opacity_logit=opacity_logit,
        mask_logit=mask_logit,
        color=np.asarray(color, dtype=float),
    )


def covariance(g: GaussianSegment) -> np.ndarray:
    """World-space covariance R S S^T R^T (symmetric positive definite)."""
    R = quat_to_matrix(g.rotation)
    S = np.diag(g.scale)
    return R @ S @ S.T @ R.T


def gaussian_to_strand(g: GaussianSegment, strand_id: int = 0) -> Strand:
    """Convert a Gaussian segment into a two-joint strand.

    Joints sit at mu +- s_x/2 along the rotated x-axis, so the strand spans
    the Gaussian's one-sigma extent on its major axis. Thickness is s_y.
    """
    d = g.axis
    half = 0.5 * g.scale[0] * d
    return Strand(
        id=strand_id,
        joints=np.stack([g.mu - half, g.mu + half]),
        thickness=np.array([g.scale[1]]),
        mask_logit=g.mask_logit,
        opacity_logit=g.opacity_logit,
        color=np.array(g.color),
    )


def strand_length(s: Strand) -> float:
    """Total arc length of the strand polyline, mm."""
    return s.length()


# ---------------------------------------------------------------------------
# polyline utilities shared by the samplers
# ---------------------------------------------------------------------------

def segment_vectors(joints: np.ndarray) -> np.ndarray:
    return np.diff(np.asarray(joints, dtype=float), axis=0)


def cumulative_lengths(joints: np.ndarray) -> np.ndarray:
    """Arc length at every joint: shape (J,), starts at 0."""
    seg = np.linalg.norm(segment_vectors(joints), axis=1)
    out = np.empty(len(seg) + 1)
    out[0] = 0.0
    np.cumsum(seg, out=out[1:])
    return out


def arc_positions(joints: np.ndarray, arcs: np.ndarray):
    """Points and local tangents at given arc lengths along a polyline.

    Returns (positions (K,3), directions (K,3), segment index (K,), t (K,)).
    Arc values are clamped to [0, total length]; a value landing exactly on a
    joint belongs to the segment starting there (the last joint belongs to
    the final segment).
    """
    joints = np.asarray(joints, dtype=float)
    v = segment_vectors(joints)
    seg_len = np.linalg.norm(v, axis=1)
    cum = cumulative_lengths(joints)
    arcs = np.clip(np.asarray(arcs, dtype=float), 0.0, cum[-1])
    idx = np.clip(np.searchsorted(cum, arcs, side="right") - 1, 0, len(seg_len) - 1)
    t = (arcs - cum[idx]) / seg_len[idx]
    pos = joints[idx] + t[:, None] * v[idx]
    dirs = v[idx] / seg_len[idx][:, None]
    return pos, dirs, idx, t


def sample_arcs(length: float, spacing: float) -> np.ndarray:
    """Arc-length sample stations: multiples of `spacing`, or the midpoint
    for strands shorter than one spacing."""
    if length < spacing:
        return np.array([0.5 * length])
    n = int(np.floor(length / spacing)) + 1
    return spacing * np.arange(n, dtype=float)


def slice_polyline(joints: np.ndarray, s0: float, s1: float,
                   end_clearance: float = 0.0) -> np.ndarray:
    """Sub-polyline between arc lengths s0 < s1.

    Interior joints closer than `end_clearance` to either cut are dropped so
    the piece never starts or ends with a sliver segment; the cut endpoints
    themselves are exact.
    """
    joints = np.asarray(joints, dtype=float)
    cum = cumulative_lengths(joints)
    if not 0.0 <= s0 < s1 <= cum[-1] + 1e-9:
        raise ValueError(f"invalid slice [{s0}, {s1}] of polyline length {cum[-1]}")
    cuts, _, _, _ = arc_positions(joints, np.array([s0, s1]))
    keep = (cum > s0 + max(end_clearance, SEGMENT_EPS)) & \
           (cum < s1 - max(end_clearance, SEGMENT_EPS))
    return np.vstack([cuts[0], joints[keep], cuts[1]])
