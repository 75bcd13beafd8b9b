"""Synthetic hairstyles with known ground truth, and the fragmenter that
degrades them into short pieces with recorded adjacency.

The fragmenter inverts the merging problem: it cuts every strand into
pieces, removes a gap between consecutive pieces, jitters the joints, and
remembers which pieces were neighbors. Running the merger on the fragments
and counting how many recorded adjacencies it re-creates gives a ground-
truth recovery score.

All randomness flows through per-strand PCG64 streams spawned from one
seed, so outputs are bit-identical across platforms and process counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .core import OrientedPointCloud, Strand, StrandSet, normalize, slice_polyline
from .merge import MergeLog
from .metrics import resample


class Style(str, Enum):
    STRAIGHT = "straight"
    WAVY = "wavy"
    CURLY = "curly"
    HELIX = "helix"


@dataclass(frozen=True)
class HairstyleSpec:
    style: Style = Style.STRAIGHT
    strand_count: int = 100
    joints_per_strand: int = 60
    scalp_radius: float = 80.0    # mm
    length_mean: float = 150.0    # mm
    length_std: float = 20.0      # mm
    curl_radius: float = 10.0     # mm (curly/helix)
    curl_pitch: float = 20.0      # mm rise per turn (curly/helix)
    seed: int = 0

    def __post_init__(self):
        if self.strand_count < 1 or self.joints_per_strand < 2:
            raise ValueError("need at least 1 strand and 2 joints per strand")
        if min(self.scalp_radius, self.length_mean, self.curl_radius,
               self.curl_pitch) <= 0:
            raise ValueError("radii and lengths must be positive")


@dataclass(frozen=True)
class FragmentGroundTruth:
    """Fragment set plus which fragment pairs were consecutive originally."""

    fragments: StrandSet
    adjacency: tuple[tuple[int, int], ...]
    origin: dict = field(default_factory=dict)  # fragment id -> (strand id, (s0, s1))


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def _frame(d: np.ndarray):
    """Two unit vectors completing d to an orthonormal frame."""
    ref = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = normalize(np.cross(d, ref))
    return e1, np.cross(d, e1)


def helix_tangent(arcs: np.ndarray, axis: np.ndarray, e1: np.ndarray,
                  e2: np.ndarray, radius: float, pitch: float,
                  phase: float = 0.0) -> np.ndarray:
    """Analytic unit tangents of a circular helix parameterized by arc length."""
    c = pitch / (2 * np.pi)
    k = 1.0 / np.hypot(radius, c)
    phi = k * np.asarray(arcs) + phase
    return (c * k * axis[None, :]
            + radius * k * (-np.sin(phi)[:, None] * e1 + np.cos(phi)[:, None] * e2))


def _helix_points(arcs, root, axis, e1, e2, radius, pitch, phase):
    c = pitch / (2 * np.pi)
    k = 1.0 / np.hypot(radius, c)
    phi = k * arcs + phase
    offset = radius * (np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2)
    return root + (c * k * arcs)[:, None] * axis + offset - offset[0]


def _strand_geometry(spec: HairstyleSpec, rng: np.random.Generator) -> np.ndarray:
    n = normalize(_hemisphere_dir(rng))
    root = spec.scalp_radius * n
    axis = normalize(n + np.array([0.0, 0.0, -0.7]))
    length = max(20.0, rng.normal(spec.length_mean, spec.length_std))
    arcs = np.linspace(0.0, length, spec.joints_per_strand)
    e1, e2 = _frame(axis)
    phase = rng.uniform(0.0, 2 * np.pi)

    if spec.style == Style.STRAIGHT:
        return root + arcs[:, None] * axis
    if spec.style == Style.WAVY:
        amp = rng.uniform(2.0, 4.0)
        wavelength = rng.uniform(50.0, 80.0)
        sway = amp * np.sin(2 * np.pi * arcs / wavelength + phase)
        sway -= sway[0]  # keep the root on the scalp
        return root + arcs[:, None] * axis + sway[:, None] * e1
    if spec.style == Style.HELIX:
        return _helix_points(arcs, root, axis, e1, e2,
                             spec.curl_radius, spec.curl_pitch, phase)
    # curly: helix whose axis drifts smoothly toward a second direction
    drift = normalize(axis + 0.35 * rng.standard_normal(3))
    ts = arcs / arcs[-1]
    axes = normalize_rows((1 - ts)[:, None] * axis + ts[:, None] * drift)
    spine = np.vstack([root, root + np.cumsum(
        axes[:-1] * np.diff(arcs)[:, None], axis=0)])
    c = spec.curl_pitch / (2 * np.pi)
    k = 1.0 / np.hypot(spec.curl_radius, c)
    phi = k * arcs + phase
    frames = [_frame(a) for a in axes]
    e1s = np.array([f[0] for f in frames])
    e2s = np.array([f[1] for f in frames])
    offset = spec.curl_radius * (np.cos(phi)[:, None] * e1s + np.sin(phi)[:, None] * e2s)
    return spine + offset - offset[0]


def normalize_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def _hemisphere_dir(rng: np.random.Generator) -> np.ndarray:
    z = rng.uniform(0.05, 1.0)
    phi = rng.uniform(0.0, 2 * np.pi)
    r = np.sqrt(1.0 - z * z)
    return np.array([r * np.cos(phi), r * np.sin(phi), z])


def generate(spec: HairstyleSpec) -> StrandSet:
    """Deterministic hairstyle rooted on a hemisphere of scalp_radius."""
    strands = []
    for i in range(spec.strand_count):
        rng = _rng(spec.seed, 0, i)
        joints = _strand_geometry(spec, rng)
        color = np.clip(np.array([0.35, 0.22, 0.12]) + rng.normal(0, 0.02, 3), 0, 1)
        strands.append(Strand(id=i, joints=joints, thickness=None,
                              mask_logit=4.0, opacity_logit=4.0, color=color))
    return StrandSet(tuple(strands))


# ---------------------------------------------------------------------------
# fragmenter
# ---------------------------------------------------------------------------

def fragment(strand_set: StrandSet, min_len: float, max_len: float,
             gap: float, jitter_sigma: float, seed: int,
             end_clearance: float = 1.0) -> FragmentGroundTruth:
    """Cut strands into pieces with recorded adjacency.

    Piece arc lengths are drawn uniformly from [min_len, max_len]; a `gap`
    of hair is discarded between consecutive pieces; all fragment joints are
    jittered by isotropic Gaussian noise. Interior joints within
    `end_clearance` of a cut are dropped so pieces never end in sliver
    segments. Fragment order is shuffled deterministically; ids are the
    shuffled indices.
    """
    if not 0 < min_len <= max_len:
        raise ValueError("need 0 < min_len <= max_len")
    if gap < 0 or jitter_sigma < 0:
        raise ValueError("gap and jitter_sigma must be non-negative")
    pieces = []      # (source strand, s0, s1, joints)
    chains = []      # indices into `pieces` per source strand
    for s in strand_set:
        rng = _rng(seed, 1, s.id)
        length = s.length()
        bounds = []
        at = 0.0
        while length - at > max_len:
            lp = rng.uniform(min_len, max_len)
            if length - (at + lp + gap) < min_len:
                break  # absorb what's left into one final piece
            bounds.append((at, at + lp))
            at += lp + gap
        bounds.append((at, length))
        chain = []
        for s0, s1 in bounds:
            joints = slice_polyline(s.joints, s0, s1, end_clearance)
            if jitter_sigma > 0:
                joints = joints + rng.normal(0.0, jitter_sigma, joints.shape)
            chain.append(len(pieces))
            pieces.append((s, s0, s1, joints))
        chains.append(chain)

    order = np.arange(len(pieces))
    _rng(seed, 2).shuffle(order)
    new_id = np.empty(len(pieces), dtype=np.int64)
    new_id[order] = np.arange(len(pieces))

    fragments = [None] * len(pieces)
    origin = {}
    for old, (src, s0, s1, joints) in enumerate(pieces):
        fid = int(new_id[old])
        fragments[fid] = Strand(id=fid, joints=joints,
                                thickness=np.full(len(joints) - 1, float(src.thickness.mean())),
                                mask_logit=src.mask_logit,
                                opacity_logit=src.opacity_logit,
                                color=np.array(src.color))
        origin[fid] = (src.id, (s0, s1))
    adjacency = tuple(
        (int(new_id[a]), int(new_id[b]))
        for chain in chains for a, b in zip(chain, chain[1:]))
    return FragmentGroundTruth(
        fragments=StrandSet(tuple(fragments), strand_set.unit_scale),
        adjacency=adjacency, origin=origin)


def adjacency_recovery(gt: FragmentGroundTruth, log: MergeLog):
    """Fraction of ground-truth adjacencies re-created by the merge log.

    Merge events carry the exact endpoint coordinates they joined; those
    coordinates are fragment endpoints (merging never moves outer joints),
    so events map back onto fragments by exact position lookup.
    """
    by_pos: dict[bytes, set[int]] = {}
    for f in gt.fragments:
        for p in (f.joints[0], f.joints[-1]):
            by_pos.setdefault(np.ascontiguousarray(p).tobytes(), set()).add(f.id)
    found = set()
    for ev in log.events():
        fa = by_pos.get(np.ascontiguousarray(ev.a_position).tobytes(), set())
        fb = by_pos.get(np.ascontiguousarray(ev.b_position).tobytes(), set())
        for a in fa:
            for b in fb:
                if a != b:
                    found.add((min(a, b), max(a, b)))
    truth = {(min(a, b), max(a, b)) for a, b in gt.adjacency}
    recovered = len(found & truth)
    return (recovered / len(truth) if truth else 1.0), recovered, len(truth)


def sample_oriented_cloud(strand_set: StrandSet, spacing: float,
                          noise_sigma: float = 0.0, seed: int = 0) -> OrientedPointCloud:
    """Arc-length samples with tangents; positions get isotropic noise."""
    samples = resample(strand_set, spacing)
    points = np.array(samples.positions)
    if noise_sigma > 0:
        points = points + _rng(seed, 3).normal(0.0, noise_sigma, points.shape)
    return OrientedPointCloud(points, np.array(samples.directions))
