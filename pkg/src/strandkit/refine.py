"""Strand refinement: fit joint positions to an oriented point cloud while
penalizing sharp bends, split over-long segments, relax merge thresholds on
a schedule, and filter non-hair strands.

The data term replaces image-space supervision with a desk-verifiable
surrogate: strands are resampled along their arc length and pulled toward
their nearest oriented target points, with a direction penalty using the
sign-agnostic 3D angle. Nearest-neighbor assignments and the sampling plan
are frozen within an iteration and recomputed for the next one, so each
iteration optimizes a well-defined smooth objective.

Optimization is a native Adam scheme (betas 0.9/0.999) over all joint
coordinates. Topology never changes inside an optimization run, so the
index arrays tying joints to segments, segment pairs, and strands are
precomputed once per run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import (SEGMENT_EPS, OrientedPointCloud, StrandSet, sigmoid)
from .errors import EmptyTarget
from .merge import MergeThresholds, merge_until_stable

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class RefineConfig:
    """Stage-3 knobs. Schedule endpoints follow the 2mm/20deg -> 4mm/40deg
    relaxation; everything else is a free parameter of this implementation."""

    lambda_smooth: float = 0.1
    theta_s: float = np.deg2rad(20.0)
    learning_rate: float = 0.05          # mm
    lr_decay: float = 0.01               # final lr fraction over the full run
    iterations: int = 2000
    split_length: float = 5.0            # mm
    schedule_start: MergeThresholds = field(
        default_factory=lambda: MergeThresholds(2.0, np.deg2rad(20.0)))
    schedule_end: MergeThresholds = field(
        default_factory=lambda: MergeThresholds(4.0, np.deg2rad(40.0)))
    merge_every: int = 1000
    mask_threshold: float = 0.5
    lambda_dir: float = 0.25             # mm^2 per radian of direction error
    sample_spacing: float = 1.0          # mm, data-term sampling

    def __post_init__(self):
        if min(self.lambda_smooth, self.learning_rate, self.split_length,
               self.lambda_dir, self.sample_spacing) <= 0:
            raise ValueError("config values must be positive")
        if not 0 < self.theta_s < np.pi:
            raise ValueError("theta_s must be in (0, pi)")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.iterations < 0 or self.merge_every < 1:
            raise ValueError("iterations must be >= 0 and merge_every >= 1")
        if not 0 < self.mask_threshold < 1:
            raise ValueError("mask_threshold must be in (0, 1)")
        if (self.schedule_end.d_m < self.schedule_start.d_m
                or self.schedule_end.theta_m < self.schedule_start.theta_m):
            raise ValueError("schedule_end must be >= schedule_start componentwise")


# ---------------------------------------------------------------------------
# flat joint vector + fixed topology indices
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Topology:
    ptr: np.ndarray        # (S+1,) joint offsets per strand
    seg_a: np.ndarray      # (E,) global index of each segment's first joint
    seg_strand: np.ndarray  # (E,) strand of each segment
    seg_ptr: np.ndarray    # (S+1,) segment offsets per strand
    pair_a: np.ndarray     # (P,) first joint of each connected segment pair

    @property
    def n_joints(self) -> int:
        return int(self.ptr[-1])


def _flatten(strand_set: StrandSet):
    ptr = np.zeros(len(strand_set) + 1, dtype=np.int64)
    chunks = []
    for k, s in enumerate(strand_set):
        chunks.append(s.joints)
        ptr[k + 1] = ptr[k] + s.num_joints
    joints = np.vstack(chunks) if chunks else np.empty((0, 3))
    return joints, _topology(ptr)


def _topology(ptr: np.ndarray) -> _Topology:
    segs, pairs, seg_strand = [], [], []
    seg_ptr = np.zeros(len(ptr), dtype=np.int64)
    for k in range(len(ptr) - 1):
        n = ptr[k + 1] - ptr[k]
        segs.append(np.arange(ptr[k], ptr[k + 1] - 1))
        seg_strand.append(np.full(n - 1, k, dtype=np.int64))
        seg_ptr[k + 1] = seg_ptr[k] + n - 1
        if n >= 3:
            pairs.append(np.arange(ptr[k], ptr[k + 1] - 2))
    cat = lambda xs: np.concatenate(xs) if xs else np.empty(0, dtype=np.int64)
    return _Topology(ptr, cat(segs), cat(seg_strand), seg_ptr, cat(pairs))


def _rebuild(strand_set: StrandSet, joints: np.ndarray, topo: _Topology) -> StrandSet:
    """StrandSet with the same topology and attributes but new joint positions.
    Collapsed segments (below SEGMENT_EPS, a rare optimizer artifact) are
    repaired by dropping the offending joint."""
    ptr = topo.ptr
    out = []
    for k, s in enumerate(strand_set):
        j = joints[ptr[k]:ptr[k + 1]]
        th = s.thickness
        seg = np.linalg.norm(np.diff(j, axis=0), axis=1)
        if np.any(seg <= SEGMENT_EPS):
            keep_j, keep_t = [j[0]], []
            for i in range(1, len(j)):
                if np.linalg.norm(j[i] - keep_j[-1]) > SEGMENT_EPS:
                    keep_j.append(j[i])
                    keep_t.append(th[i - 1])
            if len(keep_j) < 2:
                continue
            j, th = np.array(keep_j), np.array(keep_t)
        out.append(s.with_joints(j, th))
    return strand_set.with_strands(out)


def _scatter(grad: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> None:
    for c in range(3):
        grad[:, c] += np.bincount(idx, weights=vals[:, c], minlength=len(grad))


# ---------------------------------------------------------------------------
# smoothness term
# ---------------------------------------------------------------------------

def _smoothness_flat(joints: np.ndarray, topo: _Topology, theta_s: float):
    """(loss, per-joint gradient). Mean over connected segment pairs of the
    squared bend angle, zero below the theta_s threshold."""
    pa = topo.pair_a
    grad = np.zeros_like(joints)
    if len(pa) == 0:
        return 0.0, grad
    va = joints[pa + 1] - joints[pa]
    vb = joints[pa + 2] - joints[pa + 1]
    la = np.linalg.norm(va, axis=1)
    lb = np.linalg.norm(vb, axis=1)
    ua = va / la[:, None]
    ub = vb / lb[:, None]
    c = np.clip(np.einsum("ij,ij->i", ua, ub), -1.0, 1.0)
    active = c <= np.cos(theta_s)
    theta = np.where(active, np.arccos(c), 0.0)
    n_pairs = len(pa)
    loss = float((theta ** 2).sum() / n_pairs)
    if not active.any():
        return loss, grad
    # d(theta^2)/dc = -2 theta / sqrt(1 - c^2); the antiparallel singularity
    # is excluded by precondition, clamp only to keep the math finite
    denom = np.sqrt(np.maximum(1.0 - c[active] ** 2, 1e-18))
    dl_dc = -2.0 * theta[active] / denom / n_pairs
    g_va = dl_dc[:, None] * (ub[active] - c[active, None] * ua[active]) / la[active, None]
    g_vb = dl_dc[:, None] * (ua[active] - c[active, None] * ub[active]) / lb[active, None]
    ia = pa[active]
    _scatter(grad, ia, -g_va)
    _scatter(grad, ia + 1, g_va - g_vb)
    _scatter(grad, ia + 2, g_vb)
    return loss, grad


def smoothness_loss(strand_set: StrandSet, theta_s: float) -> float:
    if not 0 < theta_s < np.pi:
        raise ValueError("theta_s must be in (0, pi)")
    joints, topo = _flatten(strand_set)
    loss, _ = _smoothness_flat(joints, topo, theta_s)
    return loss


def smoothness_grad(strand_set: StrandSet, theta_s: float) -> list[np.ndarray]:
    """Analytic gradient of smoothness_loss per joint, one array per strand."""
    joints, topo = _flatten(strand_set)
    _, grad = _smoothness_flat(joints, topo, theta_s)
    ptr = topo.ptr
    return [grad[ptr[k]:ptr[k + 1]] for k in range(len(ptr) - 1)]


# ---------------------------------------------------------------------------
# data term
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DataPlan:
    """Frozen sampling plan + nearest-neighbor assignment for one iteration."""

    seg_start: np.ndarray   # (K,) global joint index of each sample's segment
    t: np.ndarray           # (K,) parameter along the segment
    target_idx: np.ndarray  # (K,) assigned target point


def _sampling_plan(joints: np.ndarray, topo: _Topology, spacing: float):
    """Arc-length sample stations over all strands at once.

    Works on the global cumulative arc (strands concatenated end to end):
    a local arc a in strand i lives at global arc (start of strand i) + a,
    and one searchsorted over the global cumsum finds its segment.
    """
    if len(topo.seg_a) == 0:
        return np.empty(0, np.int64), np.empty(0)
    v = joints[topo.seg_a + 1] - joints[topo.seg_a]
    seg_len = np.linalg.norm(v, axis=1)
    cs = np.cumsum(seg_len)
    first_seg = topo.seg_ptr[:-1]
    last_seg = topo.seg_ptr[1:] - 1
    strand_base = cs[first_seg] - seg_len[first_seg]
    lengths = cs[last_seg] - strand_base
    counts = np.where(lengths < spacing, 1,
                      np.floor(lengths / spacing).astype(np.int64) + 1)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    local = np.arange(offsets[-1]) - np.repeat(offsets[:-1], counts)
    arcs = local * spacing
    strand_of_sample = np.repeat(np.arange(len(counts)), counts)
    short = counts[strand_of_sample] == 1
    arcs[short] = 0.5 * lengths[strand_of_sample[short]]
    g = strand_base[strand_of_sample] + arcs
    idx = np.searchsorted(cs, g, side="right")
    idx = np.minimum(idx, last_seg[strand_of_sample])
    t = np.clip((g - (cs[idx] - seg_len[idx])) / seg_len[idx], 0.0, 1.0)
    return topo.seg_a[idx], t


def _sample_positions(joints, seg_start, t):
    a = joints[seg_start]
    b = joints[seg_start + 1]
    return a + t[:, None] * (b - a)


def _data_core(joints: np.ndarray, plan: DataPlan, target: OrientedPointCloud,
               lambda_dir: float):
    """Differentiable data loss under a frozen plan: mean over samples of
    squared distance to the assigned point plus lambda_dir times the
    sign-agnostic angle between segment and target directions."""
    k = len(plan.seg_start)
    grad = np.zeros_like(joints)
    if k == 0:
        return 0.0, grad
    a, t = plan.seg_start, plan.t
    b = a + 1
    x = joints[a] + t[:, None] * (joints[b] - joints[a])
    q = target.points[plan.target_idx]
    d = target.directions[plan.target_idx]
    diff = x - q
    v = joints[b] - joints[a]
    length = np.linalg.norm(v, axis=1)
    u = v / length[:, None]
    c = np.clip(np.einsum("ij,ij->i", u, d), -1.0, 1.0)
    ang = np.arccos(np.abs(c))
    loss = float(((diff ** 2).sum(axis=1) + lambda_dir * ang).mean())

    g_x = (2.0 / k) * diff
    # d(arccos|c|)/dc = -sign(c)/sqrt(1-c^2); zero the gradient where the
    # directions are (anti)parallel to machine precision
    s2 = 1.0 - c ** 2
    dang_dc = np.where(s2 > 1e-14, -np.sign(c) / np.sqrt(np.maximum(s2, 1e-14)), 0.0)
    coef = (lambda_dir / k) * dang_dc
    g_v = coef[:, None] * (d - c[:, None] * u) / length[:, None]
    _scatter(grad, a, (1.0 - t)[:, None] * g_x - g_v)
    _scatter(grad, b, t[:, None] * g_x + g_v)
    return loss, grad


def make_plan(joints: np.ndarray, topo: _Topology, target: OrientedPointCloud,
              spacing: float, tree: cKDTree | None = None,
              workers: int = 1) -> DataPlan:
    """Sampling plan plus nearest-target assignment at the current geometry."""
    if len(target) == 0:
        raise EmptyTarget("oriented point cloud target is empty")
    seg_start, t = _sampling_plan(joints, topo, spacing)
    if tree is None:
        tree = cKDTree(target.points)
    if len(seg_start):
        _, idx = tree.query(_sample_positions(joints, seg_start, t), workers=workers)
    else:
        idx = np.empty(0, np.int64)
    return DataPlan(seg_start, t, np.asarray(idx, dtype=np.int64))


def data_loss(strand_set: StrandSet, target: OrientedPointCloud,
              sample_spacing: float, lambda_dir: float = 0.25,
              workers: int = 1):
    """(loss, per-strand joint gradients) against the oriented point cloud."""
    joints, topo = _flatten(strand_set)
    plan = make_plan(joints, topo, target, sample_spacing, workers=workers)
    loss, grad = _data_core(joints, plan, target, lambda_dir)
    ptr = topo.ptr
    return loss, [grad[ptr[k]:ptr[k + 1]] for k in range(len(ptr) - 1)]


# ---------------------------------------------------------------------------
# optimization
# ---------------------------------------------------------------------------

def refine_joints(strand_set: StrandSet, target: OrientedPointCloud,
                  cfg: RefineConfig, *, iterations: int | None = None,
                  callback=None, start_iter: int = 0,
                  workers: int = 1) -> StrandSet:
    """Adam descent on data_loss + lambda_smooth * smoothness_loss.

    Topology is untouched; only joint positions move. `callback`, when given,
    receives (iteration, total, data, smooth) once per iteration.
    """
    iters = cfg.iterations if iterations is None else iterations
    if iters == 0 or not strand_set.strands:
        return strand_set
    if len(target) == 0:
        raise EmptyTarget("oriented point cloud target is empty")
    joints, topo = _flatten(strand_set)
    tree = cKDTree(target.points)
    m = np.zeros_like(joints)
    v = np.zeros_like(joints)
    v_peak = np.zeros_like(joints)
    # exponential step decay over the whole configured run, so chunked calls
    # from run_stage3 continue one global schedule
    total = max(cfg.iterations, start_iter + iters, 1)
    for i in range(iters):
        plan = make_plan(joints, topo, target, cfg.sample_spacing, tree, workers)
        dl, dg = _data_core(joints, plan, target, cfg.lambda_dir)
        sl, sg = _smoothness_flat(joints, topo, cfg.theta_s)
        g = dg + cfg.lambda_smooth * sg
        step = i + 1
        lr = cfg.learning_rate * cfg.lr_decay ** ((start_iter + i) / total)
        m = _ADAM_BETA1 * m + (1 - _ADAM_BETA1) * g
        v = _ADAM_BETA2 * v + (1 - _ADAM_BETA2) * g * g
        m_hat = m / (1 - _ADAM_BETA1 ** step)
        # max-normalizer (AMSGrad): step sizes shrink once gradients do,
        # which keeps converged strands from oscillating
        np.maximum(v_peak, v / (1 - _ADAM_BETA2 ** step), out=v_peak)
        joints = joints - lr * m_hat / (np.sqrt(v_peak) + _ADAM_EPS)
        if callback is not None:
            callback(start_iter + i, dl + cfg.lambda_smooth * sl, dl, sl)
    return _rebuild(strand_set, joints, topo)


# ---------------------------------------------------------------------------
# topology operations
# ---------------------------------------------------------------------------

def split_long_segments(strand_set: StrandSet, split_length: float) -> StrandSet:
    """Bisect segments over the threshold (repeatedly, so every segment of
    length L becomes 2^ceil(log2(L/threshold)) equal pieces). The polyline
    trace is unchanged."""
    if split_length <= 0:
        raise ValueError("split_length must be positive")
    out = []
    for s in strand_set:
        v = np.diff(s.joints, axis=0)
        seg_len = np.linalg.norm(v, axis=1)
        over = seg_len > split_length
        if not over.any():
            out.append(s)
            continue
        pieces = np.ones(len(seg_len), dtype=np.int64)
        pieces[over] = 2 ** np.ceil(np.log2(seg_len[over] / split_length)).astype(int)
        rep = np.repeat(np.arange(len(seg_len)), pieces)
        offsets = np.concatenate([[0], np.cumsum(pieces)])
        local = np.arange(len(rep)) - offsets[rep]
        frac = local / pieces[rep]
        new_joints = np.vstack([s.joints[rep] + frac[:, None] * v[rep], s.joints[-1]])
        out.append(s.with_joints(new_joints, np.repeat(s.thickness, pieces)))
    return strand_set.with_strands(out)


def threshold_schedule(iteration: int, cfg: RefineConfig) -> MergeThresholds:
    """Linear relaxation of the merge thresholds over the refinement run."""
    if not 0 <= iteration <= cfg.iterations:
        raise ValueError("iteration out of range")
    f = iteration / cfg.iterations if cfg.iterations else 1.0
    return MergeThresholds(
        cfg.schedule_start.d_m + f * (cfg.schedule_end.d_m - cfg.schedule_start.d_m),
        cfg.schedule_start.theta_m + f * (cfg.schedule_end.theta_m - cfg.schedule_start.theta_m),
    )


def filter_by_mask(strand_set: StrandSet, mask_threshold: float) -> StrandSet:
    """Keep strands whose sigmoid(mask logit) reaches the threshold."""
    if not 0 < mask_threshold < 1:
        raise ValueError("mask_threshold must be in (0, 1)")
    return strand_set.with_strands(
        [s for s in strand_set if sigmoid(s.mask_logit) >= mask_threshold])


def run_stage3(strand_set: StrandSet, target: OrientedPointCloud,
               cfg: RefineConfig, *, callback=None, workers: int = 1) -> StrandSet:
    """Full growing-and-refinement stage.

    Refinement epochs of cfg.merge_every iterations alternate with segment
    splitting and merging at the scheduled (relaxing) thresholds; the run
    ends with mask filtering.
    """
    if not strand_set.strands:
        return strand_set
    current = strand_set
    it = 0
    while it < cfg.iterations:
        chunk = min(cfg.merge_every, cfg.iterations - it)
        current = refine_joints(current, target, cfg, iterations=chunk,
                                callback=callback, start_iter=it, workers=workers)
        it += chunk
        current = split_long_segments(current, cfg.split_length)
        current, _ = merge_until_stable(current, threshold_schedule(it, cfg))
    return filter_by_mask(current, cfg.mask_threshold)
