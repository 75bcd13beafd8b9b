"""Greedy endpoint merging: combine short strands into longer ones.

Strand endpoints (roots and tips) form the nodes of a matching problem.
Candidate pairs are enumerated with a K-D tree radius query, filtered by
distance and angle thresholds, sorted by a normalized cost, and accepted
greedily: once a strand takes part in a merge it sits out the rest of the
pass. Each accepted pair is joined through a new joint at the midpoint of
the two endpoints.

Everything here is deterministic: equal-cost candidates are ordered by
(lower strand id pair, root-before-tip), so the merge log is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from scipy.spatial import cKDTree

from .core import SEGMENT_EPS, Strand, StrandSet, normalize


class End(IntEnum):
    ROOT = 0
    TIP = 1


@dataclass(frozen=True)
class Endpoint:
    """A strand extremity with its outward direction (away from the body)."""

    strand_id: int
    end: End
    position: np.ndarray
    out_direction: np.ndarray


@dataclass(frozen=True)
class MergeThresholds:
    """Distance (mm) and angle (radians) gates for candidate pairs."""

    d_m: float
    theta_m: float

    def __post_init__(self):
        if self.d_m <= 0:
            raise ValueError("d_m must be positive")
        if not 0 < self.theta_m <= np.pi:
            raise ValueError("theta_m must be in (0, pi]")


@dataclass(frozen=True)
class MergeCandidate:
    a: Endpoint
    b: Endpoint
    distance: float
    angle: float
    cost: float


@dataclass(frozen=True)
class MergeEvent:
    """One accepted merge. Endpoint positions are kept verbatim so test
    oracles can map events back onto known fragment endpoints."""

    survivor: int
    absorbed: int
    new_joint: np.ndarray
    a_position: np.ndarray
    b_position: np.ndarray


@dataclass
class MergeLog:
    passes: list[list[MergeEvent]] = field(default_factory=list)

    def events(self):
        for p in self.passes:
            yield from p

    @property
    def num_merges(self) -> int:
        return sum(len(p) for p in self.passes)

    def extend(self, other: "MergeLog") -> None:
        self.passes.extend(other.passes)


def collect_endpoints(strand_set: StrandSet) -> list[Endpoint]:
    """Two endpoints per strand; outward direction comes from the last segment."""
    out = []
    for s in strand_set:
        j = s.joints
        out.append(Endpoint(s.id, End.ROOT, j[0], normalize(j[0] - j[1])))
        out.append(Endpoint(s.id, End.TIP, j[-1], normalize(j[-1] - j[-2])))
    return out


def candidate_cost(a: Endpoint, b: Endpoint, t: MergeThresholds) -> float | None:
    """Threshold-normalized merge cost, or None if the pair is infeasible.

    The angle is pi minus the angle between the outward directions, so 0
    means the endpoints face each other in perfect continuation.
    """
    if a.strand_id == b.strand_id:
        return None
    distance = float(np.linalg.norm(a.position - b.position))
    if distance > t.d_m:
        return None
    dot = float(np.clip(np.dot(a.out_direction, b.out_direction), -1.0, 1.0))
    angle = np.pi - np.arccos(dot)
    if angle > t.theta_m:
        return None
    return distance / t.d_m + angle / t.theta_m


def _endpoint_arrays(strands):
    n = len(strands)
    pos = np.empty((2 * n, 3))
    dirs = np.empty((2 * n, 3))
    sids = np.empty(2 * n, dtype=np.int64)
    ends = np.empty(2 * n, dtype=np.int8)
    for k, s in enumerate(strands):
        j = s.joints
        pos[2 * k] = j[0]
        dirs[2 * k] = normalize(j[0] - j[1])
        pos[2 * k + 1] = j[-1]
        dirs[2 * k + 1] = normalize(j[-1] - j[-2])
        sids[2 * k:2 * k + 2] = s.id
        ends[2 * k] = End.ROOT
        ends[2 * k + 1] = End.TIP
    return pos, dirs, sids, ends


def _candidate_arrays(strands, t: MergeThresholds):
    """Feasible endpoint pairs as index arrays, sorted by (cost, tie-break).

    Returns (i, j, cost, distance, angle) with i/j indexing the endpoint
    arrays and each pair canonically ordered by (strand id, end).
    """
    pos, dirs, sids, ends = _endpoint_arrays(strands)
    if len(pos) < 4:
        empty = np.empty(0, dtype=np.int64)
        return (pos, dirs, sids, ends), empty, empty, np.empty(0), np.empty(0), np.empty(0)
    pairs = cKDTree(pos).query_pairs(r=t.d_m, output_type="ndarray")
    i, j = pairs[:, 0], pairs[:, 1]
    keep = sids[i] != sids[j]
    i, j = i[keep], j[keep]
    dist = np.linalg.norm(pos[i] - pos[j], axis=1)
    dot = np.clip(np.einsum("ij,ij->i", dirs[i], dirs[j]), -1.0, 1.0)
    angle = np.pi - np.arccos(dot)
    keep = (dist <= t.d_m) & (angle <= t.theta_m)
    i, j, dist, angle = i[keep], j[keep], dist[keep], angle[keep]
    cost = dist / t.d_m + angle / t.theta_m
    # canonical pair order: endpoint with the lower (strand id, end) first
    swap = (sids[i] > sids[j]) | ((sids[i] == sids[j]) & (ends[i] > ends[j]))
    i, j = np.where(swap, j, i), np.where(swap, i, j)
    order = np.lexsort((ends[j], ends[i], sids[j], sids[i], cost))
    return (pos, dirs, sids, ends), i[order], j[order], cost[order], dist[order], angle[order]


def enumerate_candidates(strand_set: StrandSet, t: MergeThresholds) -> list[MergeCandidate]:
    """All feasible merge candidates, sorted the way merge_pass consumes them."""
    strands = list(strand_set)
    (pos, dirs, sids, ends), i, j, cost, dist, angle = _candidate_arrays(strands, t)
    return [
        MergeCandidate(
            Endpoint(int(sids[a]), End(int(ends[a])), pos[a], dirs[a]),
            Endpoint(int(sids[b]), End(int(ends[b])), pos[b], dirs[b]),
            float(d), float(th), float(c),
        )
        for a, b, c, d, th in zip(i, j, cost, dist, angle)
    ]


def _dedup(joints: np.ndarray, thickness: np.ndarray):
    """Sequentially drop joints within SEGMENT_EPS of the last kept one
    (guards the coincident-endpoint merge case so the result stays valid)."""
    keep_j = [joints[0]]
    keep_t = []
    for k in range(1, len(joints)):
        if np.linalg.norm(joints[k] - keep_j[-1]) > SEGMENT_EPS:
            keep_j.append(joints[k])
            keep_t.append(thickness[k - 1])
    return np.array(keep_j), np.array(keep_t)


def _join(sa: Strand, ea: End, sb: Strand, eb: End) -> tuple[Strand, np.ndarray]:
    """Concatenate two strands through the midpoint of their matched endpoints."""
    ja, ta = (sa.joints, sa.thickness) if ea == End.TIP else (sa.joints[::-1], sa.thickness[::-1])
    jb, tb = (sb.joints, sb.thickness) if eb == End.ROOT else (sb.joints[::-1], sb.thickness[::-1])
    mid = 0.5 * (ja[-1] + jb[0])
    gap = float(np.linalg.norm(jb[0] - ja[-1]))
    if gap <= 2 * SEGMENT_EPS:
        # endpoints coincide: bridge through a single shared joint
        joints, thickness = _dedup(np.vstack([ja[:-1], mid, jb[1:]]),
                                   np.concatenate([ta, tb]))
    else:
        joints = np.vstack([ja, mid, jb])
        thickness = np.concatenate([ta, [ta[-1], tb[0]], tb])
    la, lb = sa.length(), sb.length()
    if la < lb:  # root of the merged strand = outer end farther from the junction
        joints = joints[::-1]
        thickness = thickness[::-1]
    w = la / (la + lb)
    merged = Strand(
        id=min(sa.id, sb.id),
        joints=np.array(joints),
        thickness=np.array(thickness),
        mask_logit=w * sa.mask_logit + (1 - w) * sb.mask_logit,
        opacity_logit=w * sa.opacity_logit + (1 - w) * sb.opacity_logit,
        color=w * sa.color + (1 - w) * sb.color,
    )
    return merged, mid


def merge_pass(strand_set: StrandSet, t: MergeThresholds) -> tuple[StrandSet, MergeLog]:
    """One greedy sweep: accept candidates in cost order, skipping any whose
    strand already merged this pass. Returns the new set and a one-pass log."""
    strands = list(strand_set)
    by_id = {s.id: s for s in strands}
    (pos, dirs, sids, ends), ci, cj, cost, _, _ = _candidate_arrays(strands, t)

    consumed: set[int] = set()
    events: list[MergeEvent] = []
    for a, b in zip(ci, cj):
        sa_id, sb_id = int(sids[a]), int(sids[b])
        if sa_id in consumed or sb_id in consumed:
            continue
        merged, mid = _join(by_id[sa_id], End(int(ends[a])), by_id[sb_id], End(int(ends[b])))
        consumed.add(sa_id)
        consumed.add(sb_id)
        del by_id[max(sa_id, sb_id)]
        by_id[merged.id] = merged
        events.append(MergeEvent(
            survivor=merged.id,
            absorbed=max(sa_id, sb_id),
            new_joint=mid,
            a_position=np.array(pos[a]),
            b_position=np.array(pos[b]),
        ))

    out = strand_set.with_strands(sorted(by_id.values(), key=lambda s: s.id))
    return out, MergeLog(passes=[events])


def merge_until_stable(strand_set: StrandSet, t: MergeThresholds,
                       max_passes: int = 100) -> tuple[StrandSet, MergeLog]:
    """Repeat merge_pass until a pass accepts nothing (or max_passes)."""
    if max_passes < 1:
        raise ValueError("max_passes must be >= 1")
    log = MergeLog()
    current = strand_set
    for _ in range(max_passes):
        current, pass_log = merge_pass(current, t)
        log.extend(pass_log)
        if not pass_log.passes[0]:
            break
    return current, log
