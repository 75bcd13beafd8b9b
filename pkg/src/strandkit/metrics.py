"""Reconstruction metrics: point-matching precision/recall/F1 and Strand Consistency.

Both strand sets are resampled at a common arc-length spacing into directed
samples. A sample matches when some counterpart sample lies within the
distance threshold and the sign-agnostic angle between their tangents,
min(theta, pi - theta), is within the angle threshold.

Strand Consistency goes one step further than precision/recall: for every
ground-truth strand it finds the single predicted strand that matches the
highest fraction of its samples, then averages that fraction. Shuffling the
connectivity of a geometrically perfect reconstruction leaves precision and
recall untouched but collapses Strand Consistency, which is the point.

Every metric exists in two routes: a K-D tree accelerated one and an O(n^2)
brute-force oracle (`method="brute"`). Both apply the identical match
predicate, so they agree exactly, not just within tolerance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .core import StrandSet, arc_positions, cumulative_lengths, normalize, sample_arcs
from .errors import EmptyGroundTruth


@dataclass(frozen=True)
class MatchThresholds:
    """Distance (mm) and angle (radians) gates for sample matching."""

    d_tau: float
    theta_tau: float

    def __post_init__(self):
        if self.d_tau <= 0 or self.theta_tau <= 0:
            raise ValueError("match thresholds must be positive")


DEFAULT_THRESHOLDS = (
    MatchThresholds(2.0, np.deg2rad(20.0)),
    MatchThresholds(4.0, np.deg2rad(40.0)),
)


@dataclass(frozen=True)
class DirectedSample:
    position: np.ndarray
    direction: np.ndarray
    strand_id: int
    index_on_strand: int


@dataclass(frozen=True)
class SampleArray:
    """Struct-of-arrays list of DirectedSample, grouped by strand.

    Samples of one strand are contiguous; `strand_starts` holds the group
    offsets (length = number of strands + 1).
    """

    positions: np.ndarray
    directions: np.ndarray
    strand_ids: np.ndarray
    index_on_strand: np.ndarray
    strand_starts: np.ndarray

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> DirectedSample:
        return DirectedSample(self.positions[i], self.directions[i],
                              int(self.strand_ids[i]), int(self.index_on_strand[i]))

    @property
    def num_strands(self) -> int:
        return len(self.strand_starts) - 1


def line_angle(u, v) -> float:
    """Sign-agnostic angle between two line directions, in [0, pi/2]."""
    d = abs(float(np.clip(np.dot(u, v), -1.0, 1.0)))
    return float(np.arccos(d))


def resample(strand_set: StrandSet, spacing: float) -> SampleArray:
    """Uniform arc-length samples with local tangents.

    Strands shorter than one spacing contribute a single midpoint sample
    carrying the whole-strand chord direction.
    """
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    pos, dirs, sids, idx = [], [], [], []
    starts = [0]
    n = 0
    for s in strand_set:
        length = s.length()
        arcs = sample_arcs(length, spacing)
        p, d, _, _ = arc_positions(s.joints, arcs)
        if length < spacing:
            d = np.array([_chord(s.joints)])
        pos.append(p)
        dirs.append(d)
        sids.append(np.full(len(p), s.id, dtype=np.int64))
        idx.append(np.arange(len(p), dtype=np.int64))
        n += len(p)
        starts.append(n)
    if not pos:
        empty3 = np.empty((0, 3))
        return SampleArray(empty3, empty3, np.empty(0, np.int64),
                           np.empty(0, np.int64), np.array([0]))
    return SampleArray(np.vstack(pos), np.vstack(dirs), np.concatenate(sids),
                       np.concatenate(idx), np.array(starts))


def _chord(joints: np.ndarray) -> np.ndarray:
    v = joints[-1] - joints[0]
    if np.linalg.norm(v) <= 1e-9:
        return normalize(joints[1] - joints[0])
    return normalize(v)


# ---------------------------------------------------------------------------
# matching (shared predicate, two routes)
# ---------------------------------------------------------------------------

def _ball_pairs(query: SampleArray, pool: SampleArray, t: MatchThresholds,
                workers: int = 1):
    """All (query index, pool index) pairs passing the match predicate,
    via K-D tree radius candidates. Radius is inflated a hair so borderline
    pairs are decided by the exact predicate, never by tree pruning."""
    if len(query) == 0 or len(pool) == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    tree = cKDTree(pool.positions)
    lists = tree.query_ball_point(query.positions, r=t.d_tau * (1.0 + 1e-12),
                                  workers=workers, return_sorted=False)
    counts = np.fromiter((len(l) for l in lists), dtype=np.int64, count=len(lists))
    if counts.sum() == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    qi = np.repeat(np.arange(len(query), dtype=np.int64), counts)
    pi = np.concatenate([np.asarray(l, dtype=np.int64) for l in lists if len(l)])
    ok = _predicate(query.positions[qi], query.directions[qi],
                    pool.positions[pi], pool.directions[pi], t)
    return qi[ok], pi[ok]


def _predicate(qp, qd, pp, pd, t: MatchThresholds):
    d2 = ((qp - pp) ** 2).sum(axis=-1)
    adot = np.abs((qd * pd).sum(axis=-1))
    return (d2 <= t.d_tau * t.d_tau) & (adot >= np.cos(t.theta_tau))


def match_samples(pred: SampleArray, gt: SampleArray, t: MatchThresholds,
                  workers: int = 1):
    """Boolean match flags: (per pred sample, per gt sample)."""
    gi, _ = _ball_pairs(gt, pred, t, workers)
    pi, _ = _ball_pairs(pred, gt, t, workers)
    gt_matched = np.zeros(len(gt), dtype=bool)
    gt_matched[gi] = True
    pred_matched = np.zeros(len(pred), dtype=bool)
    pred_matched[pi] = True
    return pred_matched, gt_matched


def match_samples_brute(pred: SampleArray, gt: SampleArray, t: MatchThresholds):
    """O(n^2) oracle: evaluate the predicate on every pair."""
    if len(pred) == 0 or len(gt) == 0:
        return np.zeros(len(pred), dtype=bool), np.zeros(len(gt), dtype=bool)
    ok = _predicate(gt.positions[:, None, :], gt.directions[:, None, :],
                    pred.positions[None, :, :], pred.directions[None, :, :], t)
    return ok.any(axis=0), ok.any(axis=1)


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def precision_recall_f1(pred: StrandSet, gt: StrandSet, t: MatchThresholds,
                        spacing: float = 1.0, *, method: str = "kdtree",
                        workers: int = 1):
    """Matched fraction of pred samples, of gt samples, and their harmonic
    mean. An empty prediction scores (0, 0, 0)."""
    ps, gs = resample(pred, spacing), resample(gt, spacing)
    if len(gs) == 0:
        raise EmptyGroundTruth("ground truth has no strands")
    if len(ps) == 0:
        return 0.0, 0.0, 0.0
    if method == "brute":
        pm, gm = match_samples_brute(ps, gs, t)
    else:
        pm, gm = match_samples(ps, gs, t, workers)
    p, r = float(pm.mean()), float(gm.mean())
    return p, r, _f1(p, r)


def strand_consistency(pred: StrandSet, gt: StrandSet, t: MatchThresholds,
                       spacing: float = 1.0, *, method: str = "kdtree",
                       workers: int = 1) -> float:
    """For each gt strand, the best single predicted strand's matched-sample
    fraction, averaged uniformly over gt strands."""
    ps, gs = resample(pred, spacing), resample(gt, spacing)
    if len(gs) == 0:
        raise EmptyGroundTruth("ground truth has no strands")
    if method == "brute":
        return _sc_brute(ps, gs, t)
    if len(ps) == 0:
        return 0.0
    gi, pi = _ball_pairs(gs, ps, t, workers)
    # (gt sample, pred strand) pairs, deduplicated: a sample counts once per
    # pred strand no matter how many of its samples matched
    n_pred = ps.num_strands
    pred_strand = np.repeat(np.arange(n_pred, dtype=np.int64),
                            np.diff(ps.strand_starts))
    key = np.unique(gi * n_pred + pred_strand[pi])
    usample, ustrand = key // n_pred, key % n_pred
    gt_strand_of_sample = np.repeat(np.arange(gs.num_strands, dtype=np.int64),
                                    np.diff(gs.strand_starts))
    pair_key, counts = np.unique(gt_strand_of_sample[usample] * n_pred + ustrand,
                                 return_counts=True)
    best = np.zeros(gs.num_strands)
    np.maximum.at(best, pair_key // n_pred, counts)
    samples_per_gt = np.diff(gs.strand_starts)
    return float(np.mean(best / samples_per_gt))


def _sc_brute(ps: SampleArray, gs: SampleArray, t: MatchThresholds) -> float:
    """Literal triple loop over gt strands, pred strands, gt samples."""
    fractions = []
    for g in range(gs.num_strands):
        g0, g1 = gs.strand_starts[g], gs.strand_starts[g + 1]
        best = 0.0
        for p in range(ps.num_strands):
            p0, p1 = ps.strand_starts[p], ps.strand_starts[p + 1]
            ok = _predicate(gs.positions[g0:g1, None, :], gs.directions[g0:g1, None, :],
                            ps.positions[None, p0:p1, :], ps.directions[None, p0:p1, :], t)
            best = max(best, float(ok.any(axis=1).mean()))
        fractions.append(best)
    return float(np.mean(fractions))


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    strand_consistency: float | None
    thresholds: MatchThresholds
    sample_spacing: float

    def as_dict(self) -> dict:
        return {
            "d_tau_mm": self.thresholds.d_tau,
            "theta_tau_deg": float(np.rad2deg(self.thresholds.theta_tau)),
            "sample_spacing_mm": self.sample_spacing,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "strand_consistency": self.strand_consistency,
        }

    def record_lines(self) -> list[str]:
        """Flat key-value text record, one `key value` pair per line."""
        out = []
        for k, v in self.as_dict().items():
            out.append(f"{k} {'-' if v is None else f'{v:.6f}'}")
        return out


def evaluate(pred: StrandSet, gt: StrandSet,
             thresholds=DEFAULT_THRESHOLDS, spacing: float = 1.0, *,
             with_sc: bool = True, method: str = "kdtree",
             workers: int = 1) -> list[MetricsReport]:
    """One report per threshold pair (defaults: 2mm/20deg and 4mm/40deg)."""
    reports = []
    for t in thresholds:
        p, r, f = precision_recall_f1(pred, gt, t, spacing, method=method,
                                      workers=workers)
        sc = strand_consistency(pred, gt, t, spacing, method=method,
                                workers=workers) if with_sc else None
        reports.append(MetricsReport(p, r, f, sc, t, spacing))
    return reports


def reports_to_json(reports: list[MetricsReport]) -> str:
    return json.dumps([r.as_dict() for r in reports], indent=2)
