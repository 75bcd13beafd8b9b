import numpy as np
import pytest

from strandkit import (End, MergeThresholds, StrandSet, candidate_cost,
                       collect_endpoints, merge_pass, merge_until_stable)
from strandkit.merge import Endpoint, enumerate_candidates

from conftest import as_set, make_strand, straight_strand

T_STRICT = MergeThresholds(2.0, np.deg2rad(20.0))


def endpoint(sid, end, pos, out):
    out = np.asarray(out, dtype=float)
    return Endpoint(sid, end, np.asarray(pos, dtype=float),
                    out / np.linalg.norm(out))


class TestThresholds:
    def test_validation(self):
        with pytest.raises(ValueError):
            MergeThresholds(0.0, 0.1)
        with pytest.raises(ValueError):
            MergeThresholds(1.0, 0.0)
        with pytest.raises(ValueError):
            MergeThresholds(1.0, np.pi + 0.1)


class TestCollectEndpoints:
    def test_single_strand(self):
        s = make_strand(0, [[0, 0, 0], [1, 0, 0]])
        root, tip = collect_endpoints(as_set(s))
        assert root.end == End.ROOT and tip.end == End.TIP
        np.testing.assert_allclose(root.position, [0, 0, 0])
        np.testing.assert_allclose(root.out_direction, [-1, 0, 0])
        np.testing.assert_allclose(tip.position, [1, 0, 0])
        np.testing.assert_allclose(tip.out_direction, [1, 0, 0])

    def test_two_per_strand(self):
        strands = [straight_strand(i, [0, 0, 3 * i], [1, 0, 0], 10, 5)
                   for i in range(7)]
        assert len(collect_endpoints(as_set(*strands))) == 14

    def test_bent_strand_uses_last_segment(self):
        s = make_strand(0, [[0, 0, 0], [5, 0, 0], [5, 3, 0]])
        root, tip = collect_endpoints(as_set(s))
        np.testing.assert_allclose(tip.out_direction, [0, 1, 0])
        np.testing.assert_allclose(root.out_direction, [-1, 0, 0])


class TestCandidateCost:
    def test_collinear_facing(self):
        a = endpoint(0, End.TIP, [0, 0, 0], [1, 0, 0])
        b = endpoint(1, End.ROOT, [1, 0, 0], [-1, 0, 0])
        assert candidate_cost(a, b, T_STRICT) == pytest.approx(0.5)

    def test_distance_filter(self):
        a = endpoint(0, End.TIP, [0, 0, 0], [1, 0, 0])
        b = endpoint(1, End.ROOT, [5, 0, 0], [-1, 0, 0])
        assert candidate_cost(a, b, T_STRICT) is None

    def test_angle_filter(self):
        a = endpoint(0, End.TIP, [0, 0, 0], [1, 0, 0])
        b = endpoint(1, End.ROOT, [1, 0, 0], [0, 1, 0])
        assert candidate_cost(a, b, T_STRICT) is None

    def test_same_strand(self):
        a = endpoint(0, End.TIP, [0, 0, 0], [1, 0, 0])
        b = endpoint(0, End.ROOT, [1, 0, 0], [-1, 0, 0])
        assert candidate_cost(a, b, T_STRICT) is None


class TestMergePass:
    def test_collinear_pair(self):
        a = make_strand(0, [[0, 0, 0], [10, 0, 0]])
        b = make_strand(1, [[10.5, 0, 0], [20, 0, 0]])
        merged, log = merge_pass(as_set(a, b), T_STRICT)
        assert len(merged) == 1
        s = merged.strands[0]
        assert s.id == 0
        # both originals plus the midpoint joint
        assert s.num_joints == 5
        np.testing.assert_allclose(s.joints[:, 0], [0, 10, 10.25, 10.5, 20])
        ev = log.passes[0][0]
        assert (ev.survivor, ev.absorbed) == (0, 1)
        np.testing.assert_allclose(ev.new_joint, [10.25, 0, 0])

    def test_out_of_reach_is_identity(self):
        a = make_strand(0, [[0, 0, 0], [10, 0, 0]])
        b = make_strand(1, [[15, 0, 0], [25, 0, 0]])
        merged, log = merge_pass(as_set(a, b), T_STRICT)
        assert log.num_merges == 0
        assert [s.id for s in merged] == [0, 1]

    def test_greedy_takes_lowest_cost(self):
        # three tips converging near the origin; only the cheapest pair merges
        a = make_strand(0, [[-10, 0, 0], [-1.0, 0, 0]])        # tip 1.0 from b's tip
        b = make_strand(1, [[10, 0, 0], [0.0, 0, 0]])
        c = make_strand(2, [[0, 10, 0], [0, 1.8, 0]])          # tip 1.8 from b's tip
        merged, log = merge_pass(as_set(a, b, c), T_STRICT)
        assert log.num_merges == 1
        ev = log.passes[0][0]
        assert {ev.survivor, ev.absorbed} == {0, 1}
        assert len(merged) == 2

    def test_tip_tip_and_root_root_orientation(self):
        # b reversed: both tips meet; chain must stay consistent
        a = make_strand(0, [[0, 0, 0], [10, 0, 0]])
        b = make_strand(1, [[20, 0, 0], [10.5, 0, 0]])  # tip at 10.5
        merged, _ = merge_pass(as_set(a, b), T_STRICT)
        s = merged.strands[0]
        x = s.joints[:, 0]
        assert np.all(np.diff(x) > 0) or np.all(np.diff(x) < 0)

    def test_joint_and_strand_count_invariant(self, rng):
        strands = []
        for i in range(40):
            base = rng.uniform(-40, 40, 3)
            d = rng.standard_normal(3)
            strands.append(straight_strand(i, base, d, rng.uniform(5, 15), 4))
        ss = as_set(*strands)
        t = MergeThresholds(3.0, np.deg2rad(45.0))
        before_j = ss.total_joints()
        merged, log = merge_pass(ss, t)
        assert merged.total_joints() == before_j + log.num_merges
        assert len(merged) == len(ss) - log.num_merges

    def test_rigid_invariance_same_adjacency(self, rng):
        strands = []
        for i in range(30):
            base = rng.uniform(-30, 30, 3)
            d = rng.standard_normal(3)
            strands.append(straight_strand(i, base, d, rng.uniform(5, 15), 5))
        ss = as_set(*strands)
        # exact rigid motion: coordinate permutation with sign flip + binary
        # fraction translation keeps all distances/dots bit-identical
        R = np.array([[0.0, 1, 0], [-1, 0, 0], [0, 0, 1]])
        tr = np.array([16.5, -8.25, 4.5])
        moved = ss.with_strands(
            [s.with_joints(s.joints @ R.T + tr, s.thickness) for s in ss])
        _, log_a = merge_until_stable(ss, T_STRICT)
        _, log_b = merge_until_stable(moved, T_STRICT)
        ev_a = [(e.survivor, e.absorbed) for e in log_a.events()]
        ev_b = [(e.survivor, e.absorbed) for e in log_b.events()]
        assert ev_a == ev_b


class TestCandidateEnumeration:
    def test_threshold_monotonicity(self, rng):
        strands = []
        for i in range(30):
            base = rng.uniform(-20, 20, 3)
            d = rng.standard_normal(3)
            strands.append(straight_strand(i, base, d, rng.uniform(4, 10), 3))
        ss = as_set(*strands)
        tight = MergeThresholds(1.5, np.deg2rad(15.0))
        loose = MergeThresholds(3.0, np.deg2rad(30.0))
        pairs = lambda cands: {
            (c.a.strand_id, c.a.end, c.b.strand_id, c.b.end) for c in cands}
        assert pairs(enumerate_candidates(ss, tight)) <= \
            pairs(enumerate_candidates(ss, loose))

    def test_candidates_sorted_by_cost(self, rng):
        strands = [straight_strand(i, rng.uniform(-10, 10, 3),
                                   rng.standard_normal(3), 5, 3)
                   for i in range(20)]
        cands = enumerate_candidates(as_set(*strands),
                                     MergeThresholds(4.0, np.deg2rad(60.0)))
        costs = [c.cost for c in cands]
        assert costs == sorted(costs)


class TestMergeUntilStable:
    def test_collinear_chain_rejoins(self):
        frags = [straight_strand(i, [i * 11.0, 0, 0], [1, 0, 0], 10, 4)
                 for i in range(10)]
        merged, log = merge_until_stable(as_set(*frags), T_STRICT)
        assert len(merged) == 1
        assert len(log.passes) >= 2

    def test_fixed_point(self):
        a = straight_strand(0, [0, 0, 0], [1, 0, 0], 10, 4)
        b = straight_strand(1, [0, 30, 0], [1, 0, 0], 10, 4)
        merged, log = merge_until_stable(as_set(a, b), T_STRICT)
        assert len(log.passes) == 1 and log.num_merges == 0
        assert len(merged) == 2

    def test_circle_no_self_merge(self):
        # a circle cut into 6 arcs with small gaps: merging may chain them,
        # but the final strand must never close onto itself
        r, n_arcs, gap_angle = 20.0, 6, 0.02
        arcs = []
        for k in range(n_arcs):
            t0 = 2 * np.pi * k / n_arcs
            t1 = 2 * np.pi * (k + 1) / n_arcs - gap_angle
            t = np.linspace(t0, t1, 12)
            arcs.append(make_strand(k, np.stack(
                [r * np.cos(t), r * np.sin(t), np.zeros_like(t)], axis=1)))
        merged, _ = merge_until_stable(as_set(*arcs), MergeThresholds(2.0, np.deg2rad(30)))
        assert len(merged) == 1
        s = merged.strands[0]
        # open chain: ends stay apart
        assert np.linalg.norm(s.joints[0] - s.joints[-1]) > 1e-3

    def test_average_length_never_decreases(self, rng):
        strands = [straight_strand(i, rng.uniform(-30, 30, 3),
                                   rng.standard_normal(3), rng.uniform(5, 12), 4)
                   for i in range(40)]
        ss = as_set(*strands)
        t = MergeThresholds(3.0, np.deg2rad(40.0))
        while True:
            avg = ss.average_length()
            ss, log = merge_pass(ss, t)
            assert ss.average_length() >= avg - 1e-12
            if not log.num_merges:
                break
