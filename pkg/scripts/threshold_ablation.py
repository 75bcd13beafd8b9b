#!/usr/bin/env python3
"""Merge-threshold schedule ablation.

Runs the fragment -> merge -> refine pipeline under four relaxation
schedules and reports point metrics against the ground truth, reproducing
the stable-middle / degraded-extremes pattern.

Usage: python3 scripts/threshold_ablation.py [--strands N] [--iterations N]
"""

import argparse
import time

import numpy as np

from strandkit import (HairstyleSpec, MatchThresholds, MergeThresholds,
                       RefineConfig, Style, evaluate, fragment, generate,
                       merge_until_stable, run_stage3, sample_oriented_cloud)

SCHEDULES = [
    (1.0, 10.0, 2.0, 20.0),
    (2.0, 20.0, 4.0, 40.0),
    (4.0, 40.0, 6.0, 60.0),
    (6.0, 60.0, 8.0, 80.0),
]


def run_schedule(hair, frags, cloud, d0, a0, d1, a1, iterations):
    start = MergeThresholds(d0, np.deg2rad(a0))
    end = MergeThresholds(d1, np.deg2rad(a1))
    merged, _ = merge_until_stable(frags, start)
    cfg = RefineConfig(iterations=iterations, merge_every=max(1, iterations // 4),
                       schedule_start=start, schedule_end=end,
                       sample_spacing=2.5)
    out = run_stage3(merged, cloud, cfg)
    report = evaluate(out, hair, (MatchThresholds(4.0, np.deg2rad(40.0)),),
                      spacing=1.0)[0]
    return out, report


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--strands", type=int, default=150)
    ap.add_argument("--iterations", type=int, default=800)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()

    spec = HairstyleSpec(style=Style.CURLY, strand_count=args.strands,
                         joints_per_strand=150, length_mean=150, length_std=20,
                         curl_radius=8, curl_pitch=20, seed=args.seed)
    hair = generate(spec)
    gt = fragment(hair, 5, 15, gap=1.0, jitter_sigma=0.1, seed=args.seed)
    cloud = sample_oriented_cloud(hair, 2.0)
    print(f"{len(hair)} strands, {len(gt.fragments)} fragments")
    print(f"{'schedule':>22} {'strands':>8} {'avg len':>8} "
          f"{'P':>7} {'R':>7} {'F':>7} {'SC':>7} {'time':>6}")
    for d0, a0, d1, a1 in SCHEDULES:
        t0 = time.time()
        out, rep = run_schedule(hair, gt.fragments, cloud, d0, a0, d1, a1,
                                args.iterations)
        name = f"{d0:g}/{a0:g} -> {d1:g}/{a1:g}"
        print(f"{name:>22} {len(out):>8} {out.average_length():>8.1f} "
              f"{rep.precision:>7.4f} {rep.recall:>7.4f} {rep.f1:>7.4f} "
              f"{rep.strand_consistency:>7.4f} {time.time() - t0:>5.1f}s")


if __name__ == "__main__":
    main()
