"""strandkit: reconstruct coherent hair strands from unordered 3D Gaussian
segments and score strand reconstructions, topology included."""

from .core import (GaussianSegment, OrientedPointCloud, Strand, StrandSet,
                   covariance, gaussian_to_strand, rodrigues_align,
                   segment_to_gaussian, strand_length)
from .merge import (End, Endpoint, MergeCandidate, MergeLog, MergeThresholds,
                    candidate_cost, collect_endpoints, merge_pass,
                    merge_until_stable)
from .metrics import (MatchThresholds, MetricsReport, evaluate,
                      precision_recall_f1, resample, strand_consistency)
from .refine import (RefineConfig, data_loss, filter_by_mask, refine_joints,
                     run_stage3, smoothness_grad, smoothness_loss,
                     split_long_segments, threshold_schedule)
from .synth import (FragmentGroundTruth, HairstyleSpec, Style,
                    adjacency_recovery, fragment, generate,
                    sample_oriented_cloud)

__version__ = "0.1.0"

__all__ = [
    "End", "Endpoint", "FragmentGroundTruth", "GaussianSegment",
    "HairstyleSpec", "MatchThresholds", "MergeCandidate", "MergeLog",
    "MergeThresholds", "MetricsReport", "OrientedPointCloud", "RefineConfig",
    "Strand", "StrandSet", "Style", "adjacency_recovery", "candidate_cost",
    "collect_endpoints", "covariance", "data_loss", "evaluate",
    "filter_by_mask", "fragment", "gaussian_to_strand", "generate",
    "merge_pass", "merge_until_stable", "precision_recall_f1", "refine_joints",
    "resample", "rodrigues_align", "run_stage3", "sample_oriented_cloud",
    "segment_to_gaussian", "smoothness_grad", "smoothness_loss",
    "strand_consistency", "strand_length", "split_long_segments",
    "threshold_schedule",
]
