"""Log-space dynamic programs over alignments and segmentations."""

from .enumerate import (
    alignment_scores,
    brute_force_hmm,
    brute_force_segmental,
    count_segmentations,
    enumerate_alignments,
    enumerate_segmentations,
    segmentation_scores,
)
from .hmm import HmmPotentials, hmm_forward, hmm_marginals, hmm_posteriors
from .random import random_hmm, random_segmental
from .suite import equivalence_suite
from .semimarkov import (
    SegmentalPotentials,
    SegmentationPath,
    self_transition_mask,
    semimarkov_expected_segments,
    semimarkov_forward,
    semimarkov_log_z_and_expected_segments,
    semimarkov_map,
    semimarkov_marginals,
)

__all__ = [name for name in dir() if not name.startswith("_")]
