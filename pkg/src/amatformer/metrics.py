"""Correspondence-level evaluation plus a mutual-nearest-neighbor control
baseline on raw descriptors.

Pose-style metrics (essential matrix + RANSAC) need real imagery; with exact
synthetic ground truth the correspondence counts are the whole story.
"""

import numpy as np

from .anchors import pairwise_distances
from .data import Correspondences
from .errors import EmptyGroundTruth


def correct_count(pred, gt):
    return len(pred.as_set() & gt.match_set())


def precision(pred, gt):
    """|pred ∩ T| / |pred|; an empty prediction set scores 0."""
    if len(pred) == 0:
        return 0.0
    return correct_count(pred, gt) / len(pred)


def recall(pred, gt):
    if len(gt.matches) == 0:
        raise EmptyGroundTruth("no true matches to recall against")
    return correct_count(pred, gt) / len(gt.matches)


def matching_score(pred, gt, n, m):
    """Correct matches over mean side size (n + m) / 2."""
    return correct_count(pred, gt) / ((n + m) / 2.0)


def nn_baseline(problem):
    """Mutual nearest neighbors on raw descriptors, confidence 1 each."""
    d = pairwise_distances(problem.source_descriptors.matrix,
                           problem.target_descriptors.matrix)
    row_best = d.argmin(axis=1)
    col_best = d.argmin(axis=0)
    src = np.arange(problem.n)
    mutual = col_best[row_best] == src
    pairs = np.stack([src[mutual], row_best[mutual]], axis=1)
    return Correspondences(pairs=pairs, confidence=np.ones(len(pairs)))


def evaluate(pred, gt, n, m):
    """One problem's report; keys are stable for CSV/JSON emission."""
    return {
        "precision": precision(pred, gt),
        "recall": recall(pred, gt),
        "matching_score": matching_score(pred, gt, n, m),
        "num_pred": len(pred),
        "num_gt": len(gt.matches),
    }
