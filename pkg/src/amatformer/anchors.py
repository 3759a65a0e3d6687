"""Anchor selection: rank candidate pairs by the nearest-neighbor distance
ratio and keep the k most distinctive as the attention bottleneck."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .data import AnchorPairs, FeatureSet
from .errors import NoCandidates, TooFewTargets


def _matrix(x):
    if isinstance(x, Tensor):
        return x.value
    if isinstance(x, FeatureSet):
        return x.matrix
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class CandidateMatches:
    """Per source point: its nearest target, the d1/d2 ratio, and whether
    the pair is a mutual nearest neighbor."""

    source_indices: np.ndarray
    target_indices: np.ndarray
    ratios: np.ndarray
    mutual: np.ndarray


def pairwise_distances(a, b):
    """Euclidean distance matrix via the expanded quadratic form."""
    a, b = _matrix(a), _matrix(b)
    sq = (a * a).sum(axis=1)[:, None] - 2.0 * (a @ b.T) + (b * b).sum(axis=1)[None, :]
    return np.sqrt(np.maximum(sq, 0.0))


def nn_ratio_scores(f_s, f_t):
    """Score each source point by d1/d2 over target descriptor distances.

    Lower is more distinctive; identical first and second neighbors give
    ratio 1. Distance ties resolve to the lower target index (stable sort).
    """
    d = pairwise_distances(f_s, f_t)
    n, m = d.shape
    if m < 2:
        raise TooFewTargets(f"need at least 2 targets for a ratio, got {m}")
    if n == 0:
        empty = np.zeros(0, dtype=np.int64)
        return CandidateMatches(empty, empty, np.zeros(0), np.zeros(0, dtype=bool))
    order = np.argsort(d, axis=1, kind="stable")
    j1, j2 = order[:, 0], order[:, 1]
    rows = np.arange(n)
    d1, d2 = d[rows, j1], d[rows, j2]
    ratios = np.where(d2 > 0, d1 / np.where(d2 > 0, d2, 1.0), 1.0)
    nearest_source = np.argmin(d, axis=0)
    return CandidateMatches(
        source_indices=rows,
        target_indices=j1,
        ratios=ratios,
        mutual=nearest_source[j1] == rows,
    )


def select_anchors(candidates, k, f_s, f_t, require_mutual=False):
    """Keep the k lowest-ratio candidates, one target per anchor.

    Sorted lexicographically by (ratio, source index); a target already
    claimed by a better candidate disqualifies later ones. Fewer than k
    survivors clamp k down and set the clamped flag.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    keep = candidates.mutual if require_mutual else slice(None)
    src = candidates.source_indices[keep]
    tgt = candidates.target_indices[keep]
    ratios = candidates.ratios[keep]
    if len(src) == 0:
        raise NoCandidates("no candidate pairs survived filtering")
    order = np.lexsort((src, ratios))
    chosen = []
    used_targets = set()
    for idx in order:
        if tgt[idx] in used_targets:
            continue
        used_targets.add(tgt[idx])
        chosen.append(idx)
        if len(chosen) == k:
            break
    chosen = np.array(chosen)
    fs, ft = _matrix(f_s), _matrix(f_t)
    return AnchorPairs(
        source_indices=src[chosen],
        target_indices=tgt[chosen],
        ratios=ratios[chosen],
        anchors_source=fs[src[chosen]],
        anchors_target=ft[tgt[chosen]],
        clamped=len(chosen) < k,
    )
