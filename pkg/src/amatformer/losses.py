"""Training objective: negative log-likelihood of the assignment plan over
ground-truth matches and dustbin entries, plus per-unit binary anchor
classification, combined as L_m + alpha * sum_r L^r."""

import numpy as np

from . import autodiff as ad
from .errors import IndexOutOfBounds, LengthMismatch


def matching_loss(plan, gt):
    """-sum log plan over GT pairs, unmatched-source dustbin entries, and
    unmatched-target dustbin entries; entries floored at 1e-12."""
    n, m = plan.shape[0] - 1, plan.shape[1] - 1
    t_i, t_j = gt.matches[:, 0], gt.matches[:, 1]
    u_s, u_t = gt.unmatched_source, gt.unmatched_target
    for name, idx, bound in (
        ("match source", t_i, n), ("match target", t_j, m),
        ("unmatched source", u_s, n), ("unmatched target", u_t, m),
    ):
        if len(idx) and (idx.min() < 0 or idx.max() >= bound):
            raise IndexOutOfBounds(f"{name} index outside [0, {bound})")
    rows = np.concatenate([t_i, u_s, np.full(len(u_t), n, dtype=np.int64)])
    cols = np.concatenate([t_j, np.full(len(u_s), m, dtype=np.int64), u_t])
    picked = ad.gather_entries(plan, rows, cols)
    return ad.neg(ad.sum_all(ad.log(ad.clip_min(picked, 1e-12))))


def anchor_labels(anchors, gt):
    """1 where the anchor pair is a ground-truth match, else 0."""
    t = gt.match_set()
    return np.array(
        [
            1.0 if (int(i), int(j)) in t else 0.0
            for i, j in zip(anchors.source_indices, anchors.target_indices)
        ]
    ).reshape(-1, 1)


def anchor_labels_geometric(anchors, source_keypoints, target_keypoints, warp, tau=3.0):
    """1 where the warped source keypoint lands within tau px of the target."""
    src = source_keypoints.positions[anchors.source_indices]
    tgt = target_keypoints.positions[anchors.target_indices]
    dist = np.linalg.norm(warp.apply(src) - tgt, axis=1)
    return (dist < tau).astype(np.float64).reshape(-1, 1)


def anchor_unit_loss(logits, labels):
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 labels."""
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 1)
    k = logits.shape[0] if logits.shape else len(logits)
    if len(labels) != k:
        raise LengthMismatch(f"{k} logits vs {len(labels)} labels")
    return ad.mean_all(ad.bce_with_logits(logits, labels))


def total_loss(l_m, unit_losses, alpha):
    if not unit_losses:
        raise ValueError("need at least one unit loss")
    acc = unit_losses[0]
    for ul in unit_losses[1:]:
        acc = ad.add(acc, ul)
    return ad.add(l_m, ad.scale(acc, alpha))
