"""Synthetic matching problems with exact ground truth.

Source keypoints are sampled uniformly in the frame; target inliers are the
warped sources plus pixel noise. Descriptors follow a shared-latent model:
each inlier pair draws one unit vector and each side re-normalizes
latent + independent Gaussian noise, so desc_noise_sigma is the difficulty
dial. Outliers get fresh positions and fresh descriptors. Both sides are
shuffled so index order carries no signal.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .data import (
    DescriptorSet,
    GroundTruth,
    KeypointSet,
    MatchProblem,
    atomic_write_bytes,
    read_features,
    write_features,
)
from .errors import InvalidWarp


@dataclass(frozen=True)
class Warp:
    """Planar affine map p -> A p + t, applied row-wise to (k, 2) positions."""

    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        a = np.array(self.matrix, dtype=np.float64)
        t = np.array(self.offset, dtype=np.float64).reshape(2)
        if a.shape != (2, 2):
            raise InvalidWarp(f"linear part must be 2x2, got {a.shape}")
        if not (np.isfinite(a).all() and np.isfinite(t).all()):
            raise InvalidWarp("warp parameters contain NaN/Inf")
        if abs(np.linalg.det(a)) < 1e-9:
            raise InvalidWarp(f"singular linear part, det = {np.linalg.det(a):.3g}")
        a.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "matrix", a)
        object.__setattr__(self, "offset", t)

    def apply(self, positions):
        return np.asarray(positions, dtype=np.float64) @ self.matrix.T + self.offset

    @staticmethod
    def identity():
        return Warp(np.eye(2), np.zeros(2))

    @staticmethod
    def similarity(scale, angle, tx, ty):
        c, s = np.cos(angle), np.sin(angle)
        return Warp(scale * np.array([[c, -s], [s, c]]), np.array([tx, ty]))


def random_similarity(rng, scale_range=(0.9, 1.1), angle_range=(-0.2, 0.2),
                      max_translation=32.0):
    """Draw a similarity warp; ranges are deliberately gentle so warped points
    mostly stay inside the frame."""
    return Warp.similarity(
        scale=rng.uniform(*scale_range),
        angle=rng.uniform(*angle_range),
        tx=rng.uniform(-max_translation, max_translation),
        ty=rng.uniform(-max_translation, max_translation),
    )


def _unit_rows(m):
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def generate_problem(n_inliers, n_outliers_source=0, n_outliers_target=0,
                     noise_sigma=0.0, desc_noise_sigma=0.0, warp=None, seed=0,
                     d_in=32, frame=(640, 480)):
    """Build a (MatchProblem, GroundTruth) pair.

    seed may be an int or an existing numpy Generator (handed through
    unchanged, which lets a caller chain several draws off one stream).
    """
    if n_inliers < 1:
        raise ValueError(f"need at least one inlier, got {n_inliers}")
    if warp is None:
        warp = Warp.identity()
    rng = np.random.default_rng(seed)
    w, h = frame

    src_inlier = rng.uniform((0.0, 0.0), (float(w), float(h)), (n_inliers, 2))
    tgt_inlier = warp.apply(src_inlier) + rng.normal(0.0, noise_sigma, (n_inliers, 2))

    latent = _unit_rows(rng.normal(size=(n_inliers, d_in)))
    desc_s_in = _unit_rows(latent + rng.normal(0.0, desc_noise_sigma, latent.shape))
    desc_t_in = _unit_rows(latent + rng.normal(0.0, desc_noise_sigma, latent.shape))

    src_out = rng.uniform((0.0, 0.0), (float(w), float(h)), (n_outliers_source, 2))
    tgt_out = rng.uniform((0.0, 0.0), (float(w), float(h)), (n_outliers_target, 2))
    desc_s_out = _unit_rows(rng.normal(size=(n_outliers_source, d_in)))
    desc_t_out = _unit_rows(rng.normal(size=(n_outliers_target, d_in)))

    n = n_inliers + n_outliers_source
    m = n_inliers + n_outliers_target
    pos_s = np.concatenate([src_inlier, src_out])
    pos_t = np.concatenate([tgt_inlier, tgt_out])
    desc_s = np.concatenate([desc_s_in, desc_s_out])
    desc_t = np.concatenate([desc_t_in, desc_t_out])
    scores_s = rng.uniform(0.0, 1.0, n)
    scores_t = rng.uniform(0.0, 1.0, m)

    # shuffle each side; inv[i] is where old index i landed
    order_s, order_t = rng.permutation(n), rng.permutation(m)
    inv_s, inv_t = np.argsort(order_s), np.argsort(order_t)

    problem = MatchProblem(
        source_keypoints=KeypointSet(pos_s[order_s], scores_s[order_s]),
        source_descriptors=DescriptorSet(desc_s[order_s]),
        target_keypoints=KeypointSet(pos_t[order_t], scores_t[order_t]),
        target_descriptors=DescriptorSet(desc_t[order_t]),
    )
    gt = GroundTruth(
        matches=np.stack([inv_s[:n_inliers], inv_t[:n_inliers]], axis=1),
        unmatched_source=np.sort(inv_s[n_inliers:]),
        unmatched_target=np.sort(inv_t[n_inliers:]),
    )
    gt.check_partition(n, m)
    return problem, gt


def random_problem(cfg, seed):
    """Config-driven generation with a freshly drawn similarity warp.

    Returns (problem, gt, warp); the warp is needed for geometric anchor
    labels during training.
    """
    rng = np.random.default_rng(seed)
    warp = random_similarity(rng)
    problem, gt = generate_problem(
        n_inliers=cfg.n_inliers,
        n_outliers_source=cfg.n_outliers_source,
        n_outliers_target=cfg.n_outliers_target,
        noise_sigma=cfg.noise_sigma,
        desc_noise_sigma=cfg.desc_noise_sigma,
        warp=warp,
        seed=rng,
        d_in=cfg.d_in,
        frame=cfg.frame,
    )
    return problem, gt, warp


def ground_truth_to_json(gt):
    return json.dumps(
        {
            "T": [[int(i), int(j)] for i, j in gt.matches],
            "U_s": [int(i) for i in gt.unmatched_source],
            "U_t": [int(j) for j in gt.unmatched_target],
        },
        indent=0,
    )


def ground_truth_from_json(text):
    doc = json.loads(text)
    return GroundTruth(
        matches=np.array(doc["T"], dtype=np.int64).reshape(-1, 2),
        unmatched_source=np.array(doc["U_s"], dtype=np.int64),
        unmatched_target=np.array(doc["U_t"], dtype=np.int64),
    )


def write_problem(directory, stem, problem, gt):
    """Export one problem as two feature files plus a ground-truth sidecar."""
    src = os.path.join(directory, f"{stem}_source.amft")
    tgt = os.path.join(directory, f"{stem}_target.amft")
    side = os.path.join(directory, f"{stem}_gt.json")
    write_features(src, problem.source_keypoints, problem.source_descriptors)
    write_features(tgt, problem.target_keypoints, problem.target_descriptors)
    atomic_write_bytes(side, (ground_truth_to_json(gt) + "\n").encode("utf-8"))
    return src, tgt, side


def read_problem(directory, stem):
    kps_s, desc_s = read_features(os.path.join(directory, f"{stem}_source.amft"))
    kps_t, desc_t = read_features(os.path.join(directory, f"{stem}_target.amft"))
    with open(os.path.join(directory, f"{stem}_gt.json"), encoding="utf-8") as fh:
        gt = ground_truth_from_json(fh.read())
    problem = MatchProblem(
        source_keypoints=kps_s,
        source_descriptors=desc_s,
        target_keypoints=kps_t,
        target_descriptors=desc_t,
    )
    return problem, gt
