"""Fuse raw descriptors with keypoint geometry into c-wide primal features.

F_i = desc_i @ W_desc + MLP([x_i, y_i, score_i]); the MLP input layout is
fixed at three channels, with the score channel forced to 1.0 when score
fusion is disabled, so toggling the flag never changes parameter shapes.
"""

import numpy as np

from . import autodiff as ad
from .errors import ShapeMismatch


def normalized_positions(keypoints, frame, origin=(0.0, 0.0)):
    """Center on the frame and divide by half its larger side -> [-1, 1]."""
    w, h = frame
    center = np.asarray(origin, dtype=np.float64) + np.array([w, h]) / 2.0
    return (keypoints.positions - center) / (max(w, h) / 2.0)


def encode(keypoints, descriptors, enc, frame=(640, 480), origin=(0.0, 0.0),
           include_score=True, normalize=True):
    """Encode one image side; returns a (count, c) Tensor.

    enc is an EncoderParams whose leaves are Tensors (see params.bind), so
    the output stays differentiable when those live on a tape.
    """
    if keypoints.count != descriptors.count:
        raise ShapeMismatch(
            f"{keypoints.count} keypoints vs {descriptors.count} descriptors"
        )
    if descriptors.d_in != enc.desc_proj.shape[0]:
        raise ShapeMismatch(
            f"descriptor width {descriptors.d_in} vs projection {enc.desc_proj.shape}"
        )
    pos = normalized_positions(keypoints, frame, origin) if normalize \
        else np.array(keypoints.positions)
    score = keypoints.scores if include_score else np.ones(keypoints.count)
    geo = np.column_stack([pos, score])
    hidden = ad.relu(ad.linear(ad.Tensor(geo), enc.mlp_w1, enc.mlp_b1))
    pos_term = ad.linear(hidden, enc.mlp_w2, enc.mlp_b2)
    desc_term = ad.linear(ad.Tensor(descriptors.matrix), enc.desc_proj)
    return ad.add(desc_term, pos_term)
