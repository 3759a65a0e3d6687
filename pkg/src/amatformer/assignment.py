"""Similarity scoring, dustbin augmentation, Sinkhorn, match extraction.

Sinkhorn runs in the log domain against marginals (1,...,1, m) over rows
and (1,...,1, n) over columns: every real point carries unit mass, each
dustbin absorbs the whole other side. Column scaling happens first and row
scaling second inside each iteration, so real row sums hit 1 (up to
rounding) after any whole number of iterations.
"""

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Correspondences
from .errors import ShapeMismatch


def bilinear_similarity(y_s, y_t, w, mode="weighted"):
    """S(i, j) = y_s(i) W y_t(j)^T, or plain cosine similarity (W unused)."""
    if mode == "cosine":
        return ad.matmul(ad.l2_normalize_rows(y_s), ad.transpose(ad.l2_normalize_rows(y_t)))
    if mode != "weighted":
        raise ValueError(f"unknown metric mode {mode!r}")
    return ad.matmul(ad.matmul(y_s, w), ad.transpose(y_t))


def augment_dustbin(s, z):
    return ad.pad_dustbin(s, z)


def sinkhorn(s_aug, iters):
    """Log-domain alternating normalization; returns the exp'd plan on-tape."""
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    n1, m1 = (s_aug.shape if isinstance(s_aug, Tensor) else np.shape(s_aug))
    n, m = n1 - 1, m1 - 1
    if n < 1 or m < 1:
        raise ShapeMismatch(f"augmented matrix too small: {(n1, m1)}")
    log_a = np.zeros((n1, 1))
    log_a[n, 0] = np.log(m)
    log_b = np.zeros((1, m1))
    log_b[0, m] = np.log(n)
    log_a, log_b = Tensor(log_a), Tensor(log_b)
    u = Tensor(np.zeros((n1, 1)))
    v = Tensor(np.zeros((1, m1)))
    for _ in range(iters):
        v = ad.sub(log_b, ad.logsumexp_cols(ad.add(s_aug, u)))
        u = ad.sub(log_a, ad.logsumexp_rows(ad.add(s_aug, v)))
    return ad.exp(ad.add(ad.add(s_aug, u), v))


def extract_matches(plan, threshold=0.2):
    """Mutual strict-argmax matches with confidence >= threshold.

    Dustbin row/column compete in the argmax but never form matches.
    """
    v = plan.value if isinstance(plan, Tensor) else np.asarray(plan)
    n, m = v.shape[0] - 1, v.shape[1] - 1
    row_best = v.argmax(axis=1)
    col_best = v.argmax(axis=0)
    row_max = v.max(axis=1)
    col_max = v.max(axis=0)
    row_strict = (v == row_max[:, None]).sum(axis=1) == 1
    col_strict = (v == col_max[None, :]).sum(axis=0) == 1
    pairs, conf = [], []
    for i in range(n):
        j = row_best[i]
        if (
            j < m
            and col_best[j] == i
            and row_strict[i]
            and col_strict[j]
            and v[i, j] >= threshold
        ):
            pairs.append((i, j))
            conf.append(v[i, j])
    return Correspondences(np.array(pairs, dtype=np.int64).reshape(-1, 2), np.array(conf))
